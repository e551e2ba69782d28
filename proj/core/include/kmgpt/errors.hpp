#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace kmgpt {

/// Failure categories surfaced by the toolkit. Every thrown kmgpt::Error
/// carries one of these so callers can branch without parsing messages.
enum class ErrorCode {
  InvalidArgument,
  Io,
  MaskOutOfBounds,
  DegenerateImage,
  NoAxisFound,
  InsufficientTicks,
  DegenerateTicks,
  DegenerateAxis,
  NoCurvePixels,
  TooFewPixels,
  InsufficientNeighbors,
  UnresolvableOverlap,
  ProviderError,
  OcrUnavailable,
  OcrEmpty,
  MetadataSchemaError,
  MetadataConflict,
  ValidationFailed,
  InvalidRiskTable,
  InvalidHorizon,
  GridTooShort,
  NonFiniteInput,
  SamplerFailure,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// An edit mask that does not fit the image it is applied to.
class MaskError : public Error {
 public:
  MaskError(std::size_t index, const std::string& message);

  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

}  // namespace kmgpt
