#include "kmgpt/errors.hpp"

namespace kmgpt {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Io: return "Io";
    case ErrorCode::MaskOutOfBounds: return "MaskOutOfBounds";
    case ErrorCode::DegenerateImage: return "DegenerateImage";
    case ErrorCode::NoAxisFound: return "NoAxisFound";
    case ErrorCode::InsufficientTicks: return "InsufficientTicks";
    case ErrorCode::DegenerateTicks: return "DegenerateTicks";
    case ErrorCode::DegenerateAxis: return "DegenerateAxis";
    case ErrorCode::NoCurvePixels: return "NoCurvePixels";
    case ErrorCode::TooFewPixels: return "TooFewPixels";
    case ErrorCode::InsufficientNeighbors: return "InsufficientNeighbors";
    case ErrorCode::UnresolvableOverlap: return "UnresolvableOverlap";
    case ErrorCode::ProviderError: return "ProviderError";
    case ErrorCode::OcrUnavailable: return "OcrUnavailable";
    case ErrorCode::OcrEmpty: return "OcrEmpty";
    case ErrorCode::MetadataSchemaError: return "MetadataSchemaError";
    case ErrorCode::MetadataConflict: return "MetadataConflict";
    case ErrorCode::ValidationFailed: return "ValidationFailed";
    case ErrorCode::InvalidRiskTable: return "InvalidRiskTable";
    case ErrorCode::InvalidHorizon: return "InvalidHorizon";
    case ErrorCode::GridTooShort: return "GridTooShort";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::SamplerFailure: return "SamplerFailure";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

MaskError::MaskError(std::size_t index, const std::string& message)
    : Error(ErrorCode::MaskOutOfBounds, "mask " + std::to_string(index) + ": " + message),
      index_(index) {}

}  // namespace kmgpt
