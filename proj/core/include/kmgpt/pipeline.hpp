#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "kmgpt/curve_extract.hpp"
#include "kmgpt/errors.hpp"
#include "kmgpt/image_prep.hpp"
#include "kmgpt/metadata.hpp"
#include "kmgpt/mmpu.hpp"
#include "kmgpt/plot_geometry.hpp"
#include "kmgpt/raster.hpp"
#include "kmgpt/reconstruct.hpp"
#include "kmgpt/synth.hpp"

namespace kmgpt::pipeline {

enum class ProviderKind { Live, Sidecar, Scripted };

struct PipelineConfig {
  ProviderKind provider = ProviderKind::Sidecar;
  std::optional<std::filesystem::path> sidecar_path;
  std::optional<std::string> sidecar_text;  // inline alternative to the path
  std::shared_ptr<mmpu::MetadataProvider> scripted;
  mmpu::LiveConfig live;
  std::uint64_t seed = 0;
  double overlay_tolerance = 0.02;
  bool force = false;  // continue past a failed InputGuard verdict
  bool ocr_risk_table = true;
  /// Up-weight s and l x100 when clustering curve pixels. Off by default:
  /// on antialiased strokes it splits stroke cores from edges, not colours.
  bool cluster_upweight = false;
  image::EnhanceOptions enhance;
  mmpu::RetryPolicy retry;

  /// Throws InvalidArgument when the chosen provider lacks its inputs.
  void validate() const;
};

std::unique_ptr<mmpu::MetadataProvider> make_provider(const PipelineConfig& config);

/// A stage failure. Keeps the original error code; the message names the stage.
class StageError : public Error {
 public:
  StageError(std::string stage, ErrorCode code, const std::string& message);
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

struct GroupResult {
  std::string group;
  recon::DigitizedCurve curve;
  recon::ReconstructionResult reconstruction;
  recon::OverlayResult overlay;
};

struct PipelineResult {
  RasterImage prepped;
  RasterImage overlay;
  mmpu::ValidationReport validation;
  geometry::AxisGeometry geometry;
  mmpu::PlotMetadata metadata;
  std::vector<curves::CurveTrace> traces;
  std::vector<GroupResult> groups;
  std::vector<recon::IPDRecord> ipd;
  std::vector<std::string> warnings;
  bool overlay_pass = false;
  bool converged = false;
  std::string report_json;
};

/// Job-state transitions reported while the pipeline runs:
/// validated, prepared, extracted, reconstructed.
using StateCallback = std::function<void(const std::string& state)>;

/// Full image-to-IPD run. With `out_dir` set, every completed stage leaves its
/// artifact there (00_input.png ... 60_report.json).
PipelineResult run_pipeline(const RasterImage& image, const std::vector<image::RegionMask>& edits,
                            const PipelineConfig& config,
                            const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                            const StateCallback& on_state = {});

/// Reconstructed KM steps in green over the prepared image.
RasterImage render_overlay(const RasterImage& prepped, const geometry::Calibration& cal,
                           const std::vector<std::vector<recon::IPDRecord>>& groups, double y_scale = 1.0);

/// Adapter for the synthetic grid: each case runs end to end with its own
/// rendered sidecar as the metadata provider.
synth::BenchPipeline bench_pipeline(PipelineConfig base = {});

}  // namespace kmgpt::pipeline
