#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "kmgpt/metadata.hpp"
#include "kmgpt/plot_geometry.hpp"
#include "kmgpt/raster.hpp"
#include "kmgpt/survival.hpp"

namespace kmgpt::synth {

enum class Level { L, M, H };

struct NormalParam {
  double mu = 0, sigma = 0;
};

/// One of the 27 (sample size, median survival, censoring) level combinations.
struct GridCell {
  Level size = Level::M, survival = Level::M, censor = Level::M;

  std::string code() const;  // e.g. "MHL"
  static GridCell parse(const std::string& code);
  static std::vector<GridCell> all();

  NormalParam size_param() const;
  NormalParam median_param() const;
  NormalParam censor_param() const;
};

struct SynthConfig {
  int n = 2;
  double lambda = 1;
  double eta = 0;
  double tau = 1;
  std::uint64_t seed = 0;

  double median() const;
};

struct SampleOptions {
  double sigma_scale = 1.0;    // 0 gives the level means exactly
  double tau_factor = 1.5;     // tau = factor * median * multiplier
  double tau_multiplier = 2.0;
};

SynthConfig sample_config(const GridCell& cell, std::mt19937_64& rng, const SampleOptions& opts = {});

struct Cohort {
  std::vector<recon::IPDRecord> records;
  std::vector<double> latent_times;   // T_i
  std::vector<bool> selected;         // drawn for random censoring
  std::vector<bool> administrative;   // censored at tau
};

/// Exponential event times; round(n * eta) subjects drawn without replacement
/// get C ~ U[0, min(T, tau)]; anyone still under observation at tau is
/// censored there.
Cohort generate_cohort(const SynthConfig& config, std::mt19937_64& rng, const std::string& group = "A");
std::vector<recon::IPDRecord> generate_ipd(const SynthConfig& config, std::mt19937_64& rng,
                                           const std::string& group = "A");

struct RenderStyle {
  int width = 1000;
  int plot_left = 110, plot_right = 960, plot_top = 30, plot_bottom = 470;
  int axis_thickness = 2;
  int curve_thickness = 2;
  double font_scale = 0.55;
  std::vector<Rgb> palette{{220, 20, 20}, {0, 90, 160}, {20, 140, 40}, {150, 60, 170}};
  std::string time_unit = "months";
  bool risk_table = true;
  bool censor_marks = false;
  std::optional<double> x_end;        // default: from the largest time
  std::optional<double> x_increment;
};

struct RenderedPlot {
  RasterImage image;
  mmpu::PlotMetadata metadata;
  mmpu::RiskTable risk;
  std::vector<recon::SurvivalCurve> truth;
  geometry::AxisGeometry geometry;  // exact pixel frame used for drawing
};

/// Picks a readable tick step: at least span / 7 from 1, 2, 3, 4, 5, 6, 10, 12, ...
double nice_increment(double span);

RenderedPlot render_km_plot(const std::vector<std::vector<recon::IPDRecord>>& groups,
                            const RenderStyle& style = {});

/// Sidecar JSON for a rendered plot (metadata plus ground-truth geometry).
std::string sidecar_json(const RenderedPlot& plot);

struct MetricsReport {
  std::vector<std::pair<double, double>> ae_series;  // (normalized time, |dS|)
  double iae = 0;
  std::optional<double> mos_ae;  // nullopt = not comparable
  double median_ae = 0;
  bool success = true;
};

MetricsReport score(const recon::SurvivalCurve& truth, const recon::SurvivalCurve& recon, double horizon,
                    int grid_points = 1000);

/// Trapezoidal integral of |a - b| over [0, 1] on a uniform grid (the IAE).
double iae_on_grid(const std::vector<double>& a, const std::vector<double>& b);

std::uint64_t derive_seed(std::uint64_t master, std::size_t cell, std::size_t rep);

struct BenchCase {
  GridCell cell;
  int rep = 0;
  std::uint64_t seed = 0;
  SynthConfig config;
  std::vector<recon::IPDRecord> truth_ipd;
  RenderedPlot plot;
};

struct BenchOutput {
  std::vector<recon::IPDRecord> ipd;
  bool converged = true;
};

using BenchPipeline = std::function<BenchOutput(const BenchCase&)>;

struct RunOutcome {
  std::string cell;
  int rep = 0;
  bool success = false;
  MetricsReport metrics;
  bool converged = false;
  bool anchors_match = false;  // recounted at-risk equals the rendered table
  std::string error;
  double seconds = 0;
};

struct GridOptions {
  std::vector<GridCell> cells = GridCell::all();
  int reps = 2;
  std::uint64_t master_seed = 2024;
  int threads = 0;  // 0 = hardware concurrency
  SampleOptions sampling;
  RenderStyle style;
  std::optional<std::filesystem::path> out_dir;  // writes fixtures and summaries
};

BenchCase make_case(const GridCell& cell, std::size_t cell_index, int rep, const GridOptions& opts);

struct GridSummary {
  std::vector<RunOutcome> runs;
  int successes = 0;
  double median_iae = 0;
  double median_ae = 0;
  double median_mos_ae = 0;
  double anchor_match_rate = 0;  // among converged successful runs
};

GridSummary run_grid(const BenchPipeline& pipeline, const GridOptions& opts);

std::string summary_csv(const GridSummary& s);
std::string cell_summary_csv(const GridSummary& s);

double median_of(std::vector<double> v);
double quantile_of(std::vector<double> v, double q);

}  // namespace kmgpt::synth
