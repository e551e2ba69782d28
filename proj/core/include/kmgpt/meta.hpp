#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kmgpt/survival.hpp"

namespace kmgpt::meta {

/// Cut points 0 = t_0 < t_1 < ... < t_J; interval j is (t_{j-1}, t_j].
struct IntervalGrid {
  std::vector<double> cuts;

  int intervals() const { return static_cast<int>(cuts.size()) - 1; }
  double end() const { return cuts.back(); }
  double width(int j) const { return cuts[j + 1] - cuts[j]; }
  /// Zero-based interval holding t (t = 0 maps to the first interval).
  int index_of(double t) const;
};

/// Validates and wraps explicit cut points (a leading 0 is added if missing).
IntervalGrid make_grid(std::vector<double> cuts);

/// J intervals with cuts at event-time quantiles of the pooled data; the last
/// cut is the largest observed time. Ties collapse, so fewer intervals can result.
IntervalGrid auto_grid(const std::vector<std::vector<recon::IPDRecord>>& studies, int J = 8);

struct StudySufficientStats {
  std::vector<std::vector<double>> d;  // [study][interval] events
  std::vector<std::vector<double>> E;  // [study][interval] exposure

  int studies() const { return static_cast<int>(d.size()); }
  int intervals() const { return d.empty() ? 0 : static_cast<int>(d.front().size()); }
};

StudySufficientStats bin_ipd(const std::vector<std::vector<recon::IPDRecord>>& studies,
                             const IntervalGrid& grid);

struct MetaParams {
  std::vector<std::vector<double>> alpha;  // [study][interval] log-hazards
  std::vector<double> a;                   // pooled log-hazards
  std::vector<double> mu;                  // AR(1) latent means
  std::vector<double> sigma;               // between-study SD per interval
  double sigma_a = 0.2;
  double tau_ar = 1.0;
  double psi = 0.0;

  double phi() const;
};

struct PriorConfig {
  double sigma_scale = 0.2;    // half-normal scale for sigma_j
  double sigma_a_scale = 0.2;
  double tau_scale = 1.0;
  double psi_sd = 0.75;
  /// Drops the alpha | a layer so each alpha has a flat prior. Used for the
  /// conjugate check, where exp(alpha) is then exactly Gamma(d, E).
  bool flat_alpha = false;
};

/// Log density in the natural parameters (SDs on their own scale).
/// Throws NonFiniteInput for NaN/inf parameters or non-positive SDs.
double log_posterior(const MetaParams& p, const StudySufficientStats& stats, const IntervalGrid& grid,
                     const PriorConfig& prior = {});

/// Same target on the sampler's scale: SDs as logs, so each adds log(sd).
double log_posterior_unconstrained(const MetaParams& p, const StudySufficientStats& stats,
                                   const IntervalGrid& grid, const PriorConfig& prior = {});

struct SamplerConfig {
  int chains = 4;
  int warmup = 2000;
  int draws = 5000;
  std::uint64_t seed = 1;
  double target_accept = 0.3;
  int threads = 0;  // 0 = one per chain
  PriorConfig prior;
};

struct ScalarDiagnostic {
  std::string name;
  double rhat = 1;
  double ess = 0;
};

struct MetaPosterior {
  std::vector<MetaParams> draws;  // chain-major: chain c occupies [c*draws, (c+1)*draws)
  std::vector<ScalarDiagnostic> diagnostics;
  std::vector<double> acceptance;  // mean post-warmup acceptance per chain
  SamplerConfig config;
  double seconds = 0;

  double max_rhat() const;
  double min_ess() const;
};

MetaParams initial_params(const StudySufficientStats& stats, const PriorConfig& prior = {});

MetaPosterior sample_posterior(const StudySufficientStats& stats, const IntervalGrid& grid,
                               const SamplerConfig& config = {});

/// Flattened scalar view of a draw, in the order of scalar_names().
std::vector<double> flatten(const MetaParams& p);
std::vector<std::string> scalar_names(int studies, int intervals);

/// Split R-hat over equal-length chains.
double split_rhat(const std::vector<std::vector<double>>& chains);
/// Multi-chain ESS with Geyer's initial monotone sequence.
double effective_sample_size(const std::vector<std::vector<double>>& chains);

/// S(t) for piecewise-constant log-hazards with partial exposure in the last interval.
double survival_at(const std::vector<double>& log_hazard, const IntervalGrid& grid, double t);
/// Integral of survival_at over [0, horizon], closed form per interval.
double rmst_closed_form(const std::vector<double>& log_hazard, const IntervalGrid& grid, double horizon);
/// First t with S(t) <= 0.5, or nullopt if the curve stays above within the grid.
std::optional<double> median_time(const std::vector<double>& log_hazard, const IntervalGrid& grid);

struct Band {
  double t = 0, median = 1, lo = 1, hi = 1;
};

struct SurvivalBands {
  std::vector<Band> pooled;
  std::vector<std::vector<Band>> studies;
};

SurvivalBands pooled_survival(const MetaPosterior& post, const IntervalGrid& grid,
                              const std::vector<double>& times);

struct RmstSummary {
  double horizon = 0;
  double mean = 0, q025 = 0, q50 = 0, q975 = 0;
  std::vector<double> values;
};

RmstSummary rmst(const MetaPosterior& post, const IntervalGrid& grid, double horizon);

struct PooledMedian {
  std::optional<double> median, lo, hi;  // over draws that reach 0.5
  int reached = 0;
  int not_reached = 0;
};

PooledMedian estimate_pooled_median(const MetaPosterior& post, const IntervalGrid& grid);

std::string draws_csv(const MetaPosterior& post);
std::string bands_csv(const SurvivalBands& bands);

}  // namespace kmgpt::meta
