#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kmgpt/metadata.hpp"
#include "kmgpt/survival.hpp"

namespace kmgpt::recon {

/// Ascending (t, s) points read off a plot, s non-increasing.
struct DigitizedCurve {
  std::vector<std::pair<double, double>> points;
  std::string group;
};

/// One risk-table row.
struct RiskRow {
  std::vector<double> anchor_times;
  std::vector<int> counts;
};

struct ReconstructOptions {
  int max_iterations = 30;
  std::optional<int> total_events;
};

struct IntervalDiagnostic {
  double start = 0, end = 0;
  int at_risk_start = 0, at_risk_end = 0;
  int events = 0, censored = 0;
  int iterations = 0;
  bool converged = false;   // exact match reached by iteration alone
  bool reconciled = false;  // counts forced after a cycle or the iteration cap
};

struct ReconstructionResult {
  std::vector<IPDRecord> records;
  bool converged = false;  // every interval converged by iteration
  int iterations = 0;
  std::vector<int> recomputed_at_risk;  // at each anchor
  std::vector<IntervalDiagnostic> intervals;
  std::string diagnostic;
};

/// Risk-table anchored reconstruction of individual records: per interval the
/// censoring count is iterated until the re-estimated risk set at the next
/// anchor equals the reported count; events sit at digitized step times and
/// censorings are spread uniformly over the interval.
ReconstructionResult reconstruct_ipd(const DigitizedCurve& curve, const RiskRow& risk,
                                     const ReconstructOptions& opts = {});

/// Raises InvalidRiskTable on descending anchors or increasing counts.
void check_risk_row(const RiskRow& risk);

struct OverlayResult {
  double max_gap = 0;
  bool pass = false;
};

OverlayResult overlay_check(const DigitizedCurve& original, const std::vector<IPDRecord>& ipd,
                            double tolerance = 0.02);

}  // namespace kmgpt::recon
