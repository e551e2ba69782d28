#pragma once

#include <optional>
#include <string>
#include <vector>

namespace kmgpt::recon {

struct IPDRecord {
  double time = 0;
  int status = 0;  // 1 = event, 0 = censored
  std::string group;

  bool operator==(const IPDRecord&) const = default;
};

/// Right-continuous product-limit step function.
struct SurvivalCurve {
  std::vector<double> step_times;
  std::vector<double> probabilities;  // S just after each step
  std::vector<int> at_risk;           // risk set just before each step
  std::vector<int> events;
  std::string group;

  double evaluate(double t) const;
};

/// Product-limit estimate; at tied times events are removed before censorings.
SurvivalCurve km_estimate(const std::vector<IPDRecord>& records);

struct MedianEstimate {
  std::optional<double> median;  // nullopt = not reached
  std::optional<double> ci_low;
  std::optional<double> ci_high;
};

/// Median with a 95% interval from Greenwood variance on the log(-log S) scale.
MedianEstimate median_survival(const SurvivalCurve& curve, double z = 1.959963984540054);

/// Median of a step function alone (first step with S <= 0.5).
std::optional<double> curve_median(const SurvivalCurve& curve);

/// Number of records with time >= t.
int number_at_risk(const std::vector<IPDRecord>& records, double t);

std::vector<IPDRecord> filter_group(const std::vector<IPDRecord>& records, const std::string& group);
std::vector<std::string> group_names(const std::vector<IPDRecord>& records);

std::string ipd_to_csv(const std::vector<IPDRecord>& records);
/// Reads a CSV with columns time, status and a group column (default "group").
std::vector<IPDRecord> ipd_from_csv(const std::string& text, const std::string& group_col = "group");

}  // namespace kmgpt::recon
