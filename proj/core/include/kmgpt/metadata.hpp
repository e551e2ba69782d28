#pragma once

#include <optional>
#include <string>
#include <vector>

namespace kmgpt::mmpu {

struct RiskTable {
  std::vector<double> anchor_times;
  std::vector<std::vector<int>> counts;  // one row per group, aligned to anchor_times

  bool operator==(const RiskTable&) const = default;
};

struct GroupInfo {
  std::string label;
  std::optional<std::string> color_hint;

  bool operator==(const GroupInfo&) const = default;
};

struct PlotMetadata {
  double x_start = 0, x_end = 1, x_increment = 1;
  double y_start = 0, y_end = 1, y_increment = 0.2;
  int num_curves = 0;
  std::vector<GroupInfo> groups;
  RiskTable risk_table;
  std::string time_unit;

  bool operator==(const PlotMetadata&) const = default;
};

/// Strict parse: missing fields, wrong types and unknown keys raise
/// MetadataSchemaError. Does not check invariants.
PlotMetadata parse_metadata(const std::string& json_text);
std::string metadata_to_json(const PlotMetadata& m, int indent = 2);

/// Throws MetadataConflict when an invariant does not hold.
void check_invariants(const PlotMetadata& m);
/// Throws InvalidRiskTable for a malformed table row set.
void check_risk_table(const RiskTable& r);

struct ValidationIssue {
  std::string component;  // axis-labels | ticks | curves | legend | risk-table
  std::string message;
  std::string suggestion;

  bool operator==(const ValidationIssue&) const = default;
};

struct ValidationReport {
  bool ok = true;
  std::vector<ValidationIssue> issues;

  bool operator==(const ValidationReport&) const = default;
};

ValidationReport parse_validation(const std::string& json_text);
std::string validation_to_json(const ValidationReport& r);

}  // namespace kmgpt::mmpu
