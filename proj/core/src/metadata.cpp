#include "kmgpt/metadata.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <json.hpp>

#include "kmgpt/errors.hpp"

namespace kmgpt::mmpu {

using nlohmann::json;

namespace {

[[noreturn]] void schema(const std::string& msg) {
  throw Error(ErrorCode::MetadataSchemaError, msg);
}

void exact_keys(const json& j, const std::set<std::string>& keys, const std::string& where) {
  if (!j.is_object()) schema(where + ": expected an object");
  for (const auto& k : keys)
    if (!j.contains(k)) schema(where + ": missing field '" + k + "'");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!keys.count(it.key())) schema(where + ": unexpected field '" + it.key() + "'");
}

double number(const json& j, const std::string& key) {
  const auto& v = j.at(key);
  if (!v.is_number()) schema("field '" + key + "' must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) schema("field '" + key + "' must be finite");
  return d;
}

int integer(const json& v, const std::string& key) {
  if (!v.is_number_integer()) schema("field '" + key + "' must be an integer");
  return v.get<int>();
}

std::string string(const json& v, const std::string& key) {
  if (!v.is_string()) schema("field '" + key + "' must be a string");
  return v.get<std::string>();
}

json parse(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    schema(std::string("not valid JSON: ") + e.what());
  }
}

[[noreturn]] void conflict(const std::string& msg) { throw Error(ErrorCode::MetadataConflict, msg); }

}  // namespace

PlotMetadata parse_metadata(const std::string& text) {
  const json j = parse(text);
  exact_keys(j,
             {"x_start", "x_end", "x_increment", "y_start", "y_end", "y_increment", "num_curves",
              "groups", "risk_table", "time_unit"},
             "metadata");
  PlotMetadata m;
  m.x_start = number(j, "x_start");
  m.x_end = number(j, "x_end");
  m.x_increment = number(j, "x_increment");
  m.y_start = number(j, "y_start");
  m.y_end = number(j, "y_end");
  m.y_increment = number(j, "y_increment");
  m.num_curves = integer(j.at("num_curves"), "num_curves");
  m.time_unit = string(j.at("time_unit"), "time_unit");
  if (!j.at("groups").is_array()) schema("field 'groups' must be an array");
  for (const auto& g : j.at("groups")) {
    exact_keys(g, {"label", "color_hint"}, "groups[]");
    GroupInfo gi;
    gi.label = string(g.at("label"), "label");
    if (!g.at("color_hint").is_null()) gi.color_hint = string(g.at("color_hint"), "color_hint");
    m.groups.push_back(std::move(gi));
  }
  const auto& rt = j.at("risk_table");
  exact_keys(rt, {"anchor_times", "counts"}, "risk_table");
  if (!rt.at("anchor_times").is_array()) schema("field 'anchor_times' must be an array");
  for (const auto& a : rt.at("anchor_times")) {
    if (!a.is_number()) schema("anchor_times entries must be numbers");
    m.risk_table.anchor_times.push_back(a.get<double>());
  }
  if (!rt.at("counts").is_array()) schema("field 'counts' must be an array");
  for (const auto& row : rt.at("counts")) {
    if (!row.is_array()) schema("counts rows must be arrays");
    std::vector<int> r;
    for (const auto& c : row) r.push_back(integer(c, "counts"));
    m.risk_table.counts.push_back(std::move(r));
  }
  return m;
}

std::string metadata_to_json(const PlotMetadata& m, int indent) {
  json groups = json::array();
  for (const auto& g : m.groups)
    groups.push_back({{"label", g.label},
                      {"color_hint", g.color_hint ? json(*g.color_hint) : json(nullptr)}});
  json j = {{"x_start", m.x_start},
            {"x_end", m.x_end},
            {"x_increment", m.x_increment},
            {"y_start", m.y_start},
            {"y_end", m.y_end},
            {"y_increment", m.y_increment},
            {"num_curves", m.num_curves},
            {"groups", groups},
            {"risk_table", {{"anchor_times", m.risk_table.anchor_times},
                            {"counts", m.risk_table.counts}}},
            {"time_unit", m.time_unit}};
  return j.dump(indent);
}

void check_risk_table(const RiskTable& r) {
  for (std::size_t i = 1; i < r.anchor_times.size(); ++i)
    if (!(r.anchor_times[i] > r.anchor_times[i - 1]))
      throw Error(ErrorCode::InvalidRiskTable, "anchor times must be strictly ascending");
  for (std::size_t g = 0; g < r.counts.size(); ++g) {
    const auto& row = r.counts[g];
    if (row.size() != r.anchor_times.size())
      throw Error(ErrorCode::InvalidRiskTable,
                  "row " + std::to_string(g) + " length differs from anchor count");
    if (row.empty() || row[0] < 1)
      throw Error(ErrorCode::InvalidRiskTable, "first count must be at least 1");
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (row[i] < 0) throw Error(ErrorCode::InvalidRiskTable, "negative count");
      if (i > 0 && row[i] > row[i - 1])
        throw Error(ErrorCode::InvalidRiskTable,
                    "counts increase in time in row " + std::to_string(g));
    }
  }
}

void check_invariants(const PlotMetadata& m) {
  if (!(m.x_end > m.x_start)) conflict("x_end must exceed x_start");
  if (!(m.y_end > m.y_start)) conflict("y_end must exceed y_start");
  if (!(m.x_increment > 0) || !(m.y_increment > 0)) conflict("increments must be positive");
  if (m.x_increment > m.x_end - m.x_start + 1e-9 || m.y_increment > m.y_end - m.y_start + 1e-9)
    conflict("increment larger than the axis range");
  if (m.num_curves < 1) conflict("num_curves must be at least 1");
  if (static_cast<std::size_t>(m.num_curves) != m.groups.size())
    conflict("num_curves differs from the number of groups");
  if (m.risk_table.counts.size() != m.groups.size())
    conflict("risk table rows differ from the number of groups");
  if (m.risk_table.anchor_times.empty()) conflict("risk table has no anchor times");
  try {
    check_risk_table(m.risk_table);
  } catch (const Error& e) {
    conflict(e.what());
  }
  const double tol = 1e-9 * std::max(1.0, std::abs(m.x_end));
  if (m.risk_table.anchor_times.front() < m.x_start - tol ||
      m.risk_table.anchor_times.back() > m.x_end + tol)
    conflict("risk anchors outside the x range");
}

ValidationReport parse_validation(const std::string& text) {
  const json j = parse(text);
  exact_keys(j, {"ok", "issues"}, "validation");
  if (!j.at("ok").is_boolean()) schema("field 'ok' must be a boolean");
  if (!j.at("issues").is_array()) schema("field 'issues' must be an array");
  static const std::set<std::string> components = {"axis-labels", "ticks", "curves", "legend",
                                                   "risk-table"};
  ValidationReport r;
  r.ok = j.at("ok").get<bool>();
  for (const auto& i : j.at("issues")) {
    exact_keys(i, {"component", "message", "suggestion"}, "issues[]");
    ValidationIssue vi{string(i.at("component"), "component"), string(i.at("message"), "message"),
                       string(i.at("suggestion"), "suggestion")};
    if (!components.count(vi.component)) schema("unknown component '" + vi.component + "'");
    r.issues.push_back(std::move(vi));
  }
  if (r.ok != r.issues.empty()) schema("'ok' must be true exactly when 'issues' is empty");
  return r;
}

std::string validation_to_json(const ValidationReport& r) {
  json issues = json::array();
  for (const auto& i : r.issues)
    issues.push_back({{"component", i.component}, {"message", i.message}, {"suggestion", i.suggestion}});
  return json{{"ok", r.ok}, {"issues", issues}}.dump(2);
}

}  // namespace kmgpt::mmpu
