#include "kmgpt/survival.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "kmgpt/errors.hpp"

namespace kmgpt::recon {

double SurvivalCurve::evaluate(double t) const {
  const auto it = std::upper_bound(step_times.begin(), step_times.end(), t);
  if (it == step_times.begin()) return 1.0;
  return probabilities[static_cast<std::size_t>(it - step_times.begin()) - 1];
}

SurvivalCurve km_estimate(const std::vector<IPDRecord>& records) {
  SurvivalCurve c;
  if (!records.empty()) c.group = records.front().group;
  std::vector<std::pair<double, int>> v;
  v.reserve(records.size());
  for (const auto& r : records) v.emplace_back(r.time, r.status);
  // Events sort ahead of censorings at equal times.
  std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first < b.first : a.second > b.second;
  });
  double s = 1.0;
  std::size_t i = 0;
  const std::size_t n = v.size();
  while (i < n) {
    const double t = v[i].first;
    int d = 0;
    std::size_t j = i;
    while (j < n && v[j].first == t) {
      d += v[j].second;
      ++j;
    }
    if (d > 0) {
      const int at_risk = static_cast<int>(n - i);
      s *= 1.0 - static_cast<double>(d) / at_risk;
      c.step_times.push_back(t);
      c.probabilities.push_back(s);
      c.at_risk.push_back(at_risk);
      c.events.push_back(d);
    }
    i = j;
  }
  return c;
}

std::optional<double> curve_median(const SurvivalCurve& c) {
  for (std::size_t k = 0; k < c.step_times.size(); ++k)
    if (c.probabilities[k] <= 0.5) return c.step_times[k];
  return std::nullopt;
}

MedianEstimate median_survival(const SurvivalCurve& c, double z) {
  MedianEstimate m;
  m.median = curve_median(c);
  double var = 0;  // Greenwood sum
  for (std::size_t k = 0; k < c.step_times.size(); ++k) {
    const double n = c.at_risk[k], d = c.events[k];
    const double s = c.probabilities[k];
    double lo = 0, hi = 0;
    if (n > d) {
      var += d / (n * (n - d));
      const double ls = std::log(s);
      const double se = std::sqrt(var) / std::abs(ls);
      lo = std::pow(s, std::exp(z * se));
      hi = std::pow(s, std::exp(-z * se));
    }
    if (!m.ci_low && lo <= 0.5) m.ci_low = c.step_times[k];
    if (!m.ci_high && hi <= 0.5) m.ci_high = c.step_times[k];
  }
  return m;
}

int number_at_risk(const std::vector<IPDRecord>& records, double t) {
  return static_cast<int>(
      std::count_if(records.begin(), records.end(), [&](const IPDRecord& r) { return r.time >= t; }));
}

std::vector<IPDRecord> filter_group(const std::vector<IPDRecord>& records, const std::string& group) {
  std::vector<IPDRecord> out;
  for (const auto& r : records)
    if (r.group == group) out.push_back(r);
  return out;
}

std::vector<std::string> group_names(const std::vector<IPDRecord>& records) {
  std::vector<std::string> out;
  for (const auto& r : records)
    if (std::find(out.begin(), out.end(), r.group) == out.end()) out.push_back(r.group);
  return out;
}

std::string ipd_to_csv(const std::vector<IPDRecord>& records) {
  std::string out = "time,status,group\n";
  char buf[64];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%.6f,%d,", r.time, r.status);
    out += buf;
    const bool quote = r.group.find_first_of(",\"\n") != std::string::npos;
    if (quote) {
      out += '"';
      for (char ch : r.group) {
        if (ch == '"') out += '"';
        out += ch;
      }
      out += '"';
    } else {
      out += r.group;
    }
    out += '\n';
  }
  return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> f;
  std::string cur;
  bool q = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (q) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        q = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      q = true;
    } else if (ch == ',') {
      f.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  f.push_back(cur);
  return f;
}

}  // namespace

std::vector<IPDRecord> ipd_from_csv(const std::string& text, const std::string& group_col) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::InvalidArgument, "empty CSV");
  const auto header = split_csv_line(line);
  auto col = [&](const std::string& name) -> int {
    const auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : static_cast<int>(it - header.begin());
  };
  const int ct = col("time"), cs = col("status"), cg = col(group_col);
  if (ct < 0 || cs < 0) throw Error(ErrorCode::InvalidArgument, "CSV needs 'time' and 'status' columns");
  std::vector<IPDRecord> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    const int need = std::max({ct, cs, cg});
    if (static_cast<int>(f.size()) <= need)
      throw Error(ErrorCode::InvalidArgument, "CSV line " + std::to_string(lineno) + " is short");
    IPDRecord r;
    try {
      r.time = std::stod(f[ct]);
      r.status = std::stoi(f[cs]);
    } catch (...) {
      throw Error(ErrorCode::InvalidArgument, "CSV line " + std::to_string(lineno) + " is not numeric");
    }
    if (!std::isfinite(r.time) || r.time < 0 || (r.status != 0 && r.status != 1))
      throw Error(ErrorCode::InvalidArgument, "CSV line " + std::to_string(lineno) + " out of range");
    if (cg >= 0) r.group = f[cg];
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace kmgpt::recon
