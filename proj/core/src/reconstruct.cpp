#include "kmgpt/reconstruct.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "kmgpt/errors.hpp"

namespace kmgpt::recon {

void check_risk_row(const RiskRow& r) {
  if (r.anchor_times.empty() || r.anchor_times.size() != r.counts.size())
    throw Error(ErrorCode::InvalidRiskTable, "anchor and count lengths differ or are empty");
  if (r.counts[0] < 1) throw Error(ErrorCode::InvalidRiskTable, "first count must be at least 1");
  for (std::size_t i = 0; i < r.counts.size(); ++i) {
    if (!std::isfinite(r.anchor_times[i])) throw Error(ErrorCode::InvalidRiskTable, "non-finite anchor");
    if (r.counts[i] < 0) throw Error(ErrorCode::InvalidRiskTable, "negative count");
    if (i > 0 && !(r.anchor_times[i] > r.anchor_times[i - 1]))
      throw Error(ErrorCode::InvalidRiskTable, "anchor times must be strictly ascending");
    if (i > 0 && r.counts[i] > r.counts[i - 1])
      throw Error(ErrorCode::InvalidRiskTable, "risk counts increase in time");
  }
}

namespace {

struct Sim {
  std::vector<int> d;          // events per point
  std::vector<double> cens;    // censoring times
  int n_end = 0;
  double km_end = 1.0;
};

// One pass over an interval: `c` censorings uniformly placed in (lo, hi),
// removed strictly before any event at the same time.
Sim simulate(const std::vector<std::pair<double, double>>& pts, std::size_t first, std::size_t last,
             int n_start, double km_start, int c, double lo, double hi) {
  Sim s;
  s.d.assign(last - first, 0);
  for (int j = 1; j <= c; ++j) s.cens.push_back(lo + j * (hi - lo) / (c + 1));
  int n = n_start;
  double km = km_start;
  std::size_t ci = 0;
  for (std::size_t k = first; k < last; ++k) {
    while (ci < s.cens.size() && s.cens[ci] < pts[k].first && n > 0) {
      --n;
      ++ci;
    }
    if (n <= 0 || km <= 0) continue;
    int d = static_cast<int>(std::lround(n * (1.0 - pts[k].second / km)));
    d = std::clamp(d, 0, n);
    if (d > 0) {
      km *= 1.0 - static_cast<double>(d) / n;
      n -= d;
      s.d[k - first] = d;
    }
  }
  while (ci < s.cens.size() && n > 0) {
    --n;
    ++ci;
  }
  s.cens.resize(ci);
  s.n_end = n;
  s.km_end = km;
  return s;
}

// Fixes the event counts and sets the censoring count exactly; surplus events
// are dropped from the latest points.
Sim reconcile(const std::vector<std::pair<double, double>>& pts, std::size_t first, Sim s,
              int n_start, int n_target, double km_start, double lo, double hi) {
  int events = 0;
  for (int d : s.d) events += d;
  int c = n_start - events - n_target;
  for (std::size_t k = s.d.size(); c < 0 && k-- > 0;) {
    const int cut = std::min(s.d[k], -c);
    s.d[k] -= cut;
    c += cut;
  }
  c = std::max(c, 0);
  s.cens.clear();
  for (int j = 1; j <= c; ++j) s.cens.push_back(lo + j * (hi - lo) / (c + 1));
  // Recompute the KM level implied by the fixed counts.
  int n = n_start;
  double km = km_start;
  std::size_t ci = 0;
  for (std::size_t k = 0; k < s.d.size(); ++k) {
    while (ci < s.cens.size() && s.cens[ci] < pts[first + k].first) {
      --n;
      ++ci;
    }
    if (s.d[k] > 0 && n > 0) {
      km *= 1.0 - static_cast<double>(s.d[k]) / n;
      n -= s.d[k];
    }
  }
  s.n_end = n_target;
  s.km_end = km;
  return s;
}

}  // namespace

ReconstructionResult reconstruct_ipd(const DigitizedCurve& curve, const RiskRow& risk,
                                     const ReconstructOptions& opts) {
  check_risk_row(risk);
  if (curve.points.empty()) throw Error(ErrorCode::InvalidArgument, "digitized curve is empty");
  for (const auto& [t, s] : curve.points)
    if (!std::isfinite(t) || !std::isfinite(s))
      throw Error(ErrorCode::NonFiniteInput, "digitized curve has non-finite values");

  auto pts = curve.points;
  std::stable_sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t k = 1; k < pts.size(); ++k) pts[k].second = std::min(pts[k].second, pts[k - 1].second);
  for (auto& p : pts) p.second = std::clamp(p.second, 0.0, 1.0);

  const auto& A = risk.anchor_times;
  const auto& N = risk.counts;
  const std::size_t M = A.size();
  ReconstructionResult res;
  res.converged = true;

  // Points before the first anchor fold into the first interval.
  auto first_index_at_or_after = [&](double t) {
    return static_cast<std::size_t>(
        std::lower_bound(pts.begin(), pts.end(), t, [](const auto& p, double v) { return p.first < v; }) -
        pts.begin());
  };

  double km = 1.0;
  int censored_so_far = 0;
  double person_time = 0;
  const double t_last = std::max(pts.back().first, A.back());
  auto emit = [&](const Sim& s, std::size_t first) {
    for (std::size_t k = 0; k < s.d.size(); ++k)
      for (int e = 0; e < s.d[k]; ++e) res.records.push_back({pts[first + k].first, 1, curve.group});
    for (double c : s.cens) res.records.push_back({c, 0, curve.group});
  };

  for (std::size_t m = 0; m < M; ++m) {
    const bool closed = m + 1 < M;
    const double lo = A[m];
    const std::size_t first = m == 0 ? 0 : first_index_at_or_after(A[m]);
    const std::size_t last = closed ? first_index_at_or_after(A[m + 1]) : pts.size();
    const int n0 = N[m];
    IntervalDiagnostic diag;
    diag.start = lo;
    diag.at_risk_start = n0;

    if (n0 == 0) {
      diag.end = closed ? A[m + 1] : t_last;
      diag.converged = true;
      res.intervals.push_back(diag);
      continue;
    }

    if (closed) {
      const double hi = A[m + 1];
      const int n1 = N[m + 1];
      diag.end = hi;
      diag.at_risk_end = n1;
      const double s_end = last > first ? pts[last - 1].second : km;
      int c = km > 0 ? static_cast<int>(std::lround(n0 * s_end / km - n1)) : n0 - n1;
      c = std::clamp(c, 0, n0 - n1);
      std::set<int> tried;
      Sim best;
      int best_gap = -1;
      bool done = false;
      for (int it = 0; it < opts.max_iterations; ++it) {
        ++diag.iterations;
        Sim s = simulate(pts, first, last, n0, km, c, lo, hi);
        tried.insert(c);
        const int diff = s.n_end - n1;
        if (best_gap < 0 || std::abs(diff) < best_gap || (std::abs(diff) == best_gap && diff > 0)) {
          best_gap = std::abs(diff);
          best = s;
        }
        if (diff == 0) {
          done = true;
          break;
        }
        int next = std::clamp(c + diff, 0, n0 - n1);
        if (next == c || tried.count(next)) break;
        c = next;
      }
      if (!done) {
        best = reconcile(pts, first, best, n0, n1, km, lo, hi);
        diag.reconciled = true;
        res.converged = false;
      }
      diag.converged = done;
      res.iterations += diag.iterations;
      emit(best, first);
      for (int d : best.d) diag.events += d;
      diag.censored = static_cast<int>(best.cens.size());
      censored_so_far += diag.censored;
      person_time += (hi - lo) * 0.5 * (n0 + n1);
      km = best.km_end;
    } else {
      // Open tail: censor at the average rate observed so far, or match the
      // reported total events; survivors are censored at the last time.
      const double hi = t_last;
      diag.end = hi;
      const double span = hi - lo;
      int c = 0;
      if (person_time > 0 && span > 0) {
        const double rate = censored_so_far / person_time;
        c = static_cast<int>(std::lround(n0 * (1.0 - std::exp(-rate * span))));
      }
      c = std::clamp(c, 0, n0);
      Sim s = simulate(pts, first, last, n0, km, c, lo, hi);
      diag.iterations = 1;
      if (opts.total_events) {
        int before = 0;
        for (const auto& r : res.records) before += r.status;
        const int target = std::max(0, *opts.total_events - before);
        std::set<int> tried{c};
        for (int it = 1; it < opts.max_iterations; ++it) {
          int ev = 0;
          for (int d : s.d) ev += d;
          if (ev == target) break;
          const int next = std::clamp(c + (ev - target), 0, n0);
          if (next == c || tried.count(next)) break;
          tried.insert(next);
          c = next;
          s = simulate(pts, first, last, n0, km, c, lo, hi);
          ++diag.iterations;
        }
      }
      res.iterations += diag.iterations;
      diag.converged = true;
      emit(s, first);
      for (int e = 0; e < s.n_end; ++e) res.records.push_back({hi, 0, curve.group});
      for (int d : s.d) diag.events += d;
      diag.censored = static_cast<int>(s.cens.size()) + s.n_end;
      km = s.km_end;
    }
    res.intervals.push_back(diag);
  }

  std::stable_sort(res.records.begin(), res.records.end(), [](const IPDRecord& a, const IPDRecord& b) {
    return a.time != b.time ? a.time < b.time : a.status > b.status;
  });
  for (double a : A) res.recomputed_at_risk.push_back(number_at_risk(res.records, a));

  std::ostringstream diag;
  int reconciled = 0;
  for (const auto& d : res.intervals) reconciled += d.reconciled;
  diag << res.intervals.size() << " intervals, " << res.iterations << " iterations";
  if (reconciled) diag << ", " << reconciled << " reconciled after cycle or cap";
  for (std::size_t i = 0; i < M; ++i)
    if (res.recomputed_at_risk[i] != N[i])
      diag << "; anchor " << A[i] << " has " << res.recomputed_at_risk[i] << " at risk, table says "
           << N[i];
  res.diagnostic = diag.str();
  return res;
}

OverlayResult overlay_check(const DigitizedCurve& original, const std::vector<IPDRecord>& ipd,
                            double tolerance) {
  const SurvivalCurve km = km_estimate(ipd);
  OverlayResult r;
  for (const auto& [t, s] : original.points) r.max_gap = std::max(r.max_gap, std::abs(km.evaluate(t) - s));
  r.pass = r.max_gap <= tolerance + 1e-12;
  return r;
}

}  // namespace kmgpt::recon
