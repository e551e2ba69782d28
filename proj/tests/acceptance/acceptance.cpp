// One line per acceptance criterion; exit status 1 if any fails.
// Usage: kmgpt_acceptance [criterion numbers...]   (default: all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "kmgpt/curve_extract.hpp"
#include "kmgpt/errors.hpp"
#include "kmgpt/meta.hpp"
#include "kmgpt/ocr.hpp"
#include "kmgpt/pipeline.hpp"
#include "kmgpt/plot_geometry.hpp"
#include "kmgpt/reconstruct.hpp"
#include "kmgpt/survival.hpp"
#include "kmgpt/synth.hpp"

using namespace kmgpt;
using recon::IPDRecord;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

// The grid run feeds criteria 1 and 2.
const synth::GridSummary& grid_summary(double* runtime = nullptr) {
  static synth::GridSummary summary;
  static double secs = -1;
  if (secs < 0) {
    synth::GridOptions o;
    o.reps = 2;
    o.master_seed = 2024;
    const auto t0 = std::chrono::steady_clock::now();
    summary = synth::run_grid(pipeline::bench_pipeline(), o);
    secs = seconds_since(t0);
  }
  if (runtime) *runtime = secs;
  return summary;
}

Verdict grid_round_trip() {
  double secs = 0;
  const auto& s = grid_summary(&secs);
  Verdict v;
  v.pass = s.successes >= 52 && s.median_iae <= 0.03 && s.median_ae <= 0.01 && s.median_mos_ae <= 0.01 &&
           secs <= 15 * 60;
  v.detail = fmt("successes %d/%zu (>= 52), median IAE %.5f (<= 0.03), median AE %.5f (<= 0.01), "
                 "median |dmOS|/horizon %.5f (<= 0.01), runtime %.0f s (<= 900)",
                 s.successes, s.runs.size(), s.median_iae, s.median_ae, s.median_mos_ae, secs);
  for (const auto& r : s.runs)
    if (!r.success) v.detail += "; failed " + r.cell + "_r" + std::to_string(r.rep) + ": " + r.error;
  return v;
}

Verdict risk_anchoring() {
  const auto& s = grid_summary();
  int conv = 0, match = 0, all_match = 0, ok = 0;
  for (const auto& r : s.runs) {
    if (!r.success) continue;
    ++ok;
    all_match += r.anchors_match;
    if (r.converged) {
      ++conv;
      match += r.anchors_match;
    }
  }
  Verdict v;
  const double rate = conv ? static_cast<double>(match) / conv : 0.0;
  v.pass = conv > 0 && rate >= 0.95;
  v.detail = fmt("%d/%d converged reconstructions match every anchor (%.1f%%, >= 95%%); "
                 "%d/%d of all successful runs match",
                 match, conv, 100 * rate, all_match, ok);
  return v;
}

// Definition-level product limit: scan the whole sample at each distinct event time.
std::vector<std::pair<double, double>> km_oracle(const std::vector<IPDRecord>& r) {
  std::set<double> times;
  for (const auto& x : r)
    if (x.status) times.insert(x.time);
  std::vector<std::pair<double, double>> out;
  double s = 1;
  for (double u : times) {
    int n = 0, d = 0;
    for (const auto& x : r) {
      n += x.time >= u;
      d += x.time == u && x.status == 1;
    }
    s *= 1.0 - static_cast<double>(d) / n;
    out.emplace_back(u, s);
  }
  return out;
}

Verdict km_exact() {
  std::mt19937_64 rng(31337);
  int bad = 0, ties = 0, censored = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 20);
    std::vector<IPDRecord> r;
    std::set<double> seen;
    for (int i = 0; i < n; ++i) {
      const double t = static_cast<double>(rng() % 10) * 0.5;
      ties += !seen.insert(t).second;
      const int st = static_cast<int>(rng() % 3 != 0);
      censored += st == 0;
      r.push_back({t, st, "A"});
    }
    const auto c = recon::km_estimate(r);
    const auto o = km_oracle(r);
    bool same = c.step_times.size() == o.size();
    for (std::size_t k = 0; same && k < o.size(); ++k)
      same = c.step_times[k] == o[k].first && c.probabilities[k] == o[k].second;
    for (double t = -0.25; same && t < 5.5; t += 0.25) {
      double want = 1;
      for (const auto& [u, s] : o)
        if (u <= t) want = s;
      same = c.evaluate(t) == want;
    }
    bad += !same;
  }
  return {bad == 0, fmt("%d/1000 instances differ from the oracle (exact equality; %d tied times, %d censorings)",
                        bad, ties, censored)};
}

Verdict censor_free_oracle() {
  std::mt19937_64 rng(4242);
  int bad = 0;
  std::string first;
  for (int f = 0; f < 100; ++f) {
    const int n = 5 + static_cast<int>(rng() % 100);
    std::vector<IPDRecord> ipd;
    for (int i = 0; i < n; ++i) ipd.push_back({1.0 + static_cast<double>(rng() % 48) * 0.5, 1, "A"});
    const auto km = recon::km_estimate(ipd);
    recon::DigitizedCurve curve{{{0.0, 1.0}}, "A"};
    for (std::size_t k = 0; k < km.step_times.size(); ++k) curve.points.emplace_back(km.step_times[k], km.probabilities[k]);
    recon::RiskRow risk;
    risk.anchor_times.push_back(0);
    for (double t : km.step_times) risk.anchor_times.push_back(t);
    for (double a : risk.anchor_times) risk.counts.push_back(recon::number_at_risk(ipd, a));
    const auto r = recon::reconstruct_ipd(curve, risk);
    const auto& A = risk.anchor_times;
    for (std::size_t m = 0; m < A.size(); ++m) {
      const double hi = m + 1 < A.size() ? A[m + 1] : 1e300;
      int got = 0, want = 0;
      for (const auto& x : r.records) got += x.status == 1 && x.time >= A[m] && x.time < hi;
      for (const auto& x : ipd) want += x.status == 1 && x.time >= A[m] && x.time < hi;
      if (got != want) {
        ++bad;
        if (first.empty()) first = fmt("; fixture %d interval %zu: %d vs %d", f, m, got, want);
        break;
      }
    }
  }
  return {bad == 0, fmt("%d/100 fixtures with a wrong per-interval event count%s", bad, first.c_str())};
}

std::vector<geometry::TickToken> ticks_of(const std::vector<ocr::OcrToken>& toks) {
  std::vector<geometry::TickToken> out;
  for (const auto& o : toks) {
    geometry::TickToken t;
    t.text = o.text;
    t.numeric_value = geometry::parse_number(o.text);
    t.u = 0.5 * (o.box.x0 + o.box.x1);
    t.v = 0.5 * (o.box.y0 + o.box.y1);
    t.box = o.box;
    out.push_back(t);
  }
  return out;
}

Verdict calibration() {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> U(0, 1);
  double worst = 0;
  bool endpoints = true;
  for (int i = 0; i < 10000; ++i) {
    geometry::AxisGeometry g;
    g.u_x0 = 20 + 200 * U(rng);
    g.u_x1 = g.u_x0 + 100 + 1500 * U(rng);
    g.v_y0 = 10 + 100 * U(rng);
    g.v_y1 = g.v_y0 + 100 + 1000 * U(rng);
    const geometry::AxisRange x{0, 6.0 * (1 + static_cast<int>(rng() % 20)), 6};
    const geometry::AxisRange y{0, (rng() % 2) ? 1.0 : 100.0, (rng() % 2) ? 0.2 : 0.25};
    const geometry::Calibration cal(g, x, y);
    const double u = g.u_x0 + (g.u_x1 - g.u_x0) * U(rng), v = g.v_y0 + (g.v_y1 - g.v_y0) * U(rng);
    const auto [t, s] = cal.calibrate(u, v);
    const auto [u2, v2] = cal.inverse(t, s);
    worst = std::max(worst, std::hypot(u2 - u, v2 - v));
    const auto lo = cal.calibrate(g.u_x0, g.v_y1), hi = cal.calibrate(g.u_x1, g.v_y0);
    endpoints = endpoints && lo.first == x.min && lo.second == y.min && hi.first == x.max && hi.second == y.max;
  }

  // Tick ranges read back from every grid fixture.
  synth::GridOptions o;
  int fixtures = 0, matched = 0;
  std::string first;
  const auto cells = synth::GridCell::all();
  for (std::size_t c = 0; c < cells.size(); ++c)
    for (int rep = 0; rep < o.reps; ++rep) {
      ++fixtures;
      const auto bc = synth::make_case(cells[c], c, rep, o);
      const auto& img = bc.plot.image;
      try {
        const auto g = geometry::locate_axes(img);
        const int left_end = static_cast<int>(std::floor(g.u_x0 - g.thickness_v / 2.0)) - 1;
        const int below = static_cast<int>(std::ceil(g.v_y1 + g.thickness_h / 2.0)) + 1;
        std::vector<ocr::OcrToken> toks =
            ocr::run_ocr(img, {0, std::max(0, static_cast<int>(g.v_y0) - 20), left_end, static_cast<int>(g.v_y1) + 20},
                         image::RegionKind::AxisLabels);
        const auto under = ocr::run_ocr(img, {0, below, img.width(), img.height()}, image::RegionKind::AxisLabels);
        toks.insert(toks.end(), under.begin(), under.end());
        const auto [xs, ys] = geometry::assign_tokens(ticks_of(toks), g);
        const auto rx = geometry::detect_ranges(xs, geometry::Axis::X);
        const auto ry = geometry::detect_ranges(ys, geometry::Axis::Y);
        const auto& m = bc.plot.metadata;
        const bool ok = std::abs(rx.increment - m.x_increment) <= 1e-9 && std::abs(ry.increment - m.y_increment) <= 1e-9;
        matched += ok;
        if (!ok && first.empty())
          first = fmt("; %s_r%d read x inc %g y inc %g, expected %g/%g", cells[c].code().c_str(), rep, rx.increment,
                      ry.increment, m.x_increment, m.y_increment);
      } catch (const std::exception& e) {
        if (first.empty()) first = fmt("; %s_r%d: %s", cells[c].code().c_str(), rep, e.what());
      }
    }
  Verdict v;
  v.pass = worst < 0.5 && endpoints && matched == fixtures;
  v.detail = fmt("max round-trip error %.3g px on 10^4 points (< 0.5), endpoints %s, "
                 "detect_ranges increments %d/%d rendered fixtures%s",
                 worst, endpoints ? "exact" : "NOT exact", matched, fixtures, first.c_str());
  return v;
}

Verdict consensus() {
  std::mt19937_64 rng(2718);
  double worst = 0;
  int sets = 0;
  while (sets < 100) {
    const int n = 9 + static_cast<int>(rng() % 192);
    std::vector<std::pair<double, double>> p;
    std::vector<int> lab;
    std::uniform_real_distribution<double> U(0, 80);
    std::set<std::pair<double, double>> seen;
    while (static_cast<int>(p.size()) < n) {
      const std::pair<double, double> q{std::floor(U(rng)), std::floor(U(rng))};
      if (!seen.insert(q).second) continue;
      p.push_back(q);
      lab.push_back(static_cast<int>(rng() % 3));
    }
    const int k = 8;
    const auto got = curves::consensus_scores(p, lab, k);
    for (int i = 0; i < n; ++i) {
      std::vector<std::pair<double, int>> d;
      for (int j = 0; j < n; ++j)
        if (j != i) {
          const double dx = p[i].first - p[j].first, dy = p[i].second - p[j].second;
          d.emplace_back(dx * dx + dy * dy, j);
        }
      std::sort(d.begin(), d.end());
      double s = 0;
      for (int m = 0; m < k; ++m) s += (lab[d[m].second] == lab[i] ? 1.0 : -1.0) / (d[m].first + 1e-10);
      worst = std::max(worst, std::abs(got[i] - s / k));
    }
    ++sets;
  }
  return {worst <= 1e-12, fmt("max |score - oracle| %.3g over 100 sets, n <= 200, eps 1e-10 (<= 1e-12)", worst)};
}

Verdict metric_properties() {
  std::mt19937_64 rng(1618);
  std::uniform_real_distribution<double> U(0, 1);
  double ident = 0, offset_err = 0, tri = 0, asym = 0, neg = 0;
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> a(1000), b(1000), c(1000);
    for (int i = 0; i < 1000; ++i) a[i] = U(rng), b[i] = U(rng), c[i] = U(rng);
    std::sort(a.rbegin(), a.rend());
    ident = std::max(ident, synth::iae_on_grid(a, a));
    const double delta = 0.3 * U(rng);
    auto ad = a;
    for (auto& x : ad) x -= delta;
    offset_err = std::max(offset_err, std::abs(synth::iae_on_grid(a, ad) - delta));
    const double ab = synth::iae_on_grid(a, b), ba = synth::iae_on_grid(b, a);
    const double ac = synth::iae_on_grid(a, c), bc = synth::iae_on_grid(b, c);
    tri = std::max(tri, ac - (ab + bc));
    asym = std::max(asym, std::abs(ab - ba));
    neg = std::min(neg, ab);
  }
  const bool pass = ident == 0 && offset_err <= 1e-9 && tri <= 1e-9 && asym == 0 && neg >= 0;
  return {pass, fmt("IAE(identical) max %.3g, |IAE(offset) - delta| max %.3g (<= 1e-9), triangle excess %.3g, "
                    "asymmetry %.3g, min %.3g",
                    ident, offset_err, tri, asym, neg)};
}

// Three studies with known piecewise hazards and study-level log deviations.
struct MetaFixture {
  std::vector<double> cuts{0, 6, 12, 24, 36};
  std::vector<double> log_h{std::log(0.05), std::log(0.08), std::log(0.06), std::log(0.04)};
  std::vector<std::vector<IPDRecord>> studies;
};

MetaFixture meta_fixture() {
  MetaFixture f;
  const std::vector<double> dev{0.1, -0.05, -0.05};
  std::mt19937_64 rng(7);
  for (int s = 0; s < 3; ++s) {
    std::vector<IPDRecord> recs;
    for (int i = 0; i < 300; ++i) {
      double e = std::exponential_distribution<double>(1.0)(rng), t = 36;
      int st = 0;
      for (int j = 0; j < 4; ++j) {
        const double lam = std::exp(f.log_h[j] + dev[s]), w = f.cuts[j + 1] - f.cuts[j];
        if (e <= lam * w) {
          t = f.cuts[j] + e / lam;
          st = 1;
          break;
        }
        e -= lam * w;
      }
      const double c = std::uniform_real_distribution<double>(0, 60)(rng);
      if (c < t) t = c, st = 0;
      recs.push_back({t, st, "S" + std::to_string(s + 1)});
    }
    f.studies.push_back(recs);
  }
  return f;
}

Verdict meta_numerics() {
  std::string detail;
  bool pass = true;
  const auto t0 = std::chrono::steady_clock::now();

  // (a) conjugate: flat alpha makes exp(alpha) | data exactly Gamma(d, E).
  {
    const auto g = meta::make_grid({0, 10});
    meta::StudySufficientStats st{{{7}}, {{40}}};
    meta::SamplerConfig cfg;
    cfg.prior.flat_alpha = true;
    cfg.seed = 5;
    const auto post = meta::sample_posterior(st, g, cfg);
    std::vector<std::vector<double>> chains(cfg.chains);
    double sum = 0;
    for (int c = 0; c < cfg.chains; ++c)
      for (int k = 0; k < cfg.draws; ++k) {
        const double v = std::exp(post.draws[static_cast<std::size_t>(c) * cfg.draws + k].alpha[0][0]);
        chains[c].push_back(v);
        sum += v;
      }
    const double mean = sum / (cfg.chains * cfg.draws), want = 7.0 / 40.0;
    const double se = std::sqrt(7.0) / 40.0 / std::sqrt(meta::effective_sample_size(chains));
    const bool ok = std::abs(mean - want) <= 3 * se;
    pass = pass && ok;
    detail += fmt("(a) mean hazard %.5f vs Gamma(7,40) mean %.5f, |diff| %.2f MC SE (<= 3) %s; ", mean, want,
                  std::abs(mean - want) / se, ok ? "ok" : "FAIL");
  }
  // (b) RMST closed form for a constant hazard.
  {
    double worst = 0;
    const auto g = meta::make_grid({0, 3, 12, 30, 60});
    for (double lam : {1e-6, 1e-3, 0.01, 0.05, 0.2, 1.0, 3.0})
      for (double H : {0.5, 12.0, 24.0, 36.0, 48.0, 60.0})
        worst = std::max(worst, std::abs(meta::rmst_closed_form(std::vector<double>(4, std::log(lam)), g, H) -
                                         (1 - std::exp(-lam * H)) / lam));
    const bool ok = worst <= 1e-6;
    pass = pass && ok;
    detail += fmt("(b) RMST max error %.3g (<= 1e-6) %s; ", worst, ok ? "ok" : "FAIL");
  }
  // (c)-(e) on the default configuration.
  const auto f = meta_fixture();
  const auto grid = meta::make_grid(f.cuts);
  const auto stats = meta::bin_ipd(f.studies, grid);
  meta::SamplerConfig cfg;
  cfg.seed = 11;
  const auto post = meta::sample_posterior(stats, grid, cfg);
  std::vector<double> ts;
  for (int i = 0; i <= 100; ++i) ts.push_back(grid.end() * i / 100.0);
  {
    int bad = 0;
    for (const auto& d : post.draws) {
      double prev = meta::survival_at(d.a, grid, 0);
      bool ok = prev == 1.0;
      for (double t : ts) {
        const double s = meta::survival_at(d.a, grid, t);
        ok = ok && s <= prev;
        prev = s;
      }
      bad += !ok;
    }
    pass = pass && bad == 0;
    detail += fmt("(c) %d/%zu draws with S_pool(0) != 1 or non-monotone %s; ", bad, post.draws.size(),
                  bad == 0 ? "ok" : "FAIL");
  }
  {
    int bad = 0;
    for (const auto& d : post.draws) bad += !(d.phi() > -1 && d.phi() < 1);
    pass = pass && bad == 0;
    detail += fmt("(d) %d draws with phi outside (-1,1) %s; ", bad, bad == 0 ? "ok" : "FAIL");
  }
  {
    const auto bands = meta::pooled_survival(post, grid, ts);
    int covered = 0;
    for (const auto& b : bands.pooled) {
      const double truth = meta::survival_at(f.log_h, grid, b.t);
      covered += b.lo <= truth && truth <= b.hi;
    }
    const double rate = static_cast<double>(covered) / bands.pooled.size();
    const double secs = seconds_since(t0);
    const bool ok = post.max_rhat() < 1.05 && rate >= 0.9 && secs <= 600;
    pass = pass && ok;
    detail += fmt("(e) %d chains x (%d+%d), max R-hat %.4f (< 1.05), min ESS %.0f, band coverage %d/%zu (>= 90%%), "
                  "runtime %.0f s (<= 600) %s",
                  cfg.chains, cfg.warmup, cfg.draws, post.max_rhat(), post.min_ess(), covered, bands.pooled.size(),
                  secs, ok ? "ok" : "FAIL");
  }
  return {pass, detail};
}

Verdict desk_scale_statement() {
  // Published-figure results need the original figures and a live provider.
  // This check only confirms the README says so and documents the manual route.
  std::ifstream in(KMGPT_SOURCE_DIR "/README.md");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string readme = ss.str();
  const bool ok = readme.find("## Not reproduced here") != std::string::npos &&
                  readme.find("Manual procedure") != std::string::npos;
  return {ok, ok ? "published trial medians and pooled medians NOT reproduced (need original figures and a live "
                   "provider); statement and manual procedure present in README"
                 : "README lacks the not-reproduced statement or the manual procedure"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"synthetic round-trip grid", grid_round_trip},
      {"risk-table anchoring", risk_anchoring},
      {"product-limit oracle", km_exact},
      {"censor-free reconstruction oracle", censor_free_oracle},
      {"calibration exactness", calibration},
      {"consensus formula", consensus},
      {"metric properties", metric_properties},
      {"meta-analysis numerics", meta_numerics},
      {"desk-scale statement", desk_scale_statement},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Verdict v;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("%s %d %s: %s [%.1f s]\n", v.pass ? "PASS" : "FAIL", id, criteria[i].first, v.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
