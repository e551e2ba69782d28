#include "kmgpt/synth.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>
#include <opencv2/imgproc.hpp>

#include "cv_bridge.hpp"
#include "kmgpt/errors.hpp"

namespace kmgpt::synth {

namespace {

char level_char(Level l) { return l == Level::L ? 'L' : l == Level::M ? 'M' : 'H'; }

Level parse_level(char c) {
  switch (c) {
    case 'L': return Level::L;
    case 'M': return Level::M;
    case 'H': return Level::H;
    default: throw Error(ErrorCode::InvalidArgument, std::string("bad level '") + c + "'");
  }
}

template <typename T>
const T& pick(Level l, const T& lo, const T& mid, const T& hi) {
  return l == Level::L ? lo : l == Level::M ? mid : hi;
}

}  // namespace

std::string GridCell::code() const {
  return {level_char(size), level_char(survival), level_char(censor)};
}

GridCell GridCell::parse(const std::string& code) {
  if (code.size() != 3) throw Error(ErrorCode::InvalidArgument, "cell code must have 3 letters");
  return {parse_level(code[0]), parse_level(code[1]), parse_level(code[2])};
}

std::vector<GridCell> GridCell::all() {
  std::vector<GridCell> out;
  for (Level a : {Level::L, Level::M, Level::H})
    for (Level b : {Level::L, Level::M, Level::H})
      for (Level c : {Level::L, Level::M, Level::H}) out.push_back({a, b, c});
  return out;
}

NormalParam GridCell::size_param() const {
  return pick(size, NormalParam{50, 10}, NormalParam{200, 30}, NormalParam{800, 50});
}
NormalParam GridCell::median_param() const {
  return pick(survival, NormalParam{6, 1}, NormalParam{12, 2}, NormalParam{36, 6});
}
NormalParam GridCell::censor_param() const {
  return pick(censor, NormalParam{0.05, 0.02}, NormalParam{0.3, 0.05}, NormalParam{0.7, 0.08});
}

double SynthConfig::median() const { return std::log(2.0) / lambda; }

SynthConfig sample_config(const GridCell& cell, std::mt19937_64& rng, const SampleOptions& opts) {
  std::normal_distribution<double> z(0.0, 1.0);
  auto draw = [&](NormalParam p) { return p.mu + p.sigma * opts.sigma_scale * z(rng); };
  SynthConfig c;
  c.n = std::max(2, static_cast<int>(std::lround(draw(cell.size_param()))));
  const double median = std::max(0.1, draw(cell.median_param()));
  c.lambda = std::log(2.0) / median;
  c.eta = std::clamp(draw(cell.censor_param()), 0.0, 0.95);
  c.tau = opts.tau_factor * median * opts.tau_multiplier;
  c.seed = rng();
  return c;
}

Cohort generate_cohort(const SynthConfig& cfg, std::mt19937_64& rng, const std::string& group) {
  if (cfg.n < 1 || !(cfg.lambda > 0) || cfg.eta < 0 || cfg.eta >= 1 || !(cfg.tau > 0))
    throw Error(ErrorCode::InvalidArgument, "invalid synthetic configuration");
  const int n = cfg.n;
  Cohort c;
  std::exponential_distribution<double> expo(cfg.lambda);
  c.latent_times.resize(n);
  for (auto& t : c.latent_times) t = expo(rng);
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  const int k = static_cast<int>(std::lround(n * cfg.eta));
  c.selected.assign(n, false);
  for (int i = 0; i < k; ++i) c.selected[idx[i]] = true;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  c.administrative.assign(n, false);
  for (int i = 0; i < n; ++i) {
    const double T = c.latent_times[i];
    double Y = T;
    int status = 1;
    if (c.selected[i]) {
      const double C = unif(rng) * std::min(T, cfg.tau);
      Y = std::min(T, C);
      status = T <= C ? 1 : 0;
    }
    if (Y > cfg.tau) {
      Y = cfg.tau;
      status = 0;
      c.administrative[i] = true;
    }
    c.records.push_back({Y, status, group});
  }
  return c;
}

std::vector<recon::IPDRecord> generate_ipd(const SynthConfig& cfg, std::mt19937_64& rng,
                                           const std::string& group) {
  return generate_cohort(cfg, rng, group).records;
}

double nice_increment(double span) {
  static const double steps[] = {1, 2, 3, 4, 5, 6, 10, 12, 15, 20, 24, 30, 36, 48, 60, 72, 96, 120};
  const double want = span / 7.0;
  for (double s : steps)
    if (s >= want) return s;
  return std::ceil(want / 120.0) * 120.0;
}

namespace {

std::string format_tick(double v, double inc) {
  char buf[32];
  if (std::abs(inc - std::round(inc)) < 1e-9 && std::abs(v - std::round(v)) < 1e-9)
    std::snprintf(buf, sizeof buf, "%.0f", v);
  else
    std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

std::string hex(Rgb c) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c[0], c[1], c[2]);
  return buf;
}

}  // namespace

RenderedPlot render_km_plot(const std::vector<std::vector<recon::IPDRecord>>& groups,
                            const RenderStyle& st) {
  if (groups.empty()) throw Error(ErrorCode::InvalidArgument, "need at least one group");
  RenderedPlot out;
  double max_time = 0;
  for (const auto& g : groups) {
    if (g.empty()) throw Error(ErrorCode::InvalidArgument, "empty group");
    for (const auto& r : g) max_time = std::max(max_time, r.time);
  }
  if (!(max_time > 0)) max_time = 1;
  const double inc = st.x_increment ? *st.x_increment : nice_increment(st.x_end ? *st.x_end : max_time);
  const double x_end = st.x_end ? *st.x_end : std::ceil(max_time / inc - 1e-9) * inc;

  const int G = static_cast<int>(groups.size());
  const int font = cv::FONT_HERSHEY_SIMPLEX;
  int base = 0;
  const int text_h = cv::getTextSize("0", font, st.font_scale, 1, &base).height;
  const int tick_label_top = st.plot_bottom + 16;
  const int title_base = tick_label_top + text_h + 34;
  const int table_header_base = title_base + 40;
  const int row_pitch = text_h + 16;
  const int height = st.risk_table ? table_header_base + row_pitch * G + 16 : title_base + 20;

  cv::Mat m(height, st.width, CV_8UC3, cv::Scalar(255, 255, 255));
  const cv::Scalar black(0, 0, 0);
  const double L = st.plot_left, R = st.plot_right, T = st.plot_top, B = st.plot_bottom;
  auto u_of = [&](double t) { return L + t / x_end * (R - L); };
  auto v_of = [&](double s) { return B - s * (B - T); };
  constexpr int kShift = 4;
  auto fp = [](double u, double v) {
    return cv::Point(static_cast<int>(std::lround(u * (1 << kShift))),
                     static_cast<int>(std::lround(v * (1 << kShift))));
  };

  // Curves first so the axes sit on top.
  for (int g = 0; g < G; ++g) {
    auto km = recon::km_estimate(groups[g]);
    double last_t = 0;
    for (const auto& r : groups[g]) last_t = std::max(last_t, r.time);
    std::vector<cv::Point> poly{fp(u_of(0), v_of(1.0))};
    double s = 1.0;
    for (std::size_t k = 0; k < km.step_times.size(); ++k) {
      poly.push_back(fp(u_of(km.step_times[k]), v_of(s)));
      s = km.probabilities[k];
      poly.push_back(fp(u_of(km.step_times[k]), v_of(s)));
    }
    poly.push_back(fp(u_of(last_t), v_of(s)));
    const Rgb c = st.palette[static_cast<std::size_t>(g) % st.palette.size()];
    const cv::Scalar color(c[2], c[1], c[0]);
    cv::polylines(m, std::vector<std::vector<cv::Point>>{poly}, false, color, st.curve_thickness,
                  cv::LINE_AA, kShift);
    if (st.censor_marks) {
      for (const auto& r : groups[g]) {
        if (r.status) continue;
        const double u = u_of(r.time), v = v_of(km.evaluate(r.time));
        cv::line(m, fp(u, v - 5), fp(u, v + 5), color, 1, cv::LINE_AA, kShift);
      }
    }
    km.group = groups[g].front().group;
    out.truth.push_back(std::move(km));
  }

  const int th = st.axis_thickness;
  cv::line(m, {st.plot_left, st.plot_top}, {st.plot_left, st.plot_bottom}, black, th, cv::LINE_8);
  cv::line(m, {st.plot_left, st.plot_bottom}, {st.plot_right, st.plot_bottom}, black, th, cv::LINE_8);

  const int nx = static_cast<int>(std::lround(x_end / inc));
  for (int k = 0; k <= nx; ++k) {
    const double t = k * inc;
    const int u = static_cast<int>(std::lround(u_of(t)));
    cv::line(m, {u, st.plot_bottom}, {u, st.plot_bottom + 8}, black, th, cv::LINE_8);
    const std::string lab = format_tick(t, inc);
    const cv::Size sz = cv::getTextSize(lab, font, st.font_scale, 1, &base);
    cv::putText(m, lab, {u - sz.width / 2, tick_label_top + sz.height}, font, st.font_scale, black, 1,
                cv::LINE_AA);
  }
  for (int k = 0; k <= 5; ++k) {
    const double s = 0.2 * k;
    const int v = static_cast<int>(std::lround(v_of(s)));
    cv::line(m, {st.plot_left - 8, v}, {st.plot_left, v}, black, th, cv::LINE_8);
    const std::string lab = format_tick(s, 0.2);
    const cv::Size sz = cv::getTextSize(lab, font, st.font_scale, 1, &base);
    cv::putText(m, lab, {st.plot_left - 16 - sz.width, v + sz.height / 2}, font, st.font_scale,
                black, 1, cv::LINE_AA);
  }
  {
    const std::string title = "Time (" + st.time_unit + ")";
    const cv::Size sz = cv::getTextSize(title, font, st.font_scale, 1, &base);
    cv::putText(m, title, {static_cast<int>((L + R) / 2) - sz.width / 2, title_base}, font,
                st.font_scale, black, 1, cv::LINE_AA);
  }

  auto& md = out.metadata;
  md.x_start = 0;
  md.x_end = x_end;
  md.x_increment = inc;
  md.y_start = 0;
  md.y_end = 1;
  md.y_increment = 0.2;
  md.num_curves = G;
  md.time_unit = st.time_unit;
  for (int k = 0; k <= nx; ++k) md.risk_table.anchor_times.push_back(k * inc);
  for (int g = 0; g < G; ++g) {
    std::vector<int> row;
    for (double a : md.risk_table.anchor_times) row.push_back(recon::number_at_risk(groups[g], a));
    md.risk_table.counts.push_back(row);
    md.groups.push_back(
        {groups[g].front().group, hex(st.palette[static_cast<std::size_t>(g) % st.palette.size()])});
  }
  out.risk = md.risk_table;

  if (st.risk_table) {
    const double small = st.font_scale * 0.9;
    cv::putText(m, "Number at risk", {10, table_header_base}, font, small, black, 1, cv::LINE_AA);
    for (int g = 0; g < G; ++g) {
      const int yb = table_header_base + row_pitch * (g + 1);
      cv::putText(m, md.groups[g].label, {10, yb}, font, small, black, 1, cv::LINE_AA);
      for (std::size_t k = 0; k < md.risk_table.anchor_times.size(); ++k) {
        const std::string lab = std::to_string(md.risk_table.counts[g][k]);
        const cv::Size sz = cv::getTextSize(lab, font, small, 1, &base);
        const int u = static_cast<int>(std::lround(u_of(md.risk_table.anchor_times[k])));
        cv::putText(m, lab, {u - sz.width / 2, yb}, font, small, black, 1, cv::LINE_AA);
      }
    }
  }

  out.image = detail::from_bgr(m);
  out.geometry.u_x0 = L;
  out.geometry.u_x1 = R;
  out.geometry.v_y0 = T;
  out.geometry.v_y1 = B;
  out.geometry.thickness_h = th;
  out.geometry.thickness_v = th;
  return out;
}

std::string sidecar_json(const RenderedPlot& plot) {
  auto j = nlohmann::json::parse(mmpu::metadata_to_json(plot.metadata));
  const auto& g = plot.geometry;
  j["geometry"] = {{"u_x0", g.u_x0}, {"u_x1", g.u_x1}, {"v_y0", g.v_y0}, {"v_y1", g.v_y1}};
  return j.dump(2);
}

double iae_on_grid(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size();
  if (n < 2 || b.size() != n) throw Error(ErrorCode::InvalidArgument, "grids must match, size >= 2");
  const double h = 1.0 / static_cast<double>(n - 1);
  double s = 0;
  for (std::size_t i = 0; i + 1 < n; ++i)
    s += 0.5 * h * (std::abs(a[i] - b[i]) + std::abs(a[i + 1] - b[i + 1]));
  return s;
}

MetricsReport score(const recon::SurvivalCurve& truth, const recon::SurvivalCurve& rec, double horizon,
                    int grid_points) {
  if (!(horizon > 0) || !std::isfinite(horizon))
    throw Error(ErrorCode::InvalidHorizon, "horizon must be positive");
  if (grid_points < 2) throw Error(ErrorCode::InvalidArgument, "grid needs at least two points");
  MetricsReport r;
  std::vector<double> a(grid_points), b(grid_points), ae(grid_points);
  for (int i = 0; i < grid_points; ++i) {
    const double x = static_cast<double>(i) / (grid_points - 1);
    a[i] = truth.evaluate(x * horizon);
    b[i] = rec.evaluate(x * horizon);
    ae[i] = std::abs(a[i] - b[i]);
    r.ae_series.emplace_back(x, ae[i]);
  }
  r.iae = iae_on_grid(a, b);
  r.median_ae = median_of(ae);
  const auto m1 = recon::curve_median(truth), m2 = recon::curve_median(rec);
  if (m1 && m2) r.mos_ae = std::abs(*m1 - *m2) / horizon;
  return r;
}

std::uint64_t derive_seed(std::uint64_t master, std::size_t cell, std::size_t rep) {
  std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (cell * 100003ULL + rep + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double quantile_of(std::vector<double> v, double q) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(v.size() - 1, lo + 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double median_of(std::vector<double> v) { return quantile_of(std::move(v), 0.5); }

BenchCase make_case(const GridCell& cell, std::size_t cell_index, int rep, const GridOptions& opts) {
  BenchCase bc;
  bc.cell = cell;
  bc.rep = rep;
  bc.seed = derive_seed(opts.master_seed, cell_index, static_cast<std::size_t>(rep));
  std::mt19937_64 rng(bc.seed);
  bc.config = sample_config(cell, rng, opts.sampling);
  bc.truth_ipd = generate_ipd(bc.config, rng, "A");
  bc.plot = render_km_plot({bc.truth_ipd}, opts.style);
  return bc;
}

namespace {

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + p.string());
  out << s;
}

}  // namespace

GridSummary run_grid(const BenchPipeline& pipeline, const GridOptions& opts) {
  struct Job {
    std::size_t cell_index;
    int rep;
  };
  std::vector<Job> jobs;
  for (std::size_t c = 0; c < opts.cells.size(); ++c)
    for (int r = 0; r < opts.reps; ++r) jobs.push_back({c, r});

  // Cell index in the canonical 27-cell order keeps seeds stable under subsetting.
  const auto all = GridCell::all();
  auto canonical = [&](const GridCell& g) {
    for (std::size_t i = 0; i < all.size(); ++i)
      if (all[i].code() == g.code()) return i;
    return std::size_t{0};
  };

  std::vector<RunOutcome> runs(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex io;
  auto worker = [&] {
    for (std::size_t j; (j = next.fetch_add(1)) < jobs.size();) {
      const auto& job = jobs[j];
      const GridCell& cell = opts.cells[job.cell_index];
      RunOutcome& o = runs[j];
      o.cell = cell.code();
      o.rep = job.rep;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        const BenchCase bc = make_case(cell, canonical(cell), job.rep, opts);
        std::filesystem::path dir;
        if (opts.out_dir) {
          dir = *opts.out_dir / "runs" / (o.cell + "_r" + std::to_string(job.rep));
          std::filesystem::create_directories(dir);
          write_png(bc.plot.image, dir / "plot.png");
          write_text(dir / "sidecar.json", sidecar_json(bc.plot));
          write_text(dir / "truth_ipd.csv", recon::ipd_to_csv(bc.truth_ipd));
        }
        const BenchOutput res = pipeline(bc);
        o.metrics = score(bc.plot.truth[0], recon::km_estimate(res.ipd), bc.config.tau);
        o.converged = res.converged;
        o.anchors_match = true;
        const auto& rt = bc.plot.metadata.risk_table;
        for (std::size_t k = 0; k < rt.anchor_times.size(); ++k)
          if (recon::number_at_risk(res.ipd, rt.anchor_times[k]) != rt.counts[0][k]) o.anchors_match = false;
        o.success = true;
        if (opts.out_dir) write_text(dir / "recon_ipd.csv", recon::ipd_to_csv(res.ipd));
      } catch (const std::exception& e) {
        o.success = false;
        o.metrics.success = false;
        o.error = e.what();
      }
      o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
  };
  int threads = opts.threads > 0 ? opts.threads : static_cast<int>(std::thread::hardware_concurrency());
  threads = std::max(1, std::min<int>(threads, static_cast<int>(jobs.size())));
  std::vector<std::thread> pool;
  for (int i = 1; i < threads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  GridSummary s;
  s.runs = std::move(runs);
  std::vector<double> iae, ae, mos;
  int conv = 0, conv_match = 0;
  for (const auto& r : s.runs) {
    if (!r.success) continue;
    ++s.successes;
    iae.push_back(r.metrics.iae);
    for (const auto& p : r.metrics.ae_series) ae.push_back(p.second);
    if (r.metrics.mos_ae) mos.push_back(*r.metrics.mos_ae);
    if (r.converged) {
      ++conv;
      conv_match += r.anchors_match;
    }
  }
  s.median_iae = median_of(iae);
  s.median_ae = median_of(ae);
  s.median_mos_ae = median_of(mos);
  s.anchor_match_rate = conv ? static_cast<double>(conv_match) / conv : std::nan("");
  if (opts.out_dir) {
    write_text(*opts.out_dir / "summary.csv", summary_csv(s));
    write_text(*opts.out_dir / "cells.csv", cell_summary_csv(s));
  }
  return s;
}

std::string summary_csv(const GridSummary& s) {
  std::ostringstream out;
  out << "cell,rep,iae,mos_ae,success\n";
  char buf[128];
  for (const auto& r : s.runs) {
    std::string mos = "NA", iae = "NA";
    if (r.success) {
      std::snprintf(buf, sizeof buf, "%.6f", r.metrics.iae);
      iae = buf;
      if (r.metrics.mos_ae) {
        std::snprintf(buf, sizeof buf, "%.6f", *r.metrics.mos_ae);
        mos = buf;
      }
    }
    out << r.cell << ',' << r.rep << ',' << iae << ',' << mos << ',' << (r.success ? 1 : 0) << '\n';
  }
  return out.str();
}

std::string cell_summary_csv(const GridSummary& s) {
  std::ostringstream out;
  out << "cell,runs,successes,iae_median,iae_q1,iae_q3\n";
  std::vector<std::string> order;
  for (const auto& r : s.runs)
    if (std::find(order.begin(), order.end(), r.cell) == order.end()) order.push_back(r.cell);
  char buf[160];
  for (const auto& c : order) {
    std::vector<double> v;
    int runs = 0, ok = 0;
    for (const auto& r : s.runs) {
      if (r.cell != c) continue;
      ++runs;
      if (r.success) {
        ++ok;
        v.push_back(r.metrics.iae);
      }
    }
    std::snprintf(buf, sizeof buf, "%s,%d,%d,%.6f,%.6f,%.6f\n", c.c_str(), runs, ok, median_of(v),
                  quantile_of(v, 0.25), quantile_of(v, 0.75));
    out << buf;
  }
  return out.str();
}

}  // namespace kmgpt::synth
