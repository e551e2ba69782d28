#include "kmgpt/plot_geometry.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <opencv2/core.hpp>

#include "cv_bridge.hpp"
#include "kmgpt/errors.hpp"

namespace kmgpt::geometry {

namespace {

struct Run {
  int length = 0, start = 0, end = -1;  // inclusive
};

template <typename Ink>
Run longest_run(int n, Ink&& ink) {
  Run best, cur;
  for (int i = 0; i < n; ++i) {
    if (ink(i)) {
      if (cur.length == 0) cur.start = i;
      ++cur.length;
      cur.end = i;
      if (cur.length > best.length) best = cur;
    } else {
      cur.length = 0;
    }
  }
  return best;
}

}  // namespace

AxisGeometry locate_axes(const RasterImage& image, const LocateOptions& opts) {
  const int w = image.width(), h = image.height();
  const cv::Mat gray = detail::to_gray(image);
  auto ink = [&](int x, int y) { return gray.at<std::uint8_t>(y, x) < opts.ink_threshold; };

  std::vector<Run> cols(w), rows(h);
  int max_col = 0, max_row = 0;
  for (int x = 0; x < w; ++x) {
    cols[x] = longest_run(h, [&](int y) { return ink(x, y); });
    max_col = std::max(max_col, cols[x].length);
  }
  for (int y = 0; y < h; ++y) {
    rows[y] = longest_run(w, [&](int x) { return ink(x, y); });
    max_row = std::max(max_row, rows[y].length);
  }
  auto col_ok = [&](int x) {
    return cols[x].length > 0 && cols[x].length >= opts.run_fraction * max_col &&
           cols[x].length >= opts.min_span_fraction * h;
  };
  auto row_ok = [&](int y) {
    return rows[y].length > 0 && rows[y].length >= opts.run_fraction * max_row &&
           rows[y].length >= opts.min_span_fraction * w;
  };

  int left = -1;
  for (int x = 0; x < w && left < 0; ++x)
    if (col_ok(x)) left = x;
  int bottom = -1;
  for (int y = h - 1; y >= 0 && bottom < 0; --y)
    if (row_ok(y)) bottom = y;
  if (left < 0 || bottom < 0) throw Error(ErrorCode::NoAxisFound, "no axis stroke found");

  int right_edge = left;
  while (right_edge + 1 < w && col_ok(right_edge + 1)) ++right_edge;
  int top_edge = bottom;
  while (top_edge - 1 >= 0 && row_ok(top_edge - 1)) --top_edge;

  AxisGeometry g;
  g.thickness_v = right_edge - left + 1;
  g.thickness_h = bottom - top_edge + 1;
  g.u_x0 = 0.5 * (left + right_edge);
  g.v_y1 = 0.5 * (top_edge + bottom);

  int top = h;
  for (int x = left; x <= right_edge; ++x) top = std::min(top, cols[x].start);
  int end = -1;
  for (int y = top_edge; y <= bottom; ++y) end = std::max(end, rows[y].end);
  // Line caps extend about half a stroke past the nominal endpoint.
  g.v_y0 = top + 0.5 * (g.thickness_h - 1);
  g.u_x1 = end - 0.5 * (g.thickness_v - 1);
  if (!(g.u_x1 > g.u_x0) || !(g.v_y1 > g.v_y0))
    throw Error(ErrorCode::NoAxisFound, "axis strokes do not form an L-shaped frame");

  const int y_lo = static_cast<int>(std::ceil(g.v_y0)), y_hi = static_cast<int>(std::floor(g.v_y1));
  const int x_lo = static_cast<int>(std::ceil(g.u_x0)), x_hi = static_cast<int>(std::floor(g.u_x1));
  const int max_margin = 20;
  for (int x = right_edge + 1; x < std::min(w, right_edge + 1 + max_margin); ++x) {
    int n = 0;
    for (int y = y_lo; y <= y_hi; ++y) n += ink(x, y);
    if (n < opts.margin_fraction * (y_hi - y_lo + 1)) break;
    ++g.margin_left;
  }
  for (int y = top_edge - 1; y >= std::max(0, top_edge - max_margin); --y) {
    int n = 0;
    for (int x = x_lo; x <= x_hi; ++x) n += ink(x, y);
    if (n < opts.margin_fraction * (x_hi - x_lo + 1)) break;
    ++g.margin_bottom;
  }
  return g;
}

std::optional<double> parse_number(const std::string& raw) {
  std::string s;
  for (char c : raw) {
    if (c == ',') c = '.';
    if (c == '%' || c == ' ') continue;
    s.push_back(c);
  }
  if (s.empty()) return std::nullopt;
  std::size_t pos = 0;
  try {
    const double v = std::stod(s, &pos);
    if (pos != s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
  } catch (...) {
    return std::nullopt;
  }
}

AxisRange detect_ranges(const std::vector<TickToken>& tokens, Axis axis) {
  struct Tick {
    double value, pos;
  };
  std::vector<Tick> ticks;
  for (const auto& t : tokens) {
    if (!t.numeric_value) continue;
    const double pos = axis == Axis::X ? t.u : -t.v;
    ticks.push_back({*t.numeric_value, pos});
  }
  std::sort(ticks.begin(), ticks.end(), [](const Tick& a, const Tick& b) {
    return a.pos != b.pos ? a.pos < b.pos : a.value < b.value;
  });
  // The same label read twice at one spot counts once.
  std::vector<Tick> uniq;
  for (const auto& t : ticks) {
    const bool dup = std::any_of(uniq.begin(), uniq.end(), [&](const Tick& u) {
      return u.value == t.value && std::abs(u.pos - t.pos) < 2.0;
    });
    if (!dup) uniq.push_back(t);
  }
  if (uniq.size() < 2) throw Error(ErrorCode::InsufficientTicks, "fewer than two numeric tick labels");

  bool monotonic = true;
  for (std::size_t i = 1; i < uniq.size(); ++i)
    if (!(uniq[i].value > uniq[i - 1].value)) monotonic = false;

  std::vector<double> values;
  for (const auto& t : uniq) values.push_back(t.value);
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  if (values.size() < 2) throw Error(ErrorCode::DegenerateTicks, "all tick values identical");

  std::vector<double> gaps;
  for (std::size_t i = 1; i < values.size(); ++i) gaps.push_back(values[i] - values[i - 1]);
  std::vector<double> sorted = gaps;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t trim = sorted.size() / 10;
  std::vector<double> trimmed(sorted.begin() + static_cast<std::ptrdiff_t>(trim),
                              sorted.end() - static_cast<std::ptrdiff_t>(trim));

  AxisRange r;
  r.min = values.front();
  r.max = values.back();
  const double tol = 1e-9 * std::max(1.0, std::abs(r.max - r.min));
  // Histogram of trimmed gaps; ascending order makes ties resolve to the smaller gap.
  double mode = trimmed.front();
  std::size_t mode_count = 0;
  for (std::size_t i = 0; i < trimmed.size();) {
    std::size_t j = i;
    while (j < trimmed.size() && trimmed[j] - trimmed[i] <= tol) ++j;
    if (j - i > mode_count) {
      mode_count = j - i;
      mode = trimmed[i];
    }
    i = j;
  }
  const bool regular = 2 * mode_count >= trimmed.size();
  if (regular && monotonic) {
    r.increment = mode;
  } else {
    const std::size_t n = sorted.size();
    r.increment = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  }
  return r;
}

std::pair<std::vector<TickToken>, std::vector<TickToken>> assign_tokens(
    const std::vector<TickToken>& tokens, const AxisGeometry& g) {
  std::vector<TickToken> below, xs, ys;
  for (const auto& t : tokens) {
    if (!t.numeric_value) continue;
    if (t.box.y0 > g.v_y1 && t.u >= g.u_x0 - t.box.width() && t.u <= g.u_x1 + t.box.width()) {
      below.push_back(t);
    } else if (t.box.x1 <= g.u_x0 && t.v >= g.v_y0 - t.box.height() &&
               t.v <= g.v_y1 + t.box.height()) {
      ys.push_back(t);
    }
  }
  if (!below.empty()) {
    // Only the first text row under the axis holds tick labels; rows further
    // down belong to the axis title or the risk table.
    double top = below.front().v, lh = below.front().box.height();
    for (const auto& t : below)
      if (t.v < top) {
        top = t.v;
        lh = t.box.height();
      }
    for (const auto& t : below)
      if (std::abs(t.v - top) <= 0.6 * lh) xs.push_back(t);
  }
  return {xs, ys};
}

Calibration::Calibration(const AxisGeometry& geom, const AxisRange& x, const AxisRange& y)
    : geom_(geom), x_(x), y_(y) {
  if (!(geom.u_x1 - geom.u_x0 != 0) || !(geom.v_y1 - geom.v_y0 != 0))
    throw Error(ErrorCode::DegenerateAxis, "zero-length pixel span");
  if (!(x.max - x.min != 0) || !(y.max - y.min != 0))
    throw Error(ErrorCode::DegenerateAxis, "zero-length data span");
}

double Calibration::t(double u) const {
  return x_.min + (u - geom_.u_x0) / (geom_.u_x1 - geom_.u_x0) * (x_.max - x_.min);
}

double Calibration::s(double v) const {
  return y_.max - (v - geom_.v_y0) / (geom_.v_y1 - geom_.v_y0) * (y_.max - y_.min);
}

double Calibration::u(double t) const {
  return geom_.u_x0 + (t - x_.min) / (x_.max - x_.min) * (geom_.u_x1 - geom_.u_x0);
}

double Calibration::v(double s) const {
  return geom_.v_y0 + (y_.max - s) / (y_.max - y_.min) * (geom_.v_y1 - geom_.v_y0);
}

std::pair<double, double> Calibration::calibrate(double u, double v) const { return {t(u), s(v)}; }

std::pair<double, double> Calibration::inverse(double t_, double s_) const { return {u(t_), v(s_)}; }

}  // namespace kmgpt::geometry
