#include "kmgpt/curve_extract.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <unordered_map>

#include <json.hpp>

#include "kmgpt/errors.hpp"

namespace kmgpt::curves {

Hsl rgb_to_hsl(Rgb c) {
  const double r = c[0] / 255.0, g = c[1] / 255.0, b = c[2] / 255.0;
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double l = 0.5 * (mx + mn);
  const double d = mx - mn;
  if (d == 0) return {0.0, 0.0, l};
  const double s = l > 0.5 ? d / (2.0 - mx - mn) : d / (mx + mn);
  double h;
  if (mx == r)
    h = (g - b) / d + (g < b ? 6.0 : 0.0);
  else if (mx == g)
    h = (b - r) / d + 2.0;
  else
    h = (r - g) / d + 4.0;
  h /= 6.0;
  if (h >= 1.0) h -= 1.0;
  return {h, std::min(1.0, s), l};
}

std::vector<PixelFeature> extract_features(const RasterImage& image,
                                           const geometry::AxisGeometry& g,
                                           const FeatureOptions& opts) {
  const int x_lo = static_cast<int>(std::floor(g.u_x0 + 0.5 * g.thickness_v)) + g.margin_left +
                   opts.axis_clearance;
  const int x_hi = std::min(image.width() - 1, static_cast<int>(std::ceil(g.u_x1)) + 2);
  const int y_lo = std::max(0, static_cast<int>(std::floor(g.v_y0)) - 3);
  const int y_hi = static_cast<int>(std::ceil(g.v_y1 - 0.5 * g.thickness_h)) - g.margin_bottom -
                   opts.axis_clearance;
  if (x_hi < x_lo || y_hi < y_lo) throw Error(ErrorCode::NoCurvePixels, "empty plot interior");

  std::unordered_map<int, int> bins;
  const auto key = [&](Rgb c) {
    return ((c[0] >> opts.quantize_shift) << 16) | ((c[1] >> opts.quantize_shift) << 8) |
           (c[2] >> opts.quantize_shift);
  };
  for (int y = y_lo; y <= y_hi; ++y)
    for (int x = x_lo; x <= x_hi; ++x) ++bins[key(image.at(x, y))];
  const double total = static_cast<double>(x_hi - x_lo + 1) * (y_hi - y_lo + 1);

  std::vector<PixelFeature> out;
  for (int y = y_lo; y <= y_hi; ++y) {
    for (int x = x_lo; x <= x_hi; ++x) {
      const Rgb c = image.at(x, y);
      if (bins[key(c)] >= opts.background_fraction * total) continue;
      // Resampling rings leave pale grey halos next to dark strokes.
      if (std::min({c[0], c[1], c[2]}) >= opts.near_white) continue;
      const Hsl hsl = rgb_to_hsl(c);
      if (hsl.l < opts.min_lightness) continue;
      out.push_back({x, y, hsl.h, hsl.s, hsl.l, c});
    }
  }
  if (out.empty()) throw Error(ErrorCode::NoCurvePixels, "no curve pixels in plot interior");
  return out;
}

std::vector<std::array<double, 3>> feature_space(const std::vector<PixelFeature>& f, bool enhanced,
                                                 double enhance_weight) {
  std::vector<std::array<double, 3>> pts(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) pts[i] = {f[i].h, f[i].s, f[i].l};
  for (int d = 0; d < 3; ++d) {
    double mean = 0;
    for (const auto& p : pts) mean += p[d];
    mean /= static_cast<double>(pts.size());
    double var = 0;
    for (const auto& p : pts) var += (p[d] - mean) * (p[d] - mean);
    double sd = std::sqrt(var / static_cast<double>(pts.size()));
    if (!(sd > 1e-12)) sd = 1.0;
    const double scale = (enhanced && d > 0) ? enhance_weight : 1.0;
    for (auto& p : pts) p[d] = (p[d] - mean) / sd * scale;
  }
  return pts;
}

namespace {

double dist(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  const double x = a[0] - b[0], y = a[1] - b[1], z = a[2] - b[2];
  return std::sqrt(x * x + y * y + z * z);
}

struct Problem {
  std::vector<std::array<double, 3>> pts;
  std::vector<double> w;
};

// Nearest medoid with ties to the lower medoid slot.
std::pair<int, double> nearest(const Problem& p, std::size_t i, const std::vector<std::size_t>& med) {
  int best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m < med.size(); ++m) {
    const double d = dist(p.pts[i], p.pts[med[m]]);
    if (d < bd) {
      bd = d;
      best = static_cast<int>(m);
    }
  }
  return {best, bd};
}

double cost(const Problem& p, const std::vector<std::size_t>& med) {
  double c = 0;
  for (std::size_t i = 0; i < p.pts.size(); ++i) c += p.w[i] * nearest(p, i, med).second;
  return c;
}

std::vector<std::size_t> init_pp(const Problem& p, int K, std::mt19937_64& rng) {
  const std::size_t n = p.pts.size();
  std::vector<std::size_t> med;
  std::uniform_real_distribution<double> U(0.0, 1.0);
  auto pick = [&](const std::vector<double>& weight) {
    const double total = std::accumulate(weight.begin(), weight.end(), 0.0);
    if (!(total > 0)) {
      for (std::size_t i = 0; i < n; ++i)
        if (std::find(med.begin(), med.end(), i) == med.end()) return i;
      return std::size_t{0};
    }
    double r = U(rng) * total;
    for (std::size_t i = 0; i < n; ++i) {
      r -= weight[i];
      if (r < 0 && weight[i] > 0) return i;
    }
    for (std::size_t i = n; i-- > 0;)
      if (weight[i] > 0) return i;
    return std::size_t{0};
  };
  med.push_back(pick(p.w));
  std::vector<double> wd(n);
  while (static_cast<int>(med.size()) < K) {
    for (std::size_t i = 0; i < n; ++i) {
      const double d = nearest(p, i, med).second;
      wd[i] = p.w[i] * d * d;
    }
    med.push_back(pick(wd));
  }
  return med;
}

std::vector<std::size_t> voronoi_iterate(const Problem& p, std::vector<std::size_t> med,
                                         const ClusterOptions& opts) {
  const std::size_t n = p.pts.size();
  const int K = static_cast<int>(med.size());
  for (int it = 0; it < opts.max_iterations; ++it) {
    std::vector<std::vector<std::size_t>> members(K);
    for (std::size_t i = 0; i < n; ++i) members[nearest(p, i, med).first].push_back(i);
    bool changed = false;
    for (int k = 0; k < K; ++k) {
      auto& m = members[k];
      if (m.empty()) continue;
      std::vector<std::size_t> cand = m;
      if (cand.size() > opts.candidate_cap) {
        std::array<double, 3> c{0, 0, 0};
        double tw = 0;
        for (auto i : m) {
          for (int d = 0; d < 3; ++d) c[d] += p.w[i] * p.pts[i][d];
          tw += p.w[i];
        }
        for (int d = 0; d < 3; ++d) c[d] /= tw;
        std::stable_sort(cand.begin(), cand.end(), [&](std::size_t a, std::size_t b) {
          return dist(p.pts[a], c) < dist(p.pts[b], c);
        });
        cand.resize(opts.candidate_cap);
        if (std::find(cand.begin(), cand.end(), med[k]) == cand.end()) cand.push_back(med[k]);
        std::sort(cand.begin(), cand.end());
      }
      std::size_t best = med[k];
      double bc = std::numeric_limits<double>::infinity();
      for (auto c : cand) {
        double s = 0;
        for (auto i : m) s += p.w[i] * dist(p.pts[i], p.pts[c]);
        if (s < bc || (s == bc && c < best)) {
          bc = s;
          best = c;
        }
      }
      if (best != med[k]) {
        med[k] = best;
        changed = true;
      }
    }
    if (!changed) break;
  }
  return med;
}

std::vector<std::size_t> swap_refine(const Problem& p, std::vector<std::size_t> med) {
  double c = cost(p, med);
  for (bool improved = true; improved;) {
    improved = false;
    for (std::size_t k = 0; k < med.size(); ++k) {
      for (std::size_t cand = 0; cand < p.pts.size(); ++cand) {
        if (std::find(med.begin(), med.end(), cand) != med.end()) continue;
        auto trial = med;
        trial[k] = cand;
        const double tc = cost(p, trial);
        if (tc < c - 1e-12 * std::max(1.0, c)) {
          med = trial;
          c = tc;
          improved = true;
        }
      }
    }
  }
  return med;
}

}  // namespace

double inertia_of(const std::vector<std::array<double, 3>>& points,
                  const std::vector<std::size_t>& medoids) {
  Problem p{points, std::vector<double>(points.size(), 1.0)};
  return cost(p, medoids);
}

Clustering cluster_curves(const std::vector<PixelFeature>& features, int K, bool enhanced,
                          std::uint64_t seed, const ClusterOptions& opts) {
  if (K < 1) throw Error(ErrorCode::InvalidArgument, "K must be at least 1");
  if (static_cast<std::size_t>(K) > features.size())
    throw Error(ErrorCode::TooFewPixels, "fewer pixels than clusters");

  const auto all = feature_space(features, enhanced, opts.enhance_weight);

  // Collapse identical colours into weighted points; fall back to raw pixels
  // when there are fewer distinct colours than clusters.
  std::vector<std::size_t> rep_of(features.size());
  std::vector<std::size_t> reps;
  Problem p;
  {
    std::map<Rgb, std::size_t> seen;
    for (std::size_t i = 0; i < features.size(); ++i) {
      auto [it, fresh] = seen.emplace(features[i].rgb, reps.size());
      if (fresh) reps.push_back(i);
      rep_of[i] = it->second;
    }
    if (reps.size() < static_cast<std::size_t>(K)) {
      reps.resize(features.size());
      std::iota(reps.begin(), reps.end(), 0);
      std::iota(rep_of.begin(), rep_of.end(), 0);
    }
    p.w.assign(reps.size(), 0.0);
    for (std::size_t i = 0; i < features.size(); ++i) p.w[rep_of[i]] += 1.0;
    for (auto r : reps) p.pts.push_back(all[r]);
  }

  std::vector<std::size_t> best;
  double best_cost = std::numeric_limits<double>::infinity();
  const int restarts = K == 1 ? 1 : std::max(1, opts.restarts);
  for (int r = 0; r < restarts; ++r) {
    std::mt19937_64 rng(seed + static_cast<std::uint64_t>(r));
    auto med = voronoi_iterate(p, init_pp(p, K, rng), opts);
    if (p.pts.size() <= opts.swap_refine_limit) med = swap_refine(p, med);
    const double c = cost(p, med);
    if (c < best_cost) {
      best_cost = c;
      best = med;
    }
  }

  // Canonical label order: by the medoid's first pixel index.
  std::vector<std::size_t> slot(best.size());
  std::iota(slot.begin(), slot.end(), 0);
  std::sort(slot.begin(), slot.end(), [&](std::size_t a, std::size_t b) {
    return reps[best[a]] < reps[best[b]];
  });
  std::vector<int> label_of_slot(best.size());
  for (std::size_t l = 0; l < slot.size(); ++l) label_of_slot[slot[l]] = static_cast<int>(l);

  Clustering out;
  out.inertia = 0;
  out.labels.resize(features.size());
  out.clusters.resize(best.size());
  for (std::size_t l = 0; l < slot.size(); ++l) {
    out.clusters[l].label = static_cast<int>(l);
    out.clusters[l].medoid = reps[best[slot[l]]];
  }
  for (std::size_t i = 0; i < features.size(); ++i) {
    const std::size_t q = rep_of[i];
    int s;
    const auto hit = std::find(best.begin(), best.end(), q);
    if (hit != best.end())
      s = static_cast<int>(hit - best.begin());  // a medoid belongs to its own cluster
    else
      s = nearest(p, q, best).first;
    const int l = label_of_slot[s];
    out.labels[i] = l;
    out.clusters[l].members.push_back(i);
    out.inertia += dist(all[i], all[out.clusters[l].medoid]);
  }
  return out;
}

std::vector<double> consensus_scores(const std::vector<std::pair<double, double>>& pts,
                                     const std::vector<int>& labels, int k) {
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be at least 1");
  if (labels.size() != pts.size()) throw Error(ErrorCode::InvalidArgument, "label count mismatch");
  const std::size_t n = pts.size();
  if (n < static_cast<std::size_t>(k) + 1)
    throw Error(ErrorCode::InsufficientNeighbors, "need at least k+1 points");

  double minx = pts[0].first, maxx = minx, miny = pts[0].second, maxy = miny;
  for (const auto& [x, y] : pts) {
    minx = std::min(minx, x);
    maxx = std::max(maxx, x);
    miny = std::min(miny, y);
    maxy = std::max(maxy, y);
  }
  const double area = std::max(1e-12, (maxx - minx) * (maxy - miny));
  double cell = std::sqrt(area * std::max(2, k) / static_cast<double>(n));
  // Collinear sets have no area; keep the grid near n cells per side.
  cell = std::max(cell, std::max(maxx - minx, maxy - miny) / static_cast<double>(n));
  if (!(cell > 0)) cell = 1.0;
  const long gx = static_cast<long>(std::floor((maxx - minx) / cell)) + 1;
  const long gy = static_cast<long>(std::floor((maxy - miny) / cell)) + 1;
  std::vector<std::vector<std::size_t>> grid(static_cast<std::size_t>(gx * gy));
  auto cx = [&](double x) { return std::min(gx - 1, static_cast<long>((x - minx) / cell)); };
  auto cy = [&](double y) { return std::min(gy - 1, static_cast<long>((y - miny) / cell)); };
  for (std::size_t i = 0; i < n; ++i) grid[cy(pts[i].second) * gx + cx(pts[i].first)].push_back(i);

  std::vector<double> out(n);
  std::vector<std::pair<double, std::size_t>> cand;
  for (std::size_t i = 0; i < n; ++i) {
    const long ix = cx(pts[i].first), iy = cy(pts[i].second);
    cand.clear();
    for (long r = 0;; ++r) {
      for (long y = iy - r; y <= iy + r; ++y) {
        if (y < 0 || y >= gy) continue;
        for (long x = ix - r; x <= ix + r; ++x) {
          if (x < 0 || x >= gx) continue;
          if (std::max(std::abs(x - ix), std::abs(y - iy)) != r) continue;
          for (auto j : grid[y * gx + x]) {
            if (j == i) continue;
            const double dx = pts[i].first - pts[j].first, dy = pts[i].second - pts[j].second;
            cand.emplace_back(dx * dx + dy * dy, j);
          }
        }
      }
      if (cand.size() >= static_cast<std::size_t>(k)) {
        std::nth_element(cand.begin(), cand.begin() + (k - 1), cand.end());
        const double kth = cand[k - 1].first;
        const double reach = r * cell;
        const bool covered = (ix - r <= 0 && iy - r <= 0 && ix + r >= gx - 1 && iy + r >= gy - 1);
        if (kth < reach * reach || covered) break;
      } else if (ix - r <= 0 && iy - r <= 0 && ix + r >= gx - 1 && iy + r >= gy - 1) {
        break;
      }
    }
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
    double s = 0;
    for (int j = 0; j < k; ++j) {
      const double w = 1.0 / (cand[j].first + kConsensusEpsilon);
      s += (labels[cand[j].second] == labels[i] ? 1.0 : -1.0) * w;
    }
    out[i] = s / k;
  }
  return out;
}

TracePath trace_path(const std::vector<std::pair<int, int>>& px, const TraceOptions& opts) {
  TracePath out;
  const std::size_t n = px.size();
  if (n == 0) return out;

  const int cs = std::max(1, static_cast<int>(std::ceil(opts.step_radius)));
  std::map<std::pair<int, int>, std::vector<std::size_t>> grid;
  auto cell_of = [&](std::size_t i) {
    return std::pair<int, int>{px[i].first >= 0 ? px[i].first / cs : -1 - (-px[i].first - 1) / cs,
                               px[i].second >= 0 ? px[i].second / cs
                                                 : -1 - (-px[i].second - 1) / cs};
  };
  for (std::size_t i = 0; i < n; ++i) grid[cell_of(i)].push_back(i);

  std::vector<char> used(n, 0);
  auto better = [&](std::size_t a, long da, std::size_t b, long db) {
    if (da != db) return da < db;
    if (px[a].first != px[b].first) return px[a].first < px[b].first;
    return px[a].second < px[b].second;
  };
  auto d2 = [&](std::size_t a, std::size_t b) {
    const long dx = px[a].first - px[b].first, dy = px[a].second - px[b].second;
    return dx * dx + dy * dy;
  };

  std::size_t start = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (px[i].first < px[start].first ||
        (px[i].first == px[start].first && px[i].second < px[start].second))
      start = i;

  // Greedy walk, split into segments at every jump.
  std::vector<std::vector<std::size_t>> segments{{start}};
  used[start] = 1;
  std::size_t cur = start;
  const long r2 = static_cast<long>(opts.step_radius * opts.step_radius);
  for (;;) {
    std::size_t best = n;
    long bd = 0;
    const auto [gx, gy] = cell_of(cur);
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        auto it = grid.find({gx + dx, gy + dy});
        if (it == grid.end()) continue;
        for (auto j : it->second) {
          if (used[j] || px[j].first < px[cur].first - opts.backtrack) continue;
          const long d = d2(cur, j);
          if (d > r2) continue;
          if (best == n || better(j, d, best, bd)) {
            best = j;
            bd = d;
          }
        }
      }
    if (best == n) {
      for (std::size_t j = 0; j < n; ++j) {
        if (used[j] || px[j].first < px[cur].first - opts.backtrack) continue;
        const long d = d2(cur, j);
        if (best == n || better(j, d, best, bd)) {
          best = j;
          bd = d;
        }
      }
      if (best == n) break;
      segments.emplace_back();
    }
    used[best] = 1;
    segments.back().push_back(best);
    cur = best;
  }

  std::size_t largest = 0;
  for (const auto& s : segments) largest = std::max(largest, s.size());
  auto near_any = [&](std::size_t i, const std::vector<char>& on) {
    const auto [gx, gy] = cell_of(i);
    const long lim = static_cast<long>(opts.outlier_distance * opts.outlier_distance);
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        auto it = grid.find({gx + dx, gy + dy});
        if (it == grid.end()) continue;
        for (auto j : it->second)
          if (on[j] && d2(i, j) <= lim) return true;
      }
    return false;
  };

  std::vector<char> on_path(n, 0);
  std::vector<char> big(segments.size(), 0);
  for (std::size_t s = 0; s < segments.size(); ++s) {
    if (segments[s].size() >= opts.small_segment_fraction * static_cast<double>(largest)) {
      big[s] = 1;
      for (auto i : segments[s]) on_path[i] = 1;
    }
  }
  // Small segments survive only when they sit close to the main path.
  for (std::size_t s = 0; s < segments.size(); ++s) {
    if (big[s]) continue;
    bool close = false;
    for (auto i : segments[s])
      if (near_any(i, on_path)) {
        close = true;
        break;
      }
    if (close) {
      big[s] = 1;
    } else {
      for (auto i : segments[s]) out.outliers.push_back(i);
    }
  }
  for (std::size_t s = 0; s < segments.size(); ++s)
    if (big[s])
      for (auto i : segments[s]) {
        on_path[i] = 1;
        out.order.push_back(i);
      }

  // Pixels skipped by the walk (left behind the backtrack window).
  std::vector<std::size_t> left;
  for (std::size_t i = 0; i < n; ++i)
    if (!used[i]) left.push_back(i);
  if (!left.empty()) {
    std::vector<std::size_t> pos(n, n);
    for (std::size_t k = 0; k < out.order.size(); ++k) pos[out.order[k]] = k;
    std::vector<std::vector<std::size_t>> after(out.order.size());
    const long lim = static_cast<long>(opts.outlier_distance * opts.outlier_distance);
    for (auto i : left) {
      std::size_t best = n;
      long bd = 0;
      const auto [gx, gy] = cell_of(i);
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          auto it = grid.find({gx + dx, gy + dy});
          if (it == grid.end()) continue;
          for (auto j : it->second) {
            if (pos[j] == n) continue;
            const long d = d2(i, j);
            if (d <= lim && (best == n || d < bd || (d == bd && pos[j] < pos[best]))) {
              best = j;
              bd = d;
            }
          }
        }
      if (best == n)
        out.outliers.push_back(i);
      else
        after[pos[best]].push_back(i);
    }
    std::vector<std::size_t> merged;
    for (std::size_t k = 0; k < out.order.size(); ++k) {
      merged.push_back(out.order[k]);
      for (auto i : after[k]) merged.push_back(i);
    }
    out.order = std::move(merged);
  }
  std::sort(out.outliers.begin(), out.outliers.end());
  return out;
}

CurveTrace build_trace(const std::vector<std::pair<int, int>>& px, const TracePath& path,
                       const std::vector<double>& pixel_scores, const geometry::Calibration& cal,
                       int label) {
  CurveTrace tr;
  tr.label = label;
  if (path.order.empty()) return tr;

  std::map<int, std::vector<std::pair<int, double>>> cols;  // u -> (v, score)
  for (auto i : path.order) {
    tr.pixel_path.emplace_back(px[i].first, px[i].second);
    cols[px[i].first].emplace_back(px[i].second, pixel_scores.empty() ? 1.0 : pixel_scores[i]);
  }
  // A column mixing confident and doubtful pixels keeps only the confident
  // ones; otherwise one stray pixel from another curve sets the level.
  for (auto& [u, vs] : cols) {
    std::vector<std::pair<int, double>> sure;
    for (const auto& p : vs)
      if (p.second >= 0) sure.push_back(p);
    if (!sure.empty() && sure.size() < vs.size()) vs = std::move(sure);
  }

  // Stroke width: median run length over columns holding a single run.
  std::vector<int> widths;
  for (auto& [u, vs] : cols) {
    std::sort(vs.begin(), vs.end());
    bool single = true;
    for (std::size_t k = 1; k < vs.size(); ++k)
      if (vs[k].first - vs[k - 1].first > 1) single = false;
    if (single) widths.push_back(vs.back().first - vs.front().first + 1);
  }
  double w = 1;
  if (!widths.empty()) {
    std::nth_element(widths.begin(), widths.begin() + static_cast<std::ptrdiff_t>(widths.size() / 2),
                     widths.end());
    w = widths[widths.size() / 2];
  }
  const double half = 0.5 * (w - 1);

  const auto& y = cal.y();
  const double s_lo = std::min(y.min, y.max), s_hi = std::max(y.min, y.max);
  double prev_bottom = -1;
  for (const auto& [u, vs] : cols) {
    const double bottom = vs.back().first;
    const double v = bottom - half;
    // Columns spanning a vertical drop show the lower level; shift them by half
    // a stroke so the drop lands on the line's centre.
    const bool drop = prev_bottom >= 0 && bottom - prev_bottom > w;
    double uu = u;
    if (vs.back().first - vs.front().first + 1 > w + 1 || drop) uu = u + half;
    prev_bottom = bottom;
    double sc = 0;
    for (const auto& [vv, s] : vs) sc += s;
    sc /= static_cast<double>(vs.size());
    const auto [t, s] = cal.calibrate(uu, v);
    tr.points.emplace_back(t, std::clamp(s, s_lo, s_hi));
    tr.scores.push_back(sc);
  }
  std::vector<std::size_t> idx(tr.points.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return tr.points[a].first < tr.points[b].first;
  });
  std::vector<std::pair<double, double>> pts;
  std::vector<double> scs;
  for (auto i : idx) {
    pts.push_back(tr.points[i]);
    scs.push_back(tr.scores[i]);
  }
  tr.points = std::move(pts);
  tr.scores = std::move(scs);
  return tr;
}

std::vector<CurveTrace> repair_overlaps(const std::vector<CurveTrace>& traces, double threshold) {
  std::vector<CurveTrace> out = traces;
  for (auto& tr : out) {
    const std::size_t n = tr.points.size();
    if (n == 0) continue;
    std::vector<std::size_t> good;
    for (std::size_t i = 0; i < n; ++i)
      if (i >= tr.scores.size() || !(tr.scores[i] < threshold)) good.push_back(i);
    if (good.empty())
      throw Error(ErrorCode::UnresolvableOverlap,
                  "trace " + std::to_string(tr.label) + " has no confident points");
    if (good.size() < n) {
      std::size_t g = 0;
      for (std::size_t i = 0; i < n; ++i) {
        while (g + 1 < good.size() && good[g + 1] <= i) ++g;
        if (good[g] == i) continue;
        if (i < good.front()) {
          tr.points[i].second = tr.points[good.front()].second;
        } else if (g + 1 >= good.size()) {
          tr.points[i].second = tr.points[good.back()].second;
        } else {
          const auto& a = tr.points[good[g]];
          const auto& b = tr.points[good[g + 1]];
          const double span = b.first - a.first;
          const double f = span > 0 ? (tr.points[i].first - a.first) / span : 0.0;
          tr.points[i].second = a.second + f * (b.second - a.second);
        }
      }
    }
    for (std::size_t i = 1; i < n; ++i) {
      if (tr.points[i].first < tr.points[i - 1].first) tr.points[i].first = tr.points[i - 1].first;
      tr.points[i].second = std::min(tr.points[i].second, tr.points[i - 1].second);
    }
  }
  return out;
}

std::string traces_to_json(const std::vector<CurveTrace>& traces) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& tr : traces) {
    nlohmann::json pts = nlohmann::json::array(), path = nlohmann::json::array();
    for (const auto& [t, s] : tr.points) pts.push_back({t, s});
    for (const auto& [u, v] : tr.pixel_path) path.push_back({u, v});
    arr.push_back({{"label", tr.label}, {"group", tr.group}, {"points", pts},
                   {"pixel_path", path}, {"scores", tr.scores}});
  }
  return nlohmann::json{{"traces", arr}}.dump();
}

}  // namespace kmgpt::curves
