#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "kmgpt/plot_geometry.hpp"
#include "kmgpt/raster.hpp"

namespace kmgpt::curves {

struct PixelFeature {
  int u = 0, v = 0;
  double h = 0, s = 0, l = 0;
  Rgb rgb{};
};

struct Hsl {
  double h, s, l;
};
Hsl rgb_to_hsl(Rgb c);

struct FeatureOptions {
  int axis_clearance = 2;            // px kept clear of each baseline
  double min_lightness = 0.2;
  double background_fraction = 0.05; // colour-bin share that marks background
  int quantize_shift = 3;            // 256 >> 3 = 32 levels per channel
  int near_white = 215;              // every channel at or above this is background
};

/// Interior, non-background pixels with l >= 0.2.
std::vector<PixelFeature> extract_features(const RasterImage& image,
                                           const geometry::AxisGeometry& geom,
                                           const FeatureOptions& opts = {});

struct CurveCluster {
  int label = 0;
  std::vector<std::size_t> members;  // indices into the feature list
  std::size_t medoid = 0;            // feature index
};

struct Clustering {
  std::vector<int> labels;  // per feature
  std::vector<CurveCluster> clusters;
  double inertia = 0;
};

struct ClusterOptions {
  int restarts = 5;
  int max_iterations = 100;
  double enhance_weight = 100.0;
  // Members considered as medoid candidates per update; larger clusters
  // evaluate those nearest the weighted centroid.
  std::size_t candidate_cap = 200;
  // Swap refinement for small problems guarantees no single medoid swap improves.
  std::size_t swap_refine_limit = 64;
};

/// K-medoids over z-scored (h, s, l), Euclidean distance. Deterministic in seed.
Clustering cluster_curves(const std::vector<PixelFeature>& features, int K, bool enhanced,
                          std::uint64_t seed, const ClusterOptions& opts = {});

/// Feature-space vectors as used by the clustering (exposed for oracles).
std::vector<std::array<double, 3>> feature_space(const std::vector<PixelFeature>& features,
                                                 bool enhanced, double enhance_weight = 100.0);

/// Total distance from every point to the nearest of `medoids`.
double inertia_of(const std::vector<std::array<double, 3>>& points,
                  const std::vector<std::size_t>& medoids);

constexpr double kConsensusEpsilon = 1e-10;

/// score_i = (1/k) * sum over the k nearest neighbours j of I_ij / (d_ij^2 + eps),
/// I_ij = +1 on matching labels, -1 otherwise. Neighbour ties resolve by index.
std::vector<double> consensus_scores(const std::vector<std::pair<double, double>>& points,
                                     const std::vector<int>& labels, int k = 8);

struct TracePath {
  std::vector<std::size_t> order;     // indices into the input pixel list
  std::vector<std::size_t> outliers;  // discarded
};

struct TraceOptions {
  int backtrack = 2;
  double step_radius = 10.0;
  double outlier_distance = 10.0;
  double small_segment_fraction = 0.1;
};

/// Greedy nearest-neighbour ordering from the leftmost pixel.
TracePath trace_path(const std::vector<std::pair<int, int>>& pixels, const TraceOptions& opts = {});

struct CurveTrace {
  int label = 0;
  std::string group;
  std::vector<std::pair<double, double>> points;      // (t, s)
  std::vector<std::pair<double, double>> pixel_path;  // (u, v)
  std::vector<double> scores;
};

/// Collapses an ordered pixel path to one calibrated point per column.
CurveTrace build_trace(const std::vector<std::pair<int, int>>& pixels, const TracePath& path,
                       const std::vector<double>& pixel_scores,
                       const geometry::Calibration& cal, int label);

/// Replaces points with negative consensus by interpolation between confident
/// neighbours and enforces s non-increasing in t.
std::vector<CurveTrace> repair_overlaps(const std::vector<CurveTrace>& traces,
                                        double threshold = 0.0);

std::string traces_to_json(const std::vector<CurveTrace>& traces);

}  // namespace kmgpt::curves
