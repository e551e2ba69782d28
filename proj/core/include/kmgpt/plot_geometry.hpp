#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kmgpt/raster.hpp"

namespace kmgpt::geometry {

/// Axis baselines in pixel coordinates. u_x0 is the y-axis column (time origin),
/// u_x1 the right end of the x-axis; v_y0 the top of the y-axis, v_y1 the x-axis row.
struct AxisGeometry {
  double u_x0 = 0, u_x1 = 0;
  double v_y0 = 0, v_y1 = 0;
  // Interior whitespace offsets measured inward from each baseline.
  int margin_left = 0;
  int margin_bottom = 0;
  // Stroke thickness of the vertical and horizontal axis, in px.
  int thickness_v = 1;
  int thickness_h = 1;
};

struct AxisRange {
  double min = 0, max = 1, increment = 1;
};

struct TickToken {
  std::string text;
  std::optional<double> numeric_value;
  double u = 0, v = 0;  // centre
  PixelRect box;
};

enum class Axis { X, Y };

struct LocateOptions {
  int ink_threshold = 128;        // gray level below which a pixel is ink
  double run_fraction = 0.5;      // of the longest run found
  double min_span_fraction = 0.2; // of the image dimension
  double margin_fraction = 0.05;  // whitespace criterion for margins
};

/// Finds the L-shaped axis frame from per-column and per-row ink runs.
AxisGeometry locate_axes(const RasterImage& image, const LocateOptions& opts = {});

/// Infers min, max and increment from numeric tick labels.
AxisRange detect_ranges(const std::vector<TickToken>& tokens, Axis axis);

/// Splits OCR tokens into x tick labels (first text row below the x-axis) and
/// y tick labels (left of the y-axis, within its vertical extent).
std::pair<std::vector<TickToken>, std::vector<TickToken>> assign_tokens(
    const std::vector<TickToken>& tokens, const AxisGeometry& geom);

/// Parses a tick label as a number; accepts "0.5", "50%", "-1", ",5".
std::optional<double> parse_number(const std::string& text);

/// Affine pixel <-> data map anchored at the axis endpoints.
class Calibration {
 public:
  Calibration(const AxisGeometry& geom, const AxisRange& x, const AxisRange& y);

  std::pair<double, double> calibrate(double u, double v) const;
  std::pair<double, double> inverse(double t, double s) const;

  double t(double u) const;
  double s(double v) const;
  double u(double t) const;
  double v(double s) const;

  const AxisGeometry& geometry() const noexcept { return geom_; }
  const AxisRange& x() const noexcept { return x_; }
  const AxisRange& y() const noexcept { return y_; }

 private:
  AxisGeometry geom_;
  AxisRange x_, y_;
};

}  // namespace kmgpt::geometry
