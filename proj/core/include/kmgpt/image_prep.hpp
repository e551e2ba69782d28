#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "kmgpt/raster.hpp"

namespace kmgpt::image {

struct CropRect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open, source pixels
};

struct EraseStroke {
  std::vector<std::pair<double, double>> points;
  double radius = 1.0;
};

/// One user edit. Masks are applied in order; each is interpreted in the
/// coordinates of the image produced by the previous edits.
struct RegionMask {
  enum class Kind { Crop, Erase } kind = Kind::Crop;
  CropRect rect;
  EraseStroke stroke;

  static RegionMask crop(int x0, int y0, int x1, int y1);
  static RegionMask erase(std::vector<std::pair<double, double>> points, double radius);
};

std::vector<RegionMask> parse_edits(const std::string& json_text);
std::string edits_to_json(const std::vector<RegionMask>& masks);

/// Median of the 1-px border ring, per channel.
Rgb border_median(const RasterImage& image);

/// Throws MaskError carrying the offending index when a mask does not fit.
RasterImage apply_edits(const RasterImage& image, const std::vector<RegionMask>& masks);

/// Pluggable 2x super-resolution backend.
class Upscaler {
 public:
  virtual ~Upscaler() = default;
  virtual RasterImage upscale2x(const RasterImage& image) const = 0;
};

/// Separable Lanczos-3 resampling at exactly twice the resolution.
class LanczosUpscaler final : public Upscaler {
 public:
  RasterImage upscale2x(const RasterImage& image) const override;
};

struct EnhanceOptions {
  int target_long_edge = 1600;
  float denoise_h = 10.0f;
  int template_window = 7;
  int search_window = 21;
  bool denoise = true;
};

struct EnhanceStages {
  RasterImage upscaled;
  RasterImage resized;
  RasterImage sharpened;
  RasterImage denoised;
};

EnhanceStages enhance_stages(const RasterImage& image, const EnhanceOptions& opts = {},
                             const Upscaler* upscaler = nullptr);
RasterImage enhance(const RasterImage& image, const EnhanceOptions& opts = {},
                    const Upscaler* upscaler = nullptr);

/// One 3x3 Laplacian sharpening pass (centre 5, cross -1).
RasterImage sharpen(const RasterImage& image);

enum class RegionKind { RiskTable, AxisLabels };

struct BinarizedImage {
  enum class Mode { AdaptiveGaussian, GlobalFixed };
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;  // 1 = ink
  Mode mode = Mode::GlobalFixed;

  bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
};

/// Risk tables get a Gaussian-weighted local threshold (31 px window, offset 10);
/// axis labels a global threshold at 128 on HSL lightness.
BinarizedImage binarize(const RasterImage& image, RegionKind kind);

}  // namespace kmgpt::image
