#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace kmgpt {

using Rgb = std::array<std::uint8_t, 3>;

/// Row-major 8-bit RGB image.
class RasterImage {
 public:
  RasterImage() = default;
  RasterImage(int width, int height, Rgb fill = {255, 255, 255});
  RasterImage(int width, int height, std::vector<std::uint8_t> rgb);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool empty() const noexcept { return width_ == 0 || height_ == 0; }

  Rgb at(int x, int y) const;
  void set(int x, int y, Rgb c);
  bool contains(int x, int y) const noexcept {
    return x >= 0 && y >= 0 && x < width_ && y < height_;
  }

  const std::vector<std::uint8_t>& data() const noexcept { return rgb_; }
  std::vector<std::uint8_t>& data() noexcept { return rgb_; }

  bool operator==(const RasterImage& other) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> rgb_;
};

/// Decodes PNG or JPEG bytes. Throws Error(Io) on undecodable input.
RasterImage decode_image(const std::vector<std::uint8_t>& bytes);
RasterImage read_image(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_png(const RasterImage& image);
void write_png(const RasterImage& image, const std::filesystem::path& path);

/// Integer pixel rectangle, half-open: [x0, x1) x [y0, y1).
struct PixelRect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  int width() const noexcept { return x1 - x0; }
  int height() const noexcept { return y1 - y0; }
  bool operator==(const PixelRect&) const = default;
};

RasterImage crop(const RasterImage& image, const PixelRect& rect);

}  // namespace kmgpt
