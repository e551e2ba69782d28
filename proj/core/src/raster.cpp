#include "kmgpt/raster.hpp"

#include <fstream>
#include <iterator>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "cv_bridge.hpp"
#include "kmgpt/errors.hpp"

namespace kmgpt {

RasterImage::RasterImage(int width, int height, Rgb fill) : width_(width), height_(height) {
  if (width < 1 || height < 1)
    throw Error(ErrorCode::InvalidArgument, "image dimensions must be positive");
  rgb_.resize(static_cast<std::size_t>(width) * height * 3);
  for (std::size_t i = 0; i < rgb_.size(); i += 3) {
    rgb_[i] = fill[0];
    rgb_[i + 1] = fill[1];
    rgb_[i + 2] = fill[2];
  }
}

RasterImage::RasterImage(int width, int height, std::vector<std::uint8_t> rgb)
    : width_(width), height_(height), rgb_(std::move(rgb)) {
  if (width < 1 || height < 1)
    throw Error(ErrorCode::InvalidArgument, "image dimensions must be positive");
  if (rgb_.size() != static_cast<std::size_t>(width) * height * 3)
    throw Error(ErrorCode::InvalidArgument, "pixel buffer size does not match dimensions");
}

Rgb RasterImage::at(int x, int y) const {
  const std::size_t i = (static_cast<std::size_t>(y) * width_ + x) * 3;
  return {rgb_[i], rgb_[i + 1], rgb_[i + 2]};
}

void RasterImage::set(int x, int y, Rgb c) {
  const std::size_t i = (static_cast<std::size_t>(y) * width_ + x) * 3;
  rgb_[i] = c[0];
  rgb_[i + 1] = c[1];
  rgb_[i + 2] = c[2];
}

namespace detail {

cv::Mat to_bgr(const RasterImage& image) {
  cv::Mat rgb(image.height(), image.width(), CV_8UC3,
              const_cast<std::uint8_t*>(image.data().data()));
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  return bgr;
}

RasterImage from_bgr(const cv::Mat& bgr) {
  cv::Mat rgb;
  if (bgr.channels() == 1)
    cv::cvtColor(bgr, rgb, cv::COLOR_GRAY2RGB);
  else if (bgr.channels() == 4)
    cv::cvtColor(bgr, rgb, cv::COLOR_BGRA2RGB);
  else
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  if (!rgb.isContinuous()) rgb = rgb.clone();
  std::vector<std::uint8_t> buf(rgb.data, rgb.data + rgb.total() * 3);
  return RasterImage(rgb.cols, rgb.rows, std::move(buf));
}

cv::Mat to_gray(const RasterImage& image) {
  cv::Mat gray;
  cv::cvtColor(to_bgr(image), gray, cv::COLOR_BGR2GRAY);
  return gray;
}

}  // namespace detail

RasterImage decode_image(const std::vector<std::uint8_t>& bytes) {
  if (bytes.empty()) throw Error(ErrorCode::Io, "empty image buffer");
  cv::Mat mat = cv::imdecode(bytes, cv::IMREAD_COLOR);
  if (mat.empty()) throw Error(ErrorCode::Io, "could not decode image (expected PNG or JPEG)");
  return detail::from_bgr(mat);
}

RasterImage read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_image(bytes);
}

std::vector<std::uint8_t> encode_png(const RasterImage& image) {
  std::vector<std::uint8_t> out;
  // Fixed compression level keeps the byte stream stable across runs.
  if (!cv::imencode(".png", detail::to_bgr(image), out, {cv::IMWRITE_PNG_COMPRESSION, 6}))
    throw Error(ErrorCode::Io, "png encoding failed");
  return out;
}

void write_png(const RasterImage& image, const std::filesystem::path& path) {
  const auto bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

RasterImage crop(const RasterImage& image, const PixelRect& r) {
  if (r.x0 < 0 || r.y0 < 0 || r.x1 > image.width() || r.y1 > image.height() || r.width() < 1 ||
      r.height() < 1)
    throw Error(ErrorCode::InvalidArgument, "crop rectangle outside image");
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(r.width()) * r.height() * 3);
  const auto& src = image.data();
  for (int y = 0; y < r.height(); ++y) {
    const std::size_t s = (static_cast<std::size_t>(r.y0 + y) * image.width() + r.x0) * 3;
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(s), r.width() * 3,
                buf.begin() + static_cast<std::ptrdiff_t>(y) * r.width() * 3);
  }
  return RasterImage(r.width(), r.height(), std::move(buf));
}

}  // namespace kmgpt
