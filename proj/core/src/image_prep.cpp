#include "kmgpt/image_prep.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <json.hpp>
#include <opencv2/imgproc.hpp>
#include <opencv2/photo.hpp>

#include "cv_bridge.hpp"
#include "kmgpt/errors.hpp"

namespace kmgpt::image {

using nlohmann::json;

RegionMask RegionMask::crop(int x0, int y0, int x1, int y1) {
  RegionMask m;
  m.kind = Kind::Crop;
  m.rect = {x0, y0, x1, y1};
  return m;
}

RegionMask RegionMask::erase(std::vector<std::pair<double, double>> points, double radius) {
  RegionMask m;
  m.kind = Kind::Erase;
  m.stroke = {std::move(points), radius};
  return m;
}

std::vector<RegionMask> parse_edits(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("edits: ") + e.what());
  }
  std::vector<RegionMask> out;
  if (!doc.is_object() || !doc.contains("edits") || !doc["edits"].is_array())
    throw Error(ErrorCode::InvalidArgument, "edits: expected {\"edits\": [...]}");
  for (const auto& e : doc["edits"]) {
    try {
      const auto kind = e.at("kind").get<std::string>();
      if (kind == "crop") {
        out.push_back(RegionMask::crop(e.at("x0").get<int>(), e.at("y0").get<int>(),
                                       e.at("x1").get<int>(), e.at("y1").get<int>()));
      } else if (kind == "erase") {
        std::vector<std::pair<double, double>> pts;
        for (const auto& p : e.at("points")) pts.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
        out.push_back(RegionMask::erase(std::move(pts), e.at("radius").get<double>()));
      } else {
        throw Error(ErrorCode::InvalidArgument, "edits: unknown kind '" + kind + "'");
      }
    } catch (const json::exception& ex) {
      throw Error(ErrorCode::InvalidArgument, std::string("edits: ") + ex.what());
    }
  }
  return out;
}

std::string edits_to_json(const std::vector<RegionMask>& masks) {
  json arr = json::array();
  for (const auto& m : masks) {
    if (m.kind == RegionMask::Kind::Crop) {
      arr.push_back({{"kind", "crop"}, {"x0", m.rect.x0}, {"y0", m.rect.y0},
                     {"x1", m.rect.x1}, {"y1", m.rect.y1}});
    } else {
      json pts = json::array();
      for (const auto& [x, y] : m.stroke.points) pts.push_back({x, y});
      arr.push_back({{"kind", "erase"}, {"points", pts}, {"radius", m.stroke.radius}});
    }
  }
  return json{{"edits", arr}}.dump(2);
}

Rgb border_median(const RasterImage& img) {
  std::array<std::vector<std::uint8_t>, 3> ch;
  auto push = [&](int x, int y) {
    const Rgb c = img.at(x, y);
    for (int k = 0; k < 3; ++k) ch[k].push_back(c[k]);
  };
  const int w = img.width(), h = img.height();
  for (int x = 0; x < w; ++x) {
    push(x, 0);
    if (h > 1) push(x, h - 1);
  }
  for (int y = 1; y + 1 < h; ++y) {
    push(0, y);
    if (w > 1) push(w - 1, y);
  }
  Rgb out{};
  for (int k = 0; k < 3; ++k) {
    auto& v = ch[k];
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    out[k] = *mid;
  }
  return out;
}

namespace {

double segment_distance2(double px, double py, double ax, double ay, double bx, double by) {
  const double dx = bx - ax, dy = by - ay;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double qx = ax + t * dx - px, qy = ay + t * dy - py;
  return qx * qx + qy * qy;
}

void apply_erase(RasterImage& img, const EraseStroke& s) {
  const Rgb bg = border_median(img);
  const double r2 = s.radius * s.radius;
  double minx = 1e300, miny = 1e300, maxx = -1e300, maxy = -1e300;
  for (const auto& [x, y] : s.points) {
    minx = std::min(minx, x);
    maxx = std::max(maxx, x);
    miny = std::min(miny, y);
    maxy = std::max(maxy, y);
  }
  const int x0 = std::max(0, static_cast<int>(std::floor(minx - s.radius)));
  const int x1 = std::min(img.width() - 1, static_cast<int>(std::ceil(maxx + s.radius)));
  const int y0 = std::max(0, static_cast<int>(std::floor(miny - s.radius)));
  const int y1 = std::min(img.height() - 1, static_cast<int>(std::ceil(maxy + s.radius)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      bool hit = false;
      if (s.points.size() == 1) {
        hit = segment_distance2(x, y, s.points[0].first, s.points[0].second, s.points[0].first,
                                s.points[0].second) <= r2;
      }
      for (std::size_t i = 0; !hit && i + 1 < s.points.size(); ++i) {
        const auto& a = s.points[i];
        const auto& b = s.points[i + 1];
        hit = segment_distance2(x, y, a.first, a.second, b.first, b.second) <= r2;
      }
      if (hit) img.set(x, y, bg);
    }
  }
}

}  // namespace

RasterImage apply_edits(const RasterImage& image, const std::vector<RegionMask>& masks) {
  RasterImage cur = image;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const auto& m = masks[i];
    if (m.kind == RegionMask::Kind::Crop) {
      const auto& r = m.rect;
      if (r.x0 < 0 || r.y0 < 0 || r.x1 > cur.width() || r.y1 > cur.height() || r.x1 <= r.x0 ||
          r.y1 <= r.y0)
        throw MaskError(i, "crop rectangle outside image bounds");
      cur = kmgpt::crop(cur, {r.x0, r.y0, r.x1, r.y1});
    } else {
      const auto& s = m.stroke;
      if (!(s.radius > 0)) throw MaskError(i, "stroke radius must be positive");
      if (s.points.empty()) throw MaskError(i, "stroke has no points");
      for (const auto& [x, y] : s.points) {
        if (!(x >= 0 && y >= 0 && x <= cur.width() - 1 && y <= cur.height() - 1))
          throw MaskError(i, "stroke point outside image bounds");
      }
      apply_erase(cur, s);
    }
  }
  return cur;
}

namespace {

double lanczos3(double x) {
  if (x == 0.0) return 1.0;
  if (std::abs(x) >= 3.0) return 0.0;
  const double px = std::numbers::pi * x;
  return 3.0 * std::sin(px) * std::sin(px / 3.0) / (px * px);
}

// Output index i samples source coordinate (i + 0.5) / 2 - 0.5. Only two phases
// exist at exactly 2x, so the taps are precomputed once.
struct Taps {
  int offset[2];
  double w[2][6];
};

Taps make_taps() {
  Taps t{};
  for (int phase = 0; phase < 2; ++phase) {
    const double src = (phase + 0.5) / 2.0 - 0.5;  // relative to i/2
    const int base = static_cast<int>(std::floor(src)) - 2;
    t.offset[phase] = base;
    double sum = 0;
    for (int k = 0; k < 6; ++k) {
      t.w[phase][k] = lanczos3(src - (base + k));
      sum += t.w[phase][k];
    }
    for (int k = 0; k < 6; ++k) t.w[phase][k] /= sum;
  }
  return t;
}

}  // namespace

RasterImage LanczosUpscaler::upscale2x(const RasterImage& img) const {
  static const Taps taps = make_taps();
  const int w = img.width(), h = img.height();
  const int W = 2 * w, H = 2 * h;
  const auto& src = img.data();
  std::vector<double> tmp(static_cast<std::size_t>(W) * h * 3);
  for (int y = 0; y < h; ++y) {
    for (int X = 0; X < W; ++X) {
      const int phase = X & 1;
      const int base = X / 2 + taps.offset[phase];
      double acc[3] = {0, 0, 0};
      for (int k = 0; k < 6; ++k) {
        const int sx = std::clamp(base + k, 0, w - 1);
        const std::size_t si = (static_cast<std::size_t>(y) * w + sx) * 3;
        for (int c = 0; c < 3; ++c) acc[c] += taps.w[phase][k] * src[si + c];
      }
      const std::size_t ti = (static_cast<std::size_t>(y) * W + X) * 3;
      for (int c = 0; c < 3; ++c) tmp[ti + c] = acc[c];
    }
  }
  std::vector<std::uint8_t> out(static_cast<std::size_t>(W) * H * 3);
  for (int Y = 0; Y < H; ++Y) {
    const int phase = Y & 1;
    const int base = Y / 2 + taps.offset[phase];
    for (int X = 0; X < W; ++X) {
      double acc[3] = {0, 0, 0};
      for (int k = 0; k < 6; ++k) {
        const int sy = std::clamp(base + k, 0, h - 1);
        const std::size_t ti = (static_cast<std::size_t>(sy) * W + X) * 3;
        for (int c = 0; c < 3; ++c) acc[c] += taps.w[phase][k] * tmp[ti + c];
      }
      const std::size_t oi = (static_cast<std::size_t>(Y) * W + X) * 3;
      for (int c = 0; c < 3; ++c)
        out[oi + c] = static_cast<std::uint8_t>(std::clamp(std::lround(acc[c]), 0L, 255L));
    }
  }
  return RasterImage(W, H, std::move(out));
}

RasterImage sharpen(const RasterImage& image) {
  const cv::Mat kernel = (cv::Mat_<float>(3, 3) << 0, -1, 0, -1, 5, -1, 0, -1, 0);
  cv::Mat out;
  cv::filter2D(detail::to_bgr(image), out, -1, kernel, cv::Point(-1, -1), 0, cv::BORDER_REPLICATE);
  return detail::from_bgr(out);
}

EnhanceStages enhance_stages(const RasterImage& image, const EnhanceOptions& opts,
                             const Upscaler* upscaler) {
  if (image.width() <= 4 || image.height() <= 4)
    throw Error(ErrorCode::DegenerateImage, "image must be larger than 4x4 pixels");
  static const LanczosUpscaler default_upscaler;
  const Upscaler& up = upscaler ? *upscaler : default_upscaler;

  EnhanceStages st;
  st.upscaled = up.upscale2x(image);

  const int w = st.upscaled.width(), h = st.upscaled.height();
  const int long_edge = std::max(w, h);
  if (opts.target_long_edge > 0 && long_edge != opts.target_long_edge) {
    const double scale = static_cast<double>(opts.target_long_edge) / long_edge;
    const int nw = std::max(1, static_cast<int>(std::lround(w * scale)));
    const int nh = std::max(1, static_cast<int>(std::lround(h * scale)));
    cv::Mat resized;
    cv::resize(detail::to_bgr(st.upscaled), resized, cv::Size(nw, nh), 0, 0,
               scale < 1.0 ? cv::INTER_AREA : cv::INTER_CUBIC);
    st.resized = detail::from_bgr(resized);
  } else {
    st.resized = st.upscaled;
  }

  st.sharpened = sharpen(st.resized);

  if (opts.denoise) {
    // NL-means on luminance only; chroma is left untouched.
    cv::Mat ycc;
    cv::cvtColor(detail::to_bgr(st.sharpened), ycc, cv::COLOR_BGR2YCrCb);
    std::vector<cv::Mat> planes;
    cv::split(ycc, planes);
    cv::Mat y;
    cv::fastNlMeansDenoising(planes[0], y, opts.denoise_h, opts.template_window, opts.search_window);
    planes[0] = y;
    cv::merge(planes, ycc);
    cv::Mat bgr;
    cv::cvtColor(ycc, bgr, cv::COLOR_YCrCb2BGR);
    st.denoised = detail::from_bgr(bgr);
  } else {
    st.denoised = st.sharpened;
  }
  return st;
}

RasterImage enhance(const RasterImage& image, const EnhanceOptions& opts, const Upscaler* upscaler) {
  return enhance_stages(image, opts, upscaler).denoised;
}

BinarizedImage binarize(const RasterImage& image, RegionKind kind) {
  BinarizedImage out;
  out.width = image.width();
  out.height = image.height();
  out.bits.assign(static_cast<std::size_t>(out.width) * out.height, 0);
  if (kind == RegionKind::RiskTable) {
    out.mode = BinarizedImage::Mode::AdaptiveGaussian;
    cv::Mat bin;
    cv::adaptiveThreshold(detail::to_gray(image), bin, 255, cv::ADAPTIVE_THRESH_GAUSSIAN_C,
                          cv::THRESH_BINARY_INV, 31, 10);
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x)
        out.bits[static_cast<std::size_t>(y) * out.width + x] = bin.at<std::uint8_t>(y, x) ? 1 : 0;
  } else {
    out.mode = BinarizedImage::Mode::GlobalFixed;
    const auto& d = image.data();
    for (std::size_t i = 0; i < out.bits.size(); ++i) {
      const int mx = std::max({d[3 * i], d[3 * i + 1], d[3 * i + 2]});
      const int mn = std::min({d[3 * i], d[3 * i + 1], d[3 * i + 2]});
      out.bits[i] = (mx + mn) < 256 ? 1 : 0;  // lightness (mx+mn)/2 < 128
    }
  }
  return out;
}

}  // namespace kmgpt::image
