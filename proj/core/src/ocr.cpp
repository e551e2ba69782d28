#include "kmgpt/ocr.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>
#include <opencv2/imgproc.hpp>

#include "kmgpt/errors.hpp"

namespace kmgpt::ocr {

namespace {

constexpr int kGrid = 16;
constexpr double kGeomWeight = 6.0;
constexpr double kHoleWeight = 0.05;
const std::string kNumericChars = "0123456789.-%";
const std::string kAllChars =
    "0123456789.-%()ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz";

struct Glyph {
  PixelRect box;  // region-relative
  cv::Mat mask;   // CV_8U, 1 = ink, box-sized
};

struct Features {
  std::array<float, kGrid * kGrid> shape{};
  double rel_h = 1, rel_cy = 0.5, log_aspect = 0;
  int holes = 0;
};

// Background regions not reachable from the border (8 has two, 6 has one).
int count_holes(const cv::Mat& mask) {
  cv::Mat bg;
  cv::copyMakeBorder(mask, bg, 1, 1, 1, 1, cv::BORDER_CONSTANT, cv::Scalar(0));
  bg = (bg == 0);
  // Single-pixel pinholes are antialiasing artifacts, not counters.
  cv::Mat labels, stats, centroids;
  const int n = cv::connectedComponentsWithStats(bg, labels, stats, centroids, 4, CV_32S);
  const int outside = labels.at<int>(0, 0);
  int holes = 0;
  for (int i = 1; i < n; ++i)
    if (i != outside && stats.at<int>(i, cv::CC_STAT_AREA) >= 2) ++holes;
  return holes;
}

Features describe(const cv::Mat& mask, double ref_top, double ref_h, double top, double h) {
  Features f;
  const int gh = mask.rows, gw = mask.cols;
  const double scale = static_cast<double>(kGrid) / std::max(gh, gw);
  const int nw = std::max(1, static_cast<int>(std::lround(gw * scale)));
  const int nh = std::max(1, static_cast<int>(std::lround(gh * scale)));
  cv::Mat fm;
  mask.convertTo(fm, CV_32F);
  cv::Mat small;
  cv::resize(fm, small, cv::Size(nw, nh), 0, 0, cv::INTER_AREA);
  const int ox = (kGrid - nw) / 2, oy = (kGrid - nh) / 2;
  for (int y = 0; y < nh; ++y)
    for (int x = 0; x < nw; ++x) f.shape[(oy + y) * kGrid + ox + x] = small.at<float>(y, x);
  f.rel_h = h / ref_h;
  f.rel_cy = (top + 0.5 * h - ref_top) / ref_h;
  f.log_aspect = std::log(static_cast<double>(gw) / gh);
  f.holes = count_holes(mask);
  return f;
}

double distance(const Features& a, const Features& b) {
  double s = 0;
  for (int i = 0; i < kGrid * kGrid; ++i) {
    const double d = a.shape[i] - b.shape[i];
    s += d * d;
  }
  s /= kGrid * kGrid;
  const double g = (a.rel_h - b.rel_h) * (a.rel_h - b.rel_h) +
                   (a.rel_cy - b.rel_cy) * (a.rel_cy - b.rel_cy) +
                   0.25 * (a.log_aspect - b.log_aspect) * (a.log_aspect - b.log_aspect);
  return s + kGeomWeight * g / 10.0 + kHoleWeight * std::abs(a.holes - b.holes);
}

cv::Mat ink_mask(const cv::Mat& gray) {
  cv::Mat m;
  cv::threshold(gray, m, 127, 1, cv::THRESH_BINARY_INV);
  return m;
}

std::vector<Glyph> components(const cv::Mat& bits, bool drop_border) {
  cv::Mat labels, stats, centroids;
  const int n = cv::connectedComponentsWithStats(bits, labels, stats, centroids, 8, CV_32S);
  struct Comp {
    PixelRect box;
    std::vector<int> ids;
  };
  std::vector<Comp> comps;
  for (int i = 1; i < n; ++i) {
    const int x = stats.at<int>(i, cv::CC_STAT_LEFT), y = stats.at<int>(i, cv::CC_STAT_TOP);
    const int w = stats.at<int>(i, cv::CC_STAT_WIDTH), h = stats.at<int>(i, cv::CC_STAT_HEIGHT);
    const int area = stats.at<int>(i, cv::CC_STAT_AREA);
    if (area < 3) continue;
    if (drop_border && (x == 0 || y == 0 || x + w == bits.cols || y + h == bits.rows)) continue;
    comps.push_back({{x, y, x + w, y + h}, {i}});
  }
  // Merge pieces stacked above one another (%, i, j, :).
  for (bool merged = true; merged;) {
    merged = false;
    for (std::size_t a = 0; a < comps.size() && !merged; ++a)
      for (std::size_t b = a + 1; b < comps.size() && !merged; ++b) {
        auto& A = comps[a].box;
        auto& B = comps[b].box;
        const int ov = std::min(A.x1, B.x1) - std::max(A.x0, B.x0);
        const int narrow = std::min(A.width(), B.width());
        const int vgap = std::max(A.y0, B.y0) - std::min(A.y1, B.y1);
        const int tall = std::max(A.height(), B.height());
        const int small = std::min(A.height(), B.height());
        if (ov >= 0.5 * narrow && vgap <= 0.35 * tall && small <= 0.6 * tall) {
          A = {std::min(A.x0, B.x0), std::min(A.y0, B.y0), std::max(A.x1, B.x1),
               std::max(A.y1, B.y1)};
          comps[a].ids.insert(comps[a].ids.end(), comps[b].ids.begin(), comps[b].ids.end());
          comps.erase(comps.begin() + static_cast<std::ptrdiff_t>(b));
          merged = true;
        }
      }
  }
  std::vector<Glyph> out;
  for (const auto& c : comps) {
    Glyph g;
    g.box = c.box;
    g.mask = cv::Mat::zeros(c.box.height(), c.box.width(), CV_8U);
    for (int y = c.box.y0; y < c.box.y1; ++y)
      for (int x = c.box.x0; x < c.box.x1; ++x) {
        const int l = labels.at<int>(y, x);
        if (std::find(c.ids.begin(), c.ids.end(), l) != c.ids.end())
          g.mask.at<std::uint8_t>(y - c.box.y0, x - c.box.x0) = 1;
      }
    out.push_back(std::move(g));
  }
  return out;
}

struct Template {
  char c;
  Features f;
};

}  // namespace

struct TemplateOcrEngine::Impl {
  std::vector<Template> templates;

  Impl() {
    const double scales[] = {0.45, 0.6, 0.8, 1.1, 1.5};
    const int thick[] = {1, 2};
    for (double sc : scales)
      for (int th : thick) {
        int base = 0;
        const cv::Size ref = cv::getTextSize("0", cv::FONT_HERSHEY_SIMPLEX, sc, th, &base);
        for (char c : kAllChars) {
          const std::string s(1, c);
          const int pad = 20;
          cv::Mat canvas(ref.height * 3 + 2 * pad, ref.width * 4 + 2 * pad, CV_8U, cv::Scalar(255));
          const cv::Point org(pad, pad + 2 * ref.height);
          cv::putText(canvas, s, org, cv::FONT_HERSHEY_SIMPLEX, sc, cv::Scalar(0), th, cv::LINE_AA);
          cv::Mat zero(canvas.size(), CV_8U, cv::Scalar(255));
          cv::putText(zero, "0", org, cv::FONT_HERSHEY_SIMPLEX, sc, cv::Scalar(0), th, cv::LINE_AA);
          const auto gl = components(ink_mask(canvas), false);
          const auto zr = components(ink_mask(zero), false);
          if (gl.empty() || zr.empty()) continue;
          PixelRect box = gl[0].box;
          for (const auto& g : gl)
            box = {std::min(box.x0, g.box.x0), std::min(box.y0, g.box.y0),
                   std::max(box.x1, g.box.x1), std::max(box.y1, g.box.y1)};
          cv::Mat m = ink_mask(canvas)(cv::Rect(box.x0, box.y0, box.width(), box.height())).clone();
          const auto& z = zr[0].box;
          templates.push_back({c, describe(m, z.y0, z.height(), box.y0, box.height())});
        }
      }
  }

  std::pair<char, double> best(const Features& f, const std::string& charset) const {
    char bc = '?';
    double bd = 1e300;
    for (const auto& t : templates) {
      if (charset.find(t.c) == std::string::npos) continue;
      const double d = distance(f, t.f);
      if (d < bd) {
        bd = d;
        bc = t.c;
      }
    }
    return {bc, bd};
  }
};

TemplateOcrEngine::TemplateOcrEngine() : impl_(std::make_unique<Impl>()) {}
TemplateOcrEngine::~TemplateOcrEngine() = default;

std::vector<OcrToken> TemplateOcrEngine::recognize(const RasterImage& /*region*/,
                                                   const image::BinarizedImage& bits,
                                                   image::RegionKind kind) const {
  cv::Mat m(bits.height, bits.width, CV_8U);
  for (int y = 0; y < bits.height; ++y)
    for (int x = 0; x < bits.width; ++x) m.at<std::uint8_t>(y, x) = bits.at(x, y) ? 1 : 0;
  auto glyphs = components(m, true);
  if (glyphs.empty()) return {};

  // Group into text lines by vertical overlap.
  std::sort(glyphs.begin(), glyphs.end(), [](const Glyph& a, const Glyph& b) {
    return a.box.y0 + a.box.y1 < b.box.y0 + b.box.y1;
  });
  std::vector<std::vector<Glyph>> lines;
  std::vector<PixelRect> extents;
  for (auto& g : glyphs) {
    bool placed = false;
    for (std::size_t i = 0; i < lines.size() && !placed; ++i) {
      auto& e = extents[i];
      const int ov = std::min(e.y1, g.box.y1) - std::max(e.y0, g.box.y0);
      if (ov >= 0.5 * std::min(e.height(), g.box.height())) {
        e.y0 = std::min(e.y0, g.box.y0);
        e.y1 = std::max(e.y1, g.box.y1);
        lines[i].push_back(std::move(g));
        placed = true;
      }
    }
    if (!placed) {
      extents.push_back(g.box);
      lines.push_back({std::move(g)});
    }
  }
  std::vector<OcrToken> out;
  for (auto& line : lines) {
    std::sort(line.begin(), line.end(), [](const Glyph& a, const Glyph& b) { return a.box.x0 < b.box.x0; });
    int max_h = 0;
    for (const auto& g : line) max_h = std::max(max_h, g.box.height());
    std::vector<int> tops, bottoms;
    for (const auto& g : line)
      if (g.box.height() >= 0.6 * max_h) {
        tops.push_back(g.box.y0);
        bottoms.push_back(g.box.y1);
      }
    std::sort(tops.begin(), tops.end());
    std::sort(bottoms.begin(), bottoms.end());
    const double ref_top = tops[tops.size() / 2];
    const double ref_h = std::max(1, bottoms[bottoms.size() / 2] - tops[tops.size() / 2]);

    std::vector<std::vector<const Glyph*>> words{{&line[0]}};
    for (std::size_t i = 1; i < line.size(); ++i) {
      const int gap = line[i].box.x0 - words.back().back()->box.x1;
      if (gap > 0.55 * ref_h)
        words.push_back({&line[i]});
      else
        words.back().push_back(&line[i]);
    }
    for (const auto& w : words) {
      std::string num, full;
      double num_cost = 0, full_cost = 0;
      PixelRect box = w.front()->box;
      for (const auto* g : w) {
        const Features f = describe(g->mask, ref_top, ref_h, g->box.y0, g->box.height());
        const auto [nc, nd] = impl_->best(f, kNumericChars);
        const auto [fc, fd] = impl_->best(f, kAllChars);
        num += nc;
        full += fc;
        num_cost += nd;
        full_cost += fd;
        box = {std::min(box.x0, g->box.x0), std::min(box.y0, g->box.y0),
               std::max(box.x1, g->box.x1), std::max(box.y1, g->box.y1)};
      }
      const bool numeric = num_cost <= 1.15 * full_cost + 1e-9;
      OcrToken tok;
      tok.text = numeric ? num : full;
      const double cost = (numeric ? num_cost : full_cost) / static_cast<double>(w.size());
      tok.confidence = std::clamp(std::exp(-cost / 0.05), 0.0, 1.0);
      tok.box = box;
      tok.region_kind = kind;
      out.push_back(std::move(tok));
    }
  }
  std::sort(out.begin(), out.end(), [](const OcrToken& a, const OcrToken& b) {
    const int la = a.box.y0 + a.box.y1, lb = b.box.y0 + b.box.y1;
    if (std::abs(la - lb) > std::min(a.box.height(), b.box.height())) return la < lb;
    return a.box.x0 < b.box.x0;
  });
  return out;
}

TesseractCliEngine::TesseractCliEngine(std::string binary) : binary_(std::move(binary)) {}

bool TesseractCliEngine::available() const {
  const std::string cmd = binary_ + " --version >/dev/null 2>&1";
  return std::system(cmd.c_str()) == 0;
}

std::vector<OcrToken> TesseractCliEngine::recognize(const RasterImage& region,
                                                    const image::BinarizedImage& bits,
                                                    image::RegionKind kind) const {
  if (!available()) throw Error(ErrorCode::OcrUnavailable, "'" + binary_ + "' not found");
  RasterImage bw(bits.width, bits.height);
  for (int y = 0; y < bits.height; ++y)
    for (int x = 0; x < bits.width; ++x)
      if (bits.at(x, y)) bw.set(x, y, {0, 0, 0});
  (void)region;
  std::random_device rd;
  const auto dir = std::filesystem::temp_directory_path() /
                   ("kmgpt_ocr_" + std::to_string(rd()) + std::to_string(rd()));
  std::filesystem::create_directories(dir);
  const auto png = dir / "region.png";
  write_png(bw, png);
  const std::string psm = kind == image::RegionKind::RiskTable ? "6" : "11";
  const std::string cmd = binary_ + " '" + png.string() + "' stdout --oem 3 --psm " + psm +
                          " tsv 2>/dev/null";
  std::string tsv;
  if (FILE* p = popen(cmd.c_str(), "r")) {
    char buf[4096];
    std::size_t n;
    while ((n = fread(buf, 1, sizeof buf, p)) > 0) tsv.append(buf, n);
    pclose(p);
  }
  std::filesystem::remove_all(dir);

  std::vector<OcrToken> out;
  std::istringstream in(tsv);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, '\t')) f.push_back(cell);
    if (f.size() < 12 || f[0] != "5" || f[11].empty()) continue;
    OcrToken t;
    t.text = f[11];
    const int l = std::stoi(f[6]), tp = std::stoi(f[7]), w = std::stoi(f[8]), h = std::stoi(f[9]);
    t.box = {l, tp, l + w, tp + h};
    t.confidence = std::clamp(std::stod(f[10]) / 100.0, 0.0, 1.0);
    t.region_kind = kind;
    out.push_back(std::move(t));
  }
  return out;
}

const OcrEngine& default_engine() {
  static const TemplateOcrEngine engine;
  return engine;
}

std::vector<OcrToken> run_ocr(const RasterImage& image, const PixelRect& region,
                              image::RegionKind kind, const OcrEngine& engine) {
  const RasterImage sub = crop(image, region);
  const auto bits = image::binarize(sub, kind);
  if (std::none_of(bits.bits.begin(), bits.bits.end(), [](auto b) { return b != 0; }))
    throw Error(ErrorCode::OcrEmpty, "region contains no ink");
  auto tokens = engine.recognize(sub, bits, kind);
  if (tokens.empty()) throw Error(ErrorCode::OcrEmpty, "no text recognized in region");
  for (auto& t : tokens) {
    t.box.x0 += region.x0;
    t.box.x1 += region.x0;
    t.box.y0 += region.y0;
    t.box.y1 += region.y0;
  }
  return tokens;
}

std::string tokens_to_json(const std::vector<OcrToken>& tokens) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& t : tokens)
    arr.push_back({{"text", t.text},
                   {"confidence", t.confidence},
                   {"box", {t.box.x0, t.box.y0, t.box.x1, t.box.y1}},
                   {"region", t.region_kind == image::RegionKind::RiskTable ? "risk-table"
                                                                           : "axis-labels"}});
  return arr.dump();
}

}  // namespace kmgpt::ocr
