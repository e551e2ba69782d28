#pragma once

#include <memory>
#include <string>
#include <vector>

#include "kmgpt/image_prep.hpp"
#include "kmgpt/raster.hpp"

namespace kmgpt::ocr {

struct OcrToken {
  std::string text;
  double confidence = 0;  // [0, 1]
  PixelRect box;          // in the coordinates of the image passed to run_ocr
  image::RegionKind region_kind = image::RegionKind::AxisLabels;
};

class OcrEngine {
 public:
  virtual ~OcrEngine() = default;
  virtual std::string name() const = 0;
  /// Recognizes words in a region. `gray` is the cropped region, `bits` its
  /// binarization for the region kind. Boxes are region-relative.
  virtual std::vector<OcrToken> recognize(const RasterImage& region,
                                          const image::BinarizedImage& bits,
                                          image::RegionKind kind) const = 0;
};

/// Built-in recognizer: connected components matched against glyph templates
/// rendered from the Hershey simplex font. Needs no external binary.
class TemplateOcrEngine final : public OcrEngine {
 public:
  TemplateOcrEngine();
  ~TemplateOcrEngine() override;
  std::string name() const override { return "template"; }
  std::vector<OcrToken> recognize(const RasterImage& region, const image::BinarizedImage& bits,
                                  image::RegionKind kind) const override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Shells out to the `tesseract` binary (LSTM engine, --oem 3; --psm 6 for
/// tables, --psm 11 for sparse axis labels) and parses its TSV output.
class TesseractCliEngine final : public OcrEngine {
 public:
  explicit TesseractCliEngine(std::string binary = "tesseract");
  std::string name() const override { return "tesseract"; }
  bool available() const;
  std::vector<OcrToken> recognize(const RasterImage& region, const image::BinarizedImage& bits,
                                  image::RegionKind kind) const override;

 private:
  std::string binary_;
};

const OcrEngine& default_engine();

/// Crops `region`, binarizes it for `kind` and recognizes it. Boxes are
/// returned in full-image coordinates. Throws OcrEmpty on a blank region.
std::vector<OcrToken> run_ocr(const RasterImage& image, const PixelRect& region,
                              image::RegionKind kind, const OcrEngine& engine = default_engine());

std::string tokens_to_json(const std::vector<OcrToken>& tokens);

}  // namespace kmgpt::ocr
