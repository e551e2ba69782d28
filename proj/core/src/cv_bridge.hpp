#pragma once

#include <opencv2/core.hpp>

#include "kmgpt/raster.hpp"

namespace kmgpt::detail {

// OpenCV works in BGR; RasterImage stores RGB.
cv::Mat to_bgr(const RasterImage& image);
RasterImage from_bgr(const cv::Mat& bgr);
cv::Mat to_gray(const RasterImage& image);

}  // namespace kmgpt::detail
