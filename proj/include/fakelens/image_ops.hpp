#pragma once

#include <opencv2/core.hpp>

#include "fakelens/tensor.hpp"

namespace fakelens {

/// Bilinear resampling with corner-aligned sampling: output pixel (y, x)
/// reads source coordinate (y * (H_in - 1) / (H_out - 1), ...), so the
/// four output corners equal the four source corners and every output
/// value is a convex combination of at most four source values.
Tensor resize_bilinear(const Tensor& src, int out_height, int out_width);

/// 8-bit variant of resize_bilinear; results are rounded to nearest.
cv::Mat resize_bilinear(const cv::Mat& src, int out_height, int out_width);

/// 8-bit image (1 or 3 channels) to a tensor with values v / 255.
Tensor to_tensor(const cv::Mat& image);

}  // namespace fakelens
