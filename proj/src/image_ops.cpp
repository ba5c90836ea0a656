#include "fakelens/image_ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace fakelens {
namespace {

struct Tap {
  int lo;
  int hi;
  double frac;
};

// Source taps for each output coordinate along one axis.
std::vector<Tap> axis_taps(int in_size, int out_size) {
  std::vector<Tap> taps(static_cast<std::size_t>(out_size));
  for (int i = 0; i < out_size; ++i) {
    if (in_size == 1 || out_size == 1) {
      taps[i] = {0, 0, 0.0};
      continue;
    }
    const double pos = static_cast<double>(i) * (in_size - 1) / (out_size - 1);
    int lo = static_cast<int>(std::floor(pos));
    if (lo >= in_size - 1) {
      taps[i] = {in_size - 1, in_size - 1, 0.0};
    } else {
      taps[i] = {lo, lo + 1, pos - lo};
    }
  }
  return taps;
}

}  // namespace

Tensor resize_bilinear(const Tensor& src, int out_height, int out_width) {
  if (src.empty() || out_height <= 0 || out_width <= 0) {
    throw std::invalid_argument("resize_bilinear: empty source or target size");
  }
  const auto ty = axis_taps(src.height(), out_height);
  const auto tx = axis_taps(src.width(), out_width);
  Tensor out(out_height, out_width, src.channels());
  for (int y = 0; y < out_height; ++y) {
    const Tap& a = ty[y];
    for (int x = 0; x < out_width; ++x) {
      const Tap& b = tx[x];
      for (int c = 0; c < src.channels(); ++c) {
        const double top = (1.0 - b.frac) * src(a.lo, b.lo, c) + b.frac * src(a.lo, b.hi, c);
        const double bottom = (1.0 - b.frac) * src(a.hi, b.lo, c) + b.frac * src(a.hi, b.hi, c);
        out(y, x, c) = (1.0 - a.frac) * top + a.frac * bottom;
      }
    }
  }
  return out;
}

cv::Mat resize_bilinear(const cv::Mat& src, int out_height, int out_width) {
  if (src.empty() || src.depth() != CV_8U) {
    throw std::invalid_argument("resize_bilinear: expected a non-empty 8-bit image");
  }
  Tensor raw(src.rows, src.cols, src.channels());
  for (int y = 0; y < src.rows; ++y) {
    const auto* row = src.ptr<std::uint8_t>(y);
    for (int x = 0; x < src.cols; ++x)
      for (int c = 0; c < src.channels(); ++c) raw(y, x, c) = row[x * src.channels() + c];
  }
  const Tensor resized = resize_bilinear(raw, out_height, out_width);
  cv::Mat out(out_height, out_width, CV_8UC(src.channels()));
  for (int y = 0; y < out_height; ++y) {
    auto* row = out.ptr<std::uint8_t>(y);
    for (int x = 0; x < out_width; ++x) {
      for (int c = 0; c < src.channels(); ++c) {
        const double v = std::round(resized(y, x, c));
        row[x * src.channels() + c] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
    }
  }
  return out;
}

Tensor to_tensor(const cv::Mat& image) {
  if (image.empty() || image.depth() != CV_8U) {
    throw std::invalid_argument("to_tensor: expected a non-empty 8-bit image");
  }
  Tensor out(image.rows, image.cols, image.channels());
  for (int y = 0; y < image.rows; ++y) {
    const auto* row = image.ptr<std::uint8_t>(y);
    for (int x = 0; x < image.cols; ++x)
      for (int c = 0; c < image.channels(); ++c)
        out(y, x, c) = static_cast<double>(row[x * image.channels() + c]) / 255.0;
  }
  return out;
}

}  // namespace fakelens
