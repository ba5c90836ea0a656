#include "fakelens/tensor.hpp"

#include <algorithm>
#include <stdexcept>

namespace fakelens {

Tensor::Tensor(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
  if (height < 0 || width < 0 || channels < 0) {
    throw std::invalid_argument("Tensor: negative dimension");
  }
  data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

double Tensor::min() const {
  if (data_.empty()) throw std::logic_error("Tensor::min on empty tensor");
  return *std::min_element(data_.begin(), data_.end());
}

double Tensor::max() const {
  if (data_.empty()) throw std::logic_error("Tensor::max on empty tensor");
  return *std::max_element(data_.begin(), data_.end());
}

Tensor Tensor::channel(int c) const {
  if (c < 0 || c >= channels_) throw std::out_of_range("Tensor::channel index");
  Tensor out(height_, width_, 1);
  for (int y = 0; y < height_; ++y)
    for (int x = 0; x < width_; ++x) out(y, x, 0) = (*this)(y, x, c);
  return out;
}

}  // namespace fakelens
