#pragma once

// Helpers shared by the test binaries: scratch directories, synthetic
// videos, and small hand-differentiable models for the explainers.

#include <atomic>
#include <cmath>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <unistd.h>

#include <opencv2/core.hpp>
#include <opencv2/videoio.hpp>

#include "fakelens/network.hpp"
#include "fakelens/tensor.hpp"

namespace testing_support {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("fakelens_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

// Frame i is filled with the constant (i * step) % 256 so decoded frames
// can be identified by value.
inline cv::Mat indexed_frame(int i, int step = 3, int h = 32, int w = 32) {
  return cv::Mat(h, w, CV_8UC3, cv::Scalar::all((i * step) % 256));
}

inline int frame_id(const cv::Mat& frame, int step = 3) {
  const int v = frame.at<cv::Vec3b>(frame.rows / 2, frame.cols / 2)[0];
  return static_cast<int>(std::lround(static_cast<double>(v) / step));
}

// Lossless FFV1 clip with indexed frames.
inline void write_indexed_video(const fs::path& path, int frames, double fps, int step = 3) {
  cv::VideoWriter w(path.string(), cv::CAP_FFMPEG, cv::VideoWriter::fourcc('F', 'F', 'V', '1'), fps,
                    cv::Size(32, 32));
  if (!w.isOpened()) throw std::runtime_error("cannot write test video");
  for (int i = 0; i < frames; ++i) w.write(indexed_frame(i, step));
  w.release();
}

inline fakelens::Tensor random_tensor(int h, int w, int c, std::mt19937_64& gen, double lo = 0.0,
                                      double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  fakelens::Tensor t(h, w, c);
  for (double& v : t.values()) v = d(gen);
  return t;
}

// ||a - b|| / ||b||, with b the reference.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return den == 0.0 ? std::sqrt(num) : std::sqrt(num / den);
}

// score_c(x) = sum over pixels and channels of w_c(ch) * x. Input gradient
// is w_c broadcast over pixels; it has no probe-able layers.
class LinearModel : public fakelens::ExplainableModel {
 public:
  explicit LinearModel(std::vector<std::vector<double>> w) : w_(std::move(w)) {}

  std::vector<double> logits(const fakelens::Tensor& x) const override {
    std::vector<double> out(w_.size(), 0.0);
    for (std::size_t c = 0; c < w_.size(); ++c)
      for (int y = 0; y < x.height(); ++y)
        for (int xx = 0; xx < x.width(); ++xx)
          for (int ch = 0; ch < x.channels(); ++ch) out[c] += w_[c][ch] * x(y, xx, ch);
    return out;
  }
  std::vector<std::string> layer_names() const override { return {}; }
  fakelens::Tensor input_gradient(const fakelens::Tensor& x, int cls) const override {
    fakelens::Tensor g(x.height(), x.width(), x.channels());
    for (int y = 0; y < x.height(); ++y)
      for (int xx = 0; xx < x.width(); ++xx)
        for (int ch = 0; ch < x.channels(); ++ch) g(y, xx, ch) = w_[cls][ch];
    return g;
  }
  fakelens::LayerProbe probe(const fakelens::Tensor&, int, std::string_view layer) const override {
    throw std::invalid_argument("no layer " + std::string(layer));
  }

 private:
  std::vector<std::vector<double>> w_;
};

// One "feat" layer at half resolution:
//   A_k(i, j) = relu(sum_ch u[k][ch] * x(2i, 2j, ch) + bias[k])
//   score_c   = sum_k v[c][k] * mean(A_k)
// so d score_c / d A_k(i, j) = v[c][k] / (h * w) everywhere.
class ToyCamModel : public fakelens::ExplainableModel {
 public:
  ToyCamModel(std::vector<std::vector<double>> u, std::vector<double> bias,
              std::vector<std::vector<double>> v)
      : u_(std::move(u)), bias_(std::move(bias)), v_(std::move(v)) {}

  fakelens::Tensor features(const fakelens::Tensor& x) const {
    const int h = x.height() / 2, w = x.width() / 2;
    fakelens::Tensor a(h, w, static_cast<int>(u_.size()));
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        for (std::size_t k = 0; k < u_.size(); ++k) {
          double s = bias_[k];
          for (int ch = 0; ch < x.channels(); ++ch) s += u_[k][ch] * x(2 * i, 2 * j, ch);
          a(i, j, static_cast<int>(k)) = std::max(s, 0.0);
        }
    return a;
  }

  std::vector<double> logits(const fakelens::Tensor& x) const override {
    const fakelens::Tensor a = features(x);
    const double cells = static_cast<double>(a.height()) * a.width();
    std::vector<double> out(v_.size(), 0.0);
    for (std::size_t c = 0; c < v_.size(); ++c)
      for (int i = 0; i < a.height(); ++i)
        for (int j = 0; j < a.width(); ++j)
          for (int k = 0; k < a.channels(); ++k) out[c] += v_[c][k] * a(i, j, k) / cells;
    return out;
  }
  std::vector<std::string> layer_names() const override { return {"feat"}; }
  fakelens::Tensor input_gradient(const fakelens::Tensor& x, int cls) const override {
    const fakelens::Tensor a = features(x);
    const double cells = static_cast<double>(a.height()) * a.width();
    fakelens::Tensor g(x.height(), x.width(), x.channels());
    for (int i = 0; i < a.height(); ++i)
      for (int j = 0; j < a.width(); ++j)
        for (int k = 0; k < a.channels(); ++k) {
          if (!(a(i, j, k) > 0.0)) continue;
          for (int ch = 0; ch < x.channels(); ++ch)
            g(2 * i, 2 * j, ch) += v_[cls][k] / cells * u_[k][ch];
        }
    return g;
  }
  fakelens::LayerProbe probe(const fakelens::Tensor& x, int cls, std::string_view layer) const override {
    if (layer != "feat") throw std::invalid_argument("no layer " + std::string(layer));
    fakelens::LayerProbe p;
    p.activations = features(x);
    p.logits = logits(x);
    const double cells = static_cast<double>(p.activations.height()) * p.activations.width();
    p.gradients = fakelens::Tensor(p.activations.height(), p.activations.width(), p.activations.channels());
    for (int i = 0; i < p.activations.height(); ++i)
      for (int j = 0; j < p.activations.width(); ++j)
        for (int k = 0; k < p.activations.channels(); ++k) p.gradients(i, j, k) = v_[cls][k] / cells;
    return p;
  }

 private:
  std::vector<std::vector<double>> u_;
  std::vector<double> bias_;
  std::vector<std::vector<double>> v_;
};

// A model that hands back fixed activations and gradients, for exercising
// the CAM arithmetic directly.
class FixedProbeModel : public fakelens::ExplainableModel {
 public:
  FixedProbeModel(fakelens::Tensor activations, fakelens::Tensor gradients)
      : a_(std::move(activations)), g_(std::move(gradients)) {}

  std::vector<double> logits(const fakelens::Tensor&) const override { return {0.0, 0.0}; }
  std::vector<std::string> layer_names() const override { return {"fixed"}; }
  fakelens::Tensor input_gradient(const fakelens::Tensor& x, int) const override {
    return fakelens::Tensor(x.height(), x.width(), x.channels());
  }
  fakelens::LayerProbe probe(const fakelens::Tensor&, int, std::string_view layer) const override {
    if (layer != "fixed") throw std::invalid_argument("no layer " + std::string(layer));
    return {a_, g_, {0.0, 0.0}};
  }

 private:
  fakelens::Tensor a_, g_;
};

// Independent bilinear resampler (corner-aligned) for oracles.
inline fakelens::Tensor oracle_upsample(const fakelens::Tensor& src, int oh, int ow) {
  fakelens::Tensor out(oh, ow, src.channels());
  for (int y = 0; y < oh; ++y) {
    const double sy = oh == 1 ? 0.0 : static_cast<double>(y) * (src.height() - 1) / (oh - 1);
    const int y0 = static_cast<int>(std::floor(sy));
    const int y1 = std::min(y0 + 1, src.height() - 1);
    const double fy = sy - y0;
    for (int x = 0; x < ow; ++x) {
      const double sx = ow == 1 ? 0.0 : static_cast<double>(x) * (src.width() - 1) / (ow - 1);
      const int x0 = static_cast<int>(std::floor(sx));
      const int x1 = std::min(x0 + 1, src.width() - 1);
      const double fx = sx - x0;
      for (int c = 0; c < src.channels(); ++c) {
        out(y, x, c) = (1 - fy) * ((1 - fx) * src(y0, x0, c) + fx * src(y0, x1, c)) +
                       fy * ((1 - fx) * src(y1, x0, c) + fx * src(y1, x1, c));
      }
    }
  }
  return out;
}

inline fakelens::Tensor oracle_normalize(const fakelens::Tensor& t) {
  double lo = t.values()[0], hi = t.values()[0];
  for (double v : t.values()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  fakelens::Tensor out(t.height(), t.width(), t.channels());
  if (hi == lo) return out;
  for (std::size_t i = 0; i < t.size(); ++i) out.values()[i] = (t.values()[i] - lo) / (hi - lo);
  return out;
}

}  // namespace testing_support
