#include "fakelens/explain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include <opencv2/imgcodecs.hpp>

#include "fakelens/image_ops.hpp"
#include "fakelens/imbalance.hpp"
#include "fakelens/random.hpp"

namespace fakelens {
namespace {

int class_index(Label l) { return static_cast<int>(l); }

std::string resolve_layer(const ExplainableModel& model, std::string_view layer) {
  if (!layer.empty()) return std::string(layer);
  const auto names = model.layer_names();
  if (names.empty()) throw std::invalid_argument("model exposes no layers to explain");
  return names.back();
}

// ReLU(sum_k w_k A^k), upsampled to the input size and normalised.
Tensor weighted_cam(const Tensor& act, std::span<const double> w, int out_h, int out_w) {
  Tensor raw(act.height(), act.width(), 1);
  for (int y = 0; y < act.height(); ++y) {
    for (int x = 0; x < act.width(); ++x) {
      double s = 0.0;
      for (int k = 0; k < act.channels(); ++k) s += w[k] * act(y, x, k);
      raw(y, x, 0) = std::max(s, 0.0);
    }
  }
  return normalize_map(resize_bilinear(raw, out_h, out_w));
}

}  // namespace

std::string_view to_string(ExplainMethod method) {
  switch (method) {
    case ExplainMethod::smoothgrad: return "smoothgrad";
    case ExplainMethod::gradcam: return "gradcam";
    case ExplainMethod::gradcam_pp: return "gradcam_pp";
    case ExplainMethod::faster_scorecam: return "faster_scorecam";
  }
  return "?";
}

ExplainMethod parse_method(std::string_view text) {
  for (ExplainMethod m : kExplainMethods) {
    if (to_string(m) == text) return m;
  }
  throw std::invalid_argument("unknown explain method '" + std::string(text) + "'");
}

Tensor normalize_map(const Tensor& raw) {
  Tensor out(raw.height(), raw.width(), raw.channels());
  if (raw.empty()) return out;
  const double lo = raw.min();
  const double hi = raw.max();
  if (!(hi > lo)) return out;
  const double span = hi - lo;
  auto src = raw.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = (src[i] - lo) / span;
  return out;
}

Tensor saliency(const ExplainableModel& model, const Tensor& x, Label target) {
  const Tensor g = model.input_gradient(x, class_index(target));
  Tensor out(g.height(), g.width(), 1);
  for (int y = 0; y < g.height(); ++y) {
    for (int xx = 0; xx < g.width(); ++xx) {
      double m = 0.0;
      for (int c = 0; c < g.channels(); ++c) m = std::max(m, std::abs(g(y, xx, c)));
      out(y, xx, 0) = m;
    }
  }
  return out;
}

Heatmap smoothgrad(const ExplainableModel& model, const Tensor& x, Label target,
                   const SmoothGradParams& params) {
  if (params.n < 1) throw std::invalid_argument("smoothgrad: n must be >= 1");
  if (!(params.sigma >= 0.0)) throw std::invalid_argument("smoothgrad: sigma must be >= 0");
  const double sd = params.sigma * (x.max() - x.min());
  if (sd == 0.0) return {normalize_map(saliency(model, x, target)), ExplainMethod::smoothgrad, target};

  Rng rng(params.seed);
  Tensor sum(x.height(), x.width(), 1);
  for (int i = 0; i < params.n; ++i) {
    Tensor noisy = x;
    for (double& v : noisy.values()) v += sd * rng.normal();
    const Tensor s = saliency(model, noisy, target);
    auto acc = sum.values();
    auto src = s.values();
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += src[j];
  }
  for (double& v : sum.values()) v /= params.n;
  return {normalize_map(sum), ExplainMethod::smoothgrad, target};
}

Heatmap gradcam(const ExplainableModel& model, const Tensor& x, Label target,
                std::string_view layer) {
  const LayerProbe p = model.probe(x, class_index(target), resolve_layer(model, layer));
  const Tensor& g = p.gradients;
  const double cells = static_cast<double>(g.height()) * g.width();
  std::vector<double> alpha(g.channels(), 0.0);
  for (int y = 0; y < g.height(); ++y) {
    for (int xx = 0; xx < g.width(); ++xx) {
      for (int k = 0; k < g.channels(); ++k) alpha[k] += g(y, xx, k);
    }
  }
  for (double& a : alpha) a /= cells;
  return {weighted_cam(p.activations, alpha, x.height(), x.width()), ExplainMethod::gradcam, target};
}

Heatmap gradcam_pp(const ExplainableModel& model, const Tensor& x, Label target,
                   std::string_view layer) {
  const LayerProbe p = model.probe(x, class_index(target), resolve_layer(model, layer));
  const Tensor& a = p.activations;
  const Tensor& g = p.gradients;
  const int c = g.channels();

  std::vector<double> act_sum(c, 0.0);
  for (int y = 0; y < a.height(); ++y) {
    for (int xx = 0; xx < a.width(); ++xx) {
      for (int k = 0; k < c; ++k) act_sum[k] += a(y, xx, k);
    }
  }
  std::vector<double> w(c, 0.0);
  for (int y = 0; y < g.height(); ++y) {
    for (int xx = 0; xx < g.width(); ++xx) {
      for (int k = 0; k < c; ++k) {
        const double d = g(y, xx, k);
        const double d2 = d * d;
        const double alpha = d2 / (2.0 * d2 + act_sum[k] * d2 * d + 1e-12);
        w[k] += alpha * std::max(d, 0.0);
      }
    }
  }
  return {weighted_cam(a, w, x.height(), x.width()), ExplainMethod::gradcam_pp, target};
}

Heatmap faster_scorecam(const ExplainableModel& model, const Tensor& x, Label target,
                        std::string_view layer, int top_k) {
  const LayerProbe p = model.probe(x, class_index(target), resolve_layer(model, layer));
  const Tensor& a = p.activations;
  const int c = a.channels();
  if (top_k < 1 || top_k > c) {
    throw std::invalid_argument("faster_scorecam: top_k must be in [1, " + std::to_string(c) + "]");
  }

  const double cells = static_cast<double>(a.height()) * a.width();
  std::vector<double> spread(c);
  for (int k = 0; k < c; ++k) {
    double mean = 0.0;
    for (int y = 0; y < a.height(); ++y)
      for (int xx = 0; xx < a.width(); ++xx) mean += a(y, xx, k);
    mean /= cells;
    double var = 0.0;
    for (int y = 0; y < a.height(); ++y) {
      for (int xx = 0; xx < a.width(); ++xx) {
        const double d = a(y, xx, k) - mean;
        var += d * d;
      }
    }
    spread[k] = std::sqrt(var / cells);
  }
  std::vector<int> order(c);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int l, int r) { return spread[l] > spread[r]; });

  Tensor raw(x.height(), x.width(), 1);
  for (int rank = 0; rank < top_k; ++rank) {
    const Tensor mask = normalize_map(resize_bilinear(a.channel(order[rank]), x.height(), x.width()));
    Tensor masked = x;
    for (int y = 0; y < x.height(); ++y) {
      for (int xx = 0; xx < x.width(); ++xx) {
        for (int ch = 0; ch < x.channels(); ++ch) masked(y, xx, ch) *= mask(y, xx, 0);
      }
    }
    const double score = softmax(model.logits(masked)).at(class_index(target));
    auto acc = raw.values();
    auto m = mask.values();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += score * m[i];
  }
  for (double& v : raw.values()) v = std::max(v, 0.0);
  return {normalize_map(raw), ExplainMethod::faster_scorecam, target};
}

Heatmap explain(ExplainMethod method, const ExplainableModel& model, const Tensor& x, Label target,
                const ExplainOptions& options) {
  switch (method) {
    case ExplainMethod::smoothgrad: return smoothgrad(model, x, target, options.smoothgrad);
    case ExplainMethod::gradcam: return gradcam(model, x, target, options.layer);
    case ExplainMethod::gradcam_pp: return gradcam_pp(model, x, target, options.layer);
    case ExplainMethod::faster_scorecam:
      return faster_scorecam(model, x, target, options.layer, options.top_k);
  }
  throw std::invalid_argument("unknown explain method");
}

cv::Vec3b jet_color(double v) {
  const double t = std::clamp(v, 0.0, 1.0);
  auto ch = [&](double centre) {
    const double level = std::clamp(1.5 - std::abs(4.0 * t - centre), 0.0, 1.0);
    return static_cast<unsigned char>(std::lround(level * 255.0));
  };
  return {ch(1.0), ch(2.0), ch(3.0)};
}

cv::Mat overlay(const Heatmap& heatmap, const cv::Mat& crop) {
  const Tensor& h = heatmap.values;
  if (crop.type() != CV_8UC3 || crop.rows != h.height() || crop.cols != h.width()) {
    throw std::invalid_argument("overlay: crop must be 8-bit BGR with the heatmap's size");
  }
  cv::Mat out(crop.size(), CV_8UC3);
  for (int y = 0; y < crop.rows; ++y) {
    for (int x = 0; x < crop.cols; ++x) {
      const cv::Vec3b base = crop.at<cv::Vec3b>(y, x);
      const cv::Vec3b tint = jet_color(h(y, x, 0));
      cv::Vec3b& px = out.at<cv::Vec3b>(y, x);
      for (int c = 0; c < 3; ++c) {
        const double v = (1.0 - kOverlayAlpha) * base[c] + kOverlayAlpha * tint[c];
        px[c] = static_cast<unsigned char>(std::clamp<long>(std::lround(v), 0, 255));
      }
    }
  }
  return out;
}

cv::Mat write_overlay(const std::filesystem::path& path, const Heatmap& heatmap,
                      const cv::Mat& crop) {
  cv::Mat img = overlay(heatmap, crop);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), img)) throw std::runtime_error("cannot write " + path.string());
  return img;
}

}  // namespace fakelens
