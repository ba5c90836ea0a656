#include "fakelens/network.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

namespace fakelens {
namespace {

constexpr int K = ConvBackbone::kKernel;
constexpr int S = ConvBackbone::kStride;
constexpr int P = ConvBackbone::kPad;

int out_extent(int in) { return (in + 2 * P - K) / S + 1; }

// Weights are laid out [ky][kx][ci][co] so the innermost loop runs over
// output channels with unit stride.
Tensor conv_relu_forward(const Tensor& in, const double* w, const double* b, int cout) {
  const int cin = in.channels();
  const int oh = out_extent(in.height());
  const int ow = out_extent(in.width());
  Tensor out(oh, ow, cout);
  std::vector<double> acc(static_cast<std::size_t>(cout));
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      std::copy(b, b + cout, acc.begin());
      for (int ky = 0; ky < K; ++ky) {
        const int iy = oy * S + ky - P;
        if (iy < 0 || iy >= in.height()) continue;
        for (int kx = 0; kx < K; ++kx) {
          const int ix = ox * S + kx - P;
          if (ix < 0 || ix >= in.width()) continue;
          const double* src = &in(iy, ix, 0);
          const double* wk = w + static_cast<std::size_t>((ky * K + kx) * cin) * cout;
          for (int ci = 0; ci < cin; ++ci) {
            const double v = src[ci];
            const double* wrow = wk + static_cast<std::size_t>(ci) * cout;
            for (int co = 0; co < cout; ++co) acc[co] += v * wrow[co];
          }
        }
      }
      double* dst = &out(oy, ox, 0);
      for (int co = 0; co < cout; ++co) dst[co] = acc[co] < 0.0 ? 0.0 : acc[co];  // NaN passes through
    }
  }
  return out;
}

// `grad` arrives as d/d(post-ReLU output) and is masked in place.
Tensor conv_relu_backward(const Tensor& in, const Tensor& out, Tensor& grad, const double* w,
                          double* dw, double* db) {
  const int cin = in.channels();
  const int cout = out.channels();
  auto g = grad.values();
  auto o = out.values();
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!(o[i] > 0.0)) g[i] = 0.0;

  Tensor gin(in.height(), in.width(), cin);
  for (int oy = 0; oy < out.height(); ++oy) {
    for (int ox = 0; ox < out.width(); ++ox) {
      const double* gp = &grad(oy, ox, 0);
      if (db) {
        for (int co = 0; co < cout; ++co) db[co] += gp[co];
      }
      for (int ky = 0; ky < K; ++ky) {
        const int iy = oy * S + ky - P;
        if (iy < 0 || iy >= in.height()) continue;
        for (int kx = 0; kx < K; ++kx) {
          const int ix = ox * S + kx - P;
          if (ix < 0 || ix >= in.width()) continue;
          const double* src = &in(iy, ix, 0);
          double* gsrc = &gin(iy, ix, 0);
          const std::size_t base = static_cast<std::size_t>((ky * K + kx) * cin) * cout;
          for (int ci = 0; ci < cin; ++ci) {
            const double* wrow = w + base + static_cast<std::size_t>(ci) * cout;
            double sum = 0.0;
            for (int co = 0; co < cout; ++co) sum += wrow[co] * gp[co];
            gsrc[ci] += sum;
            if (dw) {
              double* dwrow = dw + base + static_cast<std::size_t>(ci) * cout;
              const double v = src[ci];
              for (int co = 0; co < cout; ++co) dwrow[co] += v * gp[co];
            }
          }
        }
      }
    }
  }
  return gin;
}

// Gradient through global average pooling.
Tensor spread_pooled_gradient(const Tensor& features, const std::vector<double>& dpooled) {
  Tensor grad(features.height(), features.width(), features.channels());
  const double inv = 1.0 / (static_cast<double>(features.height()) * features.width());
  auto g = grad.values();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = dpooled[i % dpooled.size()] * inv;
  return grad;
}

}  // namespace

std::size_t ParamSlice::size() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
}

// ---------------------------------------------------------------------------
// ConvBackbone

ConvBackbone::ConvBackbone(std::vector<int> channels, std::uint64_t seed, int in_channels)
    : in_channels_(in_channels), channels_(std::move(channels)) {
  if (channels_.empty()) throw std::invalid_argument("ConvBackbone: need at least one stage");
  if (in_channels_ < 1) throw std::invalid_argument("ConvBackbone: in_channels must be >= 1");
  std::size_t total = 0;
  int cin = in_channels_;
  for (int cout : channels_) {
    if (cout < 1) throw std::invalid_argument("ConvBackbone: channel counts must be >= 1");
    weight_offset_.push_back(total);
    total += static_cast<std::size_t>(K * K * cin) * cout;
    bias_offset_.push_back(total);
    total += static_cast<std::size_t>(cout);
    cin = cout;
  }
  params_.assign(total, 0.0);

  Rng rng(seed);
  cin = in_channels_;
  for (std::size_t s = 0; s < channels_.size(); ++s) {
    const int cout = channels_[s];
    const double stddev = std::sqrt(2.0 / (K * K * cin));
    const std::size_t nw = static_cast<std::size_t>(K * K * cin) * cout;
    for (std::size_t i = 0; i < nw; ++i) params_[weight_offset_[s] + i] = stddev * rng.normal();
    for (int co = 0; co < cout; ++co) params_[bias_offset_[s] + co] = rng.uniform(-0.05, 0.05);
    cin = cout;
  }
}

std::vector<std::string> ConvBackbone::stage_names() const {
  std::vector<std::string> names;
  for (std::size_t s = 0; s < channels_.size(); ++s) names.push_back("conv" + std::to_string(s + 1));
  return names;
}

std::vector<Tensor> ConvBackbone::forward(const Tensor& x) const {
  if (x.channels() != in_channels_) {
    throw std::invalid_argument("ConvBackbone: input has " + std::to_string(x.channels()) +
                                " channels, expected " + std::to_string(in_channels_));
  }
  std::vector<Tensor> stages;
  stages.reserve(channels_.size());
  const Tensor* in = &x;
  for (std::size_t s = 0; s < channels_.size(); ++s) {
    stages.push_back(conv_relu_forward(*in, &params_[weight_offset_[s]], &params_[bias_offset_[s]],
                                       channels_[s]));
    in = &stages.back();
  }
  return stages;
}

Tensor ConvBackbone::backward(const Tensor& x, const std::vector<Tensor>& stages, std::size_t from,
                              Tensor grad, std::span<double> param_grad,
                              std::size_t down_to) const {
  if (from >= channels_.size() || down_to > from) {
    throw std::invalid_argument("ConvBackbone::backward: bad stage range");
  }
  if (!param_grad.empty() && param_grad.size() != params_.size()) {
    throw std::invalid_argument("ConvBackbone::backward: parameter gradient size mismatch");
  }
  for (std::size_t s = from + 1; s-- > down_to;) {
    const Tensor& in = s == 0 ? x : stages[s - 1];
    double* dw = param_grad.empty() ? nullptr : &param_grad[weight_offset_[s]];
    double* db = param_grad.empty() ? nullptr : &param_grad[bias_offset_[s]];
    grad = conv_relu_backward(in, stages[s], grad, &params_[weight_offset_[s]], dw, db);
  }
  return grad;
}

std::vector<ParamSlice> ConvBackbone::layout() const {
  std::vector<ParamSlice> out;
  int cin = in_channels_;
  for (std::size_t s = 0; s < channels_.size(); ++s) {
    const std::string stage = "conv" + std::to_string(s + 1);
    out.push_back({"backbone/" + stage + "/weight", weight_offset_[s], {K, K, cin, channels_[s]}});
    out.push_back({"backbone/" + stage + "/bias", bias_offset_[s], {channels_[s]}});
    cin = channels_[s];
  }
  return out;
}

std::unique_ptr<Backbone> ConvBackbone::clone() const {
  return std::make_unique<ConvBackbone>(*this);
}

std::unique_ptr<ConvBackbone> make_tiny_backbone(std::uint64_t seed) {
  return std::make_unique<ConvBackbone>(std::vector<int>{8, 16, 32}, seed, 3);
}

// ---------------------------------------------------------------------------
// Head

Head::Head(int feature_channels, HeadConfig config) : in_(feature_channels), config_(config) {
  if (in_ < 1) throw std::invalid_argument("Head: feature_channels must be >= 1");
  if (config_.dense_units < 1) throw std::invalid_argument("Head: dense_units must be >= 1");
  if (config_.classes < 2) throw std::invalid_argument("Head: need at least 2 classes");
  if (!(config_.dropout_rate >= 0.0 && config_.dropout_rate < 1.0)) {
    throw std::invalid_argument("Head: dropout_rate must be in [0, 1)");
  }
  const auto u = static_cast<std::size_t>(config_.dense_units);
  const auto c = static_cast<std::size_t>(config_.classes);
  const auto f = static_cast<std::size_t>(in_);
  w1_ = 0;
  b1_ = w1_ + u * f;
  w2_ = b1_ + u;
  b2_ = w2_ + c * u;
  params_.assign(b2_ + c, 0.0);
}

Head::Head(int feature_channels, HeadConfig config, Rng& rng) : Head(feature_channels, config) {
  const auto u = static_cast<std::size_t>(config_.dense_units);
  const auto c = static_cast<std::size_t>(config_.classes);
  const auto f = static_cast<std::size_t>(in_);
  const double lim1 = std::sqrt(6.0 / static_cast<double>(f + u));
  for (std::size_t i = 0; i < u * f; ++i) params_[w1_ + i] = rng.uniform(-lim1, lim1);
  const double lim2 = std::sqrt(6.0 / static_cast<double>(u + c));
  for (std::size_t i = 0; i < c * u; ++i) params_[w2_ + i] = rng.uniform(-lim2, lim2);
}

Head Head::zeros(int feature_channels, HeadConfig config) { return Head(feature_channels, config); }

std::vector<double> Head::pool(const Tensor& features) {
  const int c = features.channels();
  std::vector<double> pooled(static_cast<std::size_t>(c), 0.0);
  const auto v = features.values();
  for (std::size_t i = 0; i < v.size(); i += static_cast<std::size_t>(c))
    for (int k = 0; k < c; ++k) pooled[k] += v[i + k];
  const double n = static_cast<double>(features.height()) * features.width();
  for (double& p : pooled) p /= n;
  return pooled;
}

std::vector<double> Head::forward(std::span<const double> pooled, std::span<const double> mask,
                                  Trace* trace) const {
  if (pooled.size() != static_cast<std::size_t>(in_)) {
    throw std::invalid_argument("Head::forward: expected " + std::to_string(in_) + " features");
  }
  const auto u = static_cast<std::size_t>(config_.dense_units);
  const auto c = static_cast<std::size_t>(config_.classes);
  const auto f = static_cast<std::size_t>(in_);
  if (!mask.empty() && mask.size() != u) throw std::invalid_argument("Head::forward: bad mask size");

  std::vector<double> hidden(u);
  for (std::size_t j = 0; j < u; ++j) {
    const double* w = &params_[w1_ + j * f];
    double z = params_[b1_ + j];
    for (std::size_t i = 0; i < f; ++i) z += w[i] * pooled[i];
    hidden[j] = z < 0.0 ? 0.0 : z;
  }
  std::vector<double> dropped = hidden;
  if (!mask.empty())
    for (std::size_t j = 0; j < u; ++j) dropped[j] *= mask[j];

  std::vector<double> logits(c);
  for (std::size_t k = 0; k < c; ++k) {
    const double* w = &params_[w2_ + k * u];
    double z = params_[b2_ + k];
    for (std::size_t j = 0; j < u; ++j) z += w[j] * dropped[j];
    logits[k] = z;
  }
  if (trace) {
    trace->pooled.assign(pooled.begin(), pooled.end());
    trace->hidden = std::move(hidden);
    trace->mask.assign(mask.begin(), mask.end());
    trace->dropped = std::move(dropped);
  }
  return logits;
}

std::vector<double> Head::backward(const Trace& trace, std::span<const double> grad_logits,
                                   std::span<double> param_grad) const {
  const auto u = static_cast<std::size_t>(config_.dense_units);
  const auto c = static_cast<std::size_t>(config_.classes);
  const auto f = static_cast<std::size_t>(in_);
  if (grad_logits.size() != c) throw std::invalid_argument("Head::backward: bad gradient size");
  if (!param_grad.empty() && param_grad.size() != params_.size()) {
    throw std::invalid_argument("Head::backward: parameter gradient size mismatch");
  }
  const bool acc = !param_grad.empty();

  std::vector<double> dhidden(u, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    const double g = grad_logits[k];
    const double* w = &params_[w2_ + k * u];
    for (std::size_t j = 0; j < u; ++j) dhidden[j] += w[j] * g;
    if (acc) {
      double* dw = &param_grad[w2_ + k * u];
      for (std::size_t j = 0; j < u; ++j) dw[j] += g * trace.dropped[j];
      param_grad[b2_ + k] += g;
    }
  }
  std::vector<double> dpooled(f, 0.0);
  for (std::size_t j = 0; j < u; ++j) {
    double dz = trace.hidden[j] > 0.0 ? dhidden[j] : 0.0;
    if (!trace.mask.empty()) dz *= trace.mask[j];
    if (dz == 0.0) continue;
    const double* w = &params_[w1_ + j * f];
    for (std::size_t i = 0; i < f; ++i) dpooled[i] += w[i] * dz;
    if (acc) {
      double* dw = &param_grad[w1_ + j * f];
      for (std::size_t i = 0; i < f; ++i) dw[i] += dz * trace.pooled[i];
      param_grad[b1_ + j] += dz;
    }
  }
  return dpooled;
}

std::vector<double> Head::dropout_mask(Rng& rng) const {
  const double keep = 1.0 - config_.dropout_rate;
  std::vector<double> mask(static_cast<std::size_t>(config_.dense_units));
  for (double& m : mask) m = rng.uniform() < config_.dropout_rate ? 0.0 : 1.0 / keep;
  return mask;
}

std::vector<ParamSlice> Head::layout() const {
  return {{"head/dense1/weight", w1_, {config_.dense_units, in_}},
          {"head/dense1/bias", b1_, {config_.dense_units}},
          {"head/dense2/weight", w2_, {config_.classes, config_.dense_units}},
          {"head/dense2/bias", b2_, {config_.classes}}};
}

// ---------------------------------------------------------------------------
// Classifier

Classifier::Classifier(std::unique_ptr<Backbone> backbone, Head head)
    : backbone_(std::move(backbone)), head_(std::move(head)) {
  if (!backbone_) throw std::invalid_argument("Classifier: null backbone");
  if (backbone_->feature_channels() != head_.feature_channels()) {
    throw std::invalid_argument("Classifier: head expects " +
                                std::to_string(head_.feature_channels()) +
                                " features, backbone yields " +
                                std::to_string(backbone_->feature_channels()));
  }
}

Classifier::Classifier(const Classifier& other)
    : backbone_(other.backbone_->clone()), head_(other.head_) {}

Classifier& Classifier::operator=(const Classifier& other) {
  if (this != &other) {
    backbone_ = other.backbone_->clone();
    head_ = other.head_;
  }
  return *this;
}

std::vector<double> Classifier::logits(const Tensor& x) const {
  const auto stages = backbone_->forward(x);
  return head_.forward(Head::pool(stages.back()));
}

std::vector<double> Classifier::probabilities(const Tensor& x) const { return softmax(logits(x)); }

std::vector<std::string> Classifier::layer_names() const { return backbone_->stage_names(); }

LayerProbe Classifier::probe(const Tensor& x, int class_index, std::string_view layer) const {
  const auto names = backbone_->stage_names();
  const auto it = std::find(names.begin(), names.end(), layer);
  if (it == names.end()) {
    throw std::invalid_argument("unknown layer '" + std::string(layer) + "'");
  }
  if (class_index < 0 || class_index >= head_.config().classes) {
    throw std::invalid_argument("class index out of range");
  }
  const auto target = static_cast<std::size_t>(it - names.begin());

  const auto stages = backbone_->forward(x);
  const Tensor& top = stages.back();
  Head::Trace trace;
  LayerProbe out;
  out.logits = head_.forward(Head::pool(top), {}, &trace);
  std::vector<double> onehot(out.logits.size(), 0.0);
  onehot[static_cast<std::size_t>(class_index)] = 1.0;
  const auto dpooled = head_.backward(trace, onehot, {});

  Tensor grad = spread_pooled_gradient(top, dpooled);

  const std::size_t last = stages.size() - 1;
  if (target < last) grad = backbone_->backward(x, stages, last, std::move(grad), {}, target + 1);
  out.activations = stages[target];
  out.gradients = std::move(grad);
  return out;
}

Tensor Classifier::input_gradient(const Tensor& x, int class_index) const {
  if (class_index < 0 || class_index >= head_.config().classes) {
    throw std::invalid_argument("class index out of range");
  }
  const auto stages = backbone_->forward(x);
  const Tensor& top = stages.back();
  Head::Trace trace;
  const auto logit = head_.forward(Head::pool(top), {}, &trace);
  std::vector<double> onehot(logit.size(), 0.0);
  onehot[static_cast<std::size_t>(class_index)] = 1.0;
  const auto dpooled = head_.backward(trace, onehot, {});
  Tensor grad = spread_pooled_gradient(top, dpooled);
  return backbone_->backward(x, stages, stages.size() - 1, std::move(grad), {}, 0);
}

double Classifier::loss(const Tensor& x, Label label, const ClassWeights& weights,
                        std::span<const double> mask, Gradients* grads, bool with_backbone) const {
  const auto stages = backbone_->forward(x);
  const Tensor& top = stages.back();
  Head::Trace trace;
  const auto logit = head_.forward(Head::pool(top), mask, &trace);
  const double value = weighted_cross_entropy(softmax(logit), label, weights);
  if (!grads) return value;

  if (grads->head.size() != head_.parameters().size()) grads->head.assign(head_.parameters().size(), 0.0);
  const auto glogits = weighted_cross_entropy_grad(logit, label, weights);
  const auto dpooled = head_.backward(trace, glogits, grads->head);
  if (with_backbone) {
    const auto n = backbone_->parameters().size();
    if (grads->backbone.size() != n) grads->backbone.assign(n, 0.0);
    Tensor grad = spread_pooled_gradient(top, dpooled);
    backbone_->backward(x, stages, stages.size() - 1, std::move(grad), grads->backbone, 0);
  }
  return value;
}

}  // namespace fakelens
