#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fakelens/dataset.hpp"
#include "fakelens/imbalance.hpp"
#include "fakelens/random.hpp"
#include "fakelens/tensor.hpp"

namespace fakelens {

/// Named region of a flat parameter vector.
struct ParamSlice {
  std::string name;
  std::size_t offset = 0;
  std::vector<int> shape;

  std::size_t size() const;
};

/// Anything that maps an input image to class logits.
class ImageClassifier {
 public:
  virtual ~ImageClassifier() = default;
  virtual std::vector<double> logits(const Tensor& x) const = 0;
};

/// Activations of one layer together with d(class score)/d(activations).
struct LayerProbe {
  Tensor activations;
  Tensor gradients;
  std::vector<double> logits;
};

/// Gradient queries the explainers rely on. The class score is the
/// pre-softmax logit of the requested class.
class ExplainableModel : public ImageClassifier {
 public:
  /// Probe-able layers, shallowest first; back() is the final conv stage.
  virtual std::vector<std::string> layer_names() const = 0;
  /// d(score of class_index) / d(x), same shape as x.
  virtual Tensor input_gradient(const Tensor& x, int class_index) const = 0;
  /// Throws std::invalid_argument for an unknown layer.
  virtual LayerProbe probe(const Tensor& x, int class_index, std::string_view layer) const = 0;
};

/// Convolutional feature extractor beneath the classification head.
class Backbone {
 public:
  virtual ~Backbone() = default;

  virtual std::vector<std::string> stage_names() const = 0;
  virtual int feature_channels() const = 0;

  /// Output of every stage for input x; back() is the final feature map.
  virtual std::vector<Tensor> forward(const Tensor& x) const = 0;

  /// Backpropagates `grad` = d(loss)/d(output of stage `from`) through
  /// stages from..down_to and returns d(loss)/d(input of stage down_to);
  /// down_to = 0 yields d(loss)/d(x). Parameter gradients of the visited
  /// stages are accumulated into `param_grad` when it is non-empty.
  virtual Tensor backward(const Tensor& x, const std::vector<Tensor>& stages, std::size_t from,
                          Tensor grad, std::span<double> param_grad,
                          std::size_t down_to) const = 0;

  virtual std::span<double> parameters() = 0;
  virtual std::span<const double> parameters() const = 0;
  virtual std::vector<ParamSlice> layout() const = 0;
  virtual std::unique_ptr<Backbone> clone() const = 0;
};

/// Stack of 3x3, stride-2, padding-1 convolutions, each followed by ReLU.
/// Weights are He-normal and biases uniform in [-0.05, 0.05], drawn from
/// a generator seeded with `seed`.
class ConvBackbone : public Backbone {
 public:
  ConvBackbone(std::vector<int> channels, std::uint64_t seed, int in_channels = 3);

  std::vector<std::string> stage_names() const override;
  int feature_channels() const override { return channels_.back(); }
  std::vector<Tensor> forward(const Tensor& x) const override;
  Tensor backward(const Tensor& x, const std::vector<Tensor>& stages, std::size_t from, Tensor grad,
                  std::span<double> param_grad, std::size_t down_to) const override;
  std::span<double> parameters() override { return params_; }
  std::span<const double> parameters() const override { return params_; }
  std::vector<ParamSlice> layout() const override;
  std::unique_ptr<Backbone> clone() const override;

  const std::vector<int>& channels() const { return channels_; }
  int in_channels() const { return in_channels_; }

  static constexpr int kKernel = 3;
  static constexpr int kStride = 2;
  static constexpr int kPad = 1;

 private:
  int in_channels_;
  std::vector<int> channels_;
  std::vector<std::size_t> weight_offset_;
  std::vector<std::size_t> bias_offset_;
  std::vector<double> params_;
};

/// Reference backbone for desk-scale work: 8 -> 16 -> 32 channels, which
/// turns a 224x224x3 crop into a 28x28x32 feature map.
std::unique_ptr<ConvBackbone> make_tiny_backbone(std::uint64_t seed);

struct HeadConfig {
  int dense_units = 256;
  double dropout_rate = 0.5;
  int classes = 2;
};

/// Global average pool -> dense(ReLU) -> dropout -> dense -> softmax.
/// The dense layers are Glorot-uniform initialised with zero biases.
class Head {
 public:
  Head(int feature_channels, HeadConfig config, Rng& rng);
  /// All weights and biases zero.
  static Head zeros(int feature_channels, HeadConfig config);

  struct Trace {
    std::vector<double> pooled;
    std::vector<double> hidden;   // after ReLU
    std::vector<double> mask;     // empty in inference mode
    std::vector<double> dropped;  // hidden after dropout
  };

  static std::vector<double> pool(const Tensor& features);

  /// Logits from pooled features. A non-empty `mask` (see dropout_mask)
  /// enables training-mode dropout.
  std::vector<double> forward(std::span<const double> pooled, std::span<const double> mask = {},
                              Trace* trace = nullptr) const;

  /// Accumulates parameter gradients into `param_grad` (if non-empty) and
  /// returns d(loss)/d(pooled).
  std::vector<double> backward(const Trace& trace, std::span<const double> grad_logits,
                               std::span<double> param_grad) const;

  /// Inverted-dropout mask: each unit is 0 with probability dropout_rate,
  /// else 1 / (1 - dropout_rate).
  std::vector<double> dropout_mask(Rng& rng) const;

  const HeadConfig& config() const { return config_; }
  int feature_channels() const { return in_; }
  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }
  std::vector<ParamSlice> layout() const;

 private:
  Head(int feature_channels, HeadConfig config);

  int in_;
  HeadConfig config_;
  std::size_t w1_, b1_, w2_, b2_;
  std::vector<double> params_;
};

/// Backbone plus head.
class Classifier : public ExplainableModel {
 public:
  Classifier(std::unique_ptr<Backbone> backbone, Head head);
  Classifier(const Classifier& other);
  Classifier& operator=(const Classifier& other);
  Classifier(Classifier&&) noexcept = default;
  Classifier& operator=(Classifier&&) noexcept = default;

  std::vector<double> logits(const Tensor& x) const override;
  std::vector<std::string> layer_names() const override;
  Tensor input_gradient(const Tensor& x, int class_index) const override;
  LayerProbe probe(const Tensor& x, int class_index, std::string_view layer) const override;

  std::vector<double> probabilities(const Tensor& x) const;

  struct Gradients {
    std::vector<double> backbone;
    std::vector<double> head;
  };

  /// Weighted cross-entropy of one sample. When `grads` is non-null the
  /// head gradient (and the backbone gradient if `with_backbone`) is
  /// accumulated into it. A non-empty `mask` enables dropout.
  double loss(const Tensor& x, Label label, const ClassWeights& weights,
              std::span<const double> mask = {}, Gradients* grads = nullptr,
              bool with_backbone = false) const;

  Backbone& backbone() { return *backbone_; }
  const Backbone& backbone() const { return *backbone_; }
  Head& head() { return head_; }
  const Head& head() const { return head_; }

 private:
  std::unique_ptr<Backbone> backbone_;
  Head head_;
};

}  // namespace fakelens
