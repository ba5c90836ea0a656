#pragma once

// Central finite-difference checks for the classifier's analytic
// gradients. Each check samples a subset of coordinates and returns the
// norm-wise relative error ||analytic - numeric|| / ||numeric||.

#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <random>
#include <vector>

#include "fakelens/network.hpp"

namespace testing_support {

inline constexpr double kStep = 1e-5;

inline double norm_relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    num += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    den += numeric[i] * numeric[i];
  }
  if (den == 0.0) return std::sqrt(num);
  return std::sqrt(num / den);
}

inline std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, std::mt19937_64& gen) {
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  if (n <= k) return all;
  std::shuffle(all.begin(), all.end(), gen);
  all.resize(k);
  std::sort(all.begin(), all.end());
  return all;
}

// d(weighted loss)/d(parameters) for the head and the backbone.
struct ParamErrors {
  double head = 0.0;
  double backbone = 0.0;
};

inline ParamErrors param_gradient_error(fakelens::Classifier& model, const fakelens::Tensor& x,
                                        fakelens::Label label, const fakelens::ClassWeights& w,
                                        std::span<const double> mask, std::size_t samples,
                                        std::mt19937_64& gen) {
  fakelens::Classifier::Gradients g;
  model.loss(x, label, w, mask, &g, true);

  auto check = [&](std::span<double> params, const std::vector<double>& analytic) {
    std::vector<double> a, n;
    for (std::size_t i : sample_indices(params.size(), samples, gen)) {
      const double keep = params[i];
      params[i] = keep + kStep;
      const double up = model.loss(x, label, w, mask);
      params[i] = keep - kStep;
      const double down = model.loss(x, label, w, mask);
      params[i] = keep;
      a.push_back(analytic[i]);
      n.push_back((up - down) / (2 * kStep));
    }
    return norm_relative_error(a, n);
  };
  ParamErrors e;
  e.head = check(model.head().parameters(), g.head);
  e.backbone = check(model.backbone().parameters(), g.backbone);
  return e;
}

// d(class logit)/d(x), the gradient behind saliency and SmoothGrad.
inline double input_gradient_error(const fakelens::Classifier& model, const fakelens::Tensor& x,
                                   int cls, std::size_t samples, std::mt19937_64& gen) {
  const fakelens::Tensor g = model.input_gradient(x, cls);
  fakelens::Tensor probe = x;
  std::vector<double> a, n;
  for (std::size_t i : sample_indices(x.size(), samples, gen)) {
    const double keep = probe.values()[i];
    probe.values()[i] = keep + kStep;
    const double up = model.logits(probe)[cls];
    probe.values()[i] = keep - kStep;
    const double down = model.logits(probe)[cls];
    probe.values()[i] = keep;
    a.push_back(g.values()[i]);
    n.push_back((up - down) / (2 * kStep));
  }
  return norm_relative_error(a, n);
}

// d(class logit)/d(activations of `layer`). The stages above `layer` are
// rebuilt as a separate backbone holding copies of the original weights,
// so the class logit can be re-evaluated from perturbed activations.
inline double probe_gradient_error(const fakelens::Classifier& model, const fakelens::Tensor& x,
                                   int cls, std::size_t layer_index, std::size_t samples,
                                   std::mt19937_64& gen) {
  const auto& conv = dynamic_cast<const fakelens::ConvBackbone&>(model.backbone());
  const auto names = model.layer_names();
  const fakelens::LayerProbe p = model.probe(x, cls, names[layer_index]);

  std::vector<int> upper(conv.channels().begin() + static_cast<std::ptrdiff_t>(layer_index) + 1,
                         conv.channels().end());
  std::unique_ptr<fakelens::ConvBackbone> rest;
  if (!upper.empty()) {
    rest = std::make_unique<fakelens::ConvBackbone>(upper, 0, conv.channels()[layer_index]);
    const auto full = conv.layout();
    const auto part = rest->layout();
    for (std::size_t s = 0; s < part.size(); ++s) {
      const auto& src = full[2 * (layer_index + 1) + s];
      std::copy_n(conv.parameters().begin() + static_cast<std::ptrdiff_t>(src.offset), src.size(),
                  rest->parameters().begin() + static_cast<std::ptrdiff_t>(part[s].offset));
    }
  }
  auto score = [&](const fakelens::Tensor& a) {
    const fakelens::Tensor top = rest ? rest->forward(a).back() : a;
    return model.head().forward(fakelens::Head::pool(top))[static_cast<std::size_t>(cls)];
  };

  fakelens::Tensor a = p.activations;
  std::vector<double> an, nu;
  for (std::size_t i : sample_indices(a.size(), samples, gen)) {
    const double keep = a.values()[i];
    a.values()[i] = keep + kStep;
    const double up = score(a);
    a.values()[i] = keep - kStep;
    const double down = score(a);
    a.values()[i] = keep;
    an.push_back(p.gradients.values()[i]);
    nu.push_back((up - down) / (2 * kStep));
  }
  return norm_relative_error(an, nu);
}

}  // namespace testing_support
