#include "fakelens/imbalance.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace fakelens {

double ClassWeights::at(Label label) const {
  auto it = weights.find(label);
  if (it == weights.end()) {
    throw std::invalid_argument("no class weight for label '" + std::string(to_string(label)) + "'");
  }
  return it->second;
}

ClassWeights class_weights(const std::map<Label, std::size_t>& counts) {
  std::size_t total = 0;
  for (Label l : kLabels) {
    auto it = counts.find(l);
    if (it == counts.end() || it->second == 0) {
      throw std::invalid_argument("class_weights: class '" + std::string(to_string(l)) +
                                  "' has no samples");
    }
    total += it->second;
  }
  const double k = static_cast<double>(kLabels.size());
  ClassWeights out;
  for (Label l : kLabels) {
    out.weights[l] = static_cast<double>(total) / (k * static_cast<double>(counts.at(l)));
  }
  return out;
}

ClassWeights unit_weights() {
  ClassWeights out;
  for (Label l : kLabels) out.weights[l] = 1.0;
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty input");
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - top);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

double weighted_cross_entropy(std::span<const double> probs, Label label,
                              const ClassWeights& weights) {
  const double w = weights.at(label);
  const auto idx = static_cast<std::size_t>(label);
  if (idx >= probs.size()) throw std::invalid_argument("weighted_cross_entropy: label out of range");
  const double p = std::clamp(probs[idx], kProbabilityFloor, 1.0);
  return -w * std::log(p);
}

std::vector<double> weighted_cross_entropy_grad(std::span<const double> logits, Label label,
                                                const ClassWeights& weights) {
  const double w = weights.at(label);
  const auto idx = static_cast<std::size_t>(label);
  if (idx >= logits.size()) {
    throw std::invalid_argument("weighted_cross_entropy_grad: label out of range");
  }
  std::vector<double> grad = softmax(logits);
  grad[idx] -= 1.0;
  for (double& g : grad) g *= w;
  return grad;
}

}  // namespace fakelens
