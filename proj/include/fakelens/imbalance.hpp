#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "fakelens/dataset.hpp"

namespace fakelens {

/// Per-class loss multipliers.
struct ClassWeights {
  std::map<Label, double> weights;

  double at(Label label) const;
};

/// Balanced weighting w_c = N / (K * n_c), with N the total count and K
/// the number of classes. Every label in kLabels must be present with a
/// count of at least 1.
ClassWeights class_weights(const std::map<Label, std::size_t>& counts);

/// Uniform weights of 1 for every class.
ClassWeights unit_weights();

/// Numerically stable softmax.
std::vector<double> softmax(std::span<const double> logits);

/// Probability floor applied before taking the logarithm.
inline constexpr double kProbabilityFloor = 1e-12;

/// -w_label * ln(max(probs[label], 1e-12)). `probs` is indexed by label.
double weighted_cross_entropy(std::span<const double> probs, Label label,
                              const ClassWeights& weights);

/// Gradient of weighted_cross_entropy(softmax(logits), ...) with respect to
/// the logits: w_label * (softmax(logits) - onehot(label)).
std::vector<double> weighted_cross_entropy_grad(std::span<const double> logits, Label label,
                                                const ClassWeights& weights);

}  // namespace fakelens
