#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>

#include <opencv2/core.hpp>

#include "fakelens/dataset.hpp"
#include "fakelens/network.hpp"

namespace fakelens {

/// counts[true][pred], indexed by Label.
struct ConfusionMatrix {
  std::array<std::array<std::size_t, 2>, 2> counts{};

  std::size_t& at(Label truth, Label pred) {
    return counts[static_cast<int>(truth)][static_cast<int>(pred)];
  }
  std::size_t at(Label truth, Label pred) const {
    return counts[static_cast<int>(truth)][static_cast<int>(pred)];
  }
  std::size_t total() const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

ConfusionMatrix confusion(std::span<const Label> y_true, std::span<const Label> y_pred);

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct EvalReport {
  ConfusionMatrix confusion;
  double accuracy = 0.0;
  std::map<Label, ClassScores> per_class;
  std::map<Label, std::size_t> support;
  ClassScores weighted;  // support-weighted means of per_class
};

/// 0/0 counts as 0 for precision, recall and F1.
EvalReport report(const ConfusionMatrix& cm);

/// Argmax of a two-class probability vector; an exact tie predicts fake.
Label predict_label(std::span<const double> probs);

using SampleLoader = std::function<Tensor(const SampleRecord&)>;

/// Tensor file named by the record's tensor_path.
Tensor load_record(const SampleRecord& record);

/// Classifies every record of `split` and tallies the result. When
/// `confusion_image` is set the matrix is also rendered there as a PNG.
EvalReport evaluate(const ImageClassifier& model, const DatasetManifest& manifest,
                    Split split = Split::test, const SampleLoader& loader = load_record,
                    const std::optional<std::filesystem::path>& confusion_image = std::nullopt);

/// 8-bit BGR picture of the matrix: shaded cells with their counts.
cv::Mat render_confusion(const ConfusionMatrix& cm);

std::string to_json(const EvalReport& r);
void write_report(const std::filesystem::path& path, const EvalReport& r);

}  // namespace fakelens
