#include "fakelens/metrics.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "fakelens/imbalance.hpp"

namespace fakelens {
namespace {

double ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

}  // namespace

std::size_t ConfusionMatrix::total() const {
  std::size_t n = 0;
  for (const auto& row : counts)
    for (std::size_t v : row) n += v;
  return n;
}

ConfusionMatrix confusion(std::span<const Label> y_true, std::span<const Label> y_pred) {
  if (y_true.size() != y_pred.size()) {
    throw std::invalid_argument("confusion: y_true and y_pred differ in length");
  }
  if (y_true.empty()) throw std::invalid_argument("confusion: no labels");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < y_true.size(); ++i) ++cm.at(y_true[i], y_pred[i]);
  return cm;
}

EvalReport report(const ConfusionMatrix& cm) {
  const std::size_t total = cm.total();
  if (total == 0) throw std::invalid_argument("report: empty confusion matrix");
  EvalReport r;
  r.confusion = cm;
  std::size_t trace = 0;
  for (Label c : kLabels) {
    const double tp = static_cast<double>(cm.at(c, c));
    double predicted = 0.0, actual = 0.0;
    for (Label o : kLabels) {
      predicted += static_cast<double>(cm.at(o, c));
      actual += static_cast<double>(cm.at(c, o));
    }
    ClassScores s;
    s.precision = ratio(tp, predicted);
    s.recall = ratio(tp, actual);
    s.f1 = ratio(2.0 * s.precision * s.recall, s.precision + s.recall);
    r.per_class[c] = s;
    r.support[c] = static_cast<std::size_t>(actual);
    trace += cm.at(c, c);
  }
  r.accuracy = static_cast<double>(trace) / static_cast<double>(total);
  for (Label c : kLabels) {
    const double w = static_cast<double>(r.support[c]);
    r.weighted.precision += w * r.per_class[c].precision;
    r.weighted.recall += w * r.per_class[c].recall;
    r.weighted.f1 += w * r.per_class[c].f1;
  }
  r.weighted.precision /= static_cast<double>(total);
  r.weighted.recall /= static_cast<double>(total);
  r.weighted.f1 /= static_cast<double>(total);
  return r;
}

Label predict_label(std::span<const double> probs) {
  if (probs.size() != kLabels.size()) {
    throw std::invalid_argument("predict_label: expected one probability per class");
  }
  return probs[static_cast<int>(Label::fake)] >= probs[static_cast<int>(Label::real)] ? Label::fake
                                                                                       : Label::real;
}

Tensor load_record(const SampleRecord& record) { return load_sample(record.tensor_path); }

EvalReport evaluate(const ImageClassifier& model, const DatasetManifest& manifest, Split split,
                    const SampleLoader& loader,
                    const std::optional<std::filesystem::path>& confusion_image) {
  const auto records = manifest.in_split(split);
  if (records.empty()) {
    throw std::invalid_argument("evaluate: split '" + std::string(to_string(split)) + "' is empty");
  }
  std::vector<Label> truth, pred;
  truth.reserve(records.size());
  pred.reserve(records.size());
  for (const auto& rec : records) {
    truth.push_back(rec.label);
    pred.push_back(predict_label(softmax(model.logits(loader(rec)))));
  }
  EvalReport r = report(confusion(truth, pred));
  if (confusion_image) {
    if (confusion_image->has_parent_path()) {
      std::filesystem::create_directories(confusion_image->parent_path());
    }
    if (!cv::imwrite(confusion_image->string(), render_confusion(r.confusion))) {
      throw std::runtime_error("cannot write " + confusion_image->string());
    }
  }
  return r;
}

cv::Mat render_confusion(const ConfusionMatrix& cm) {
  constexpr int cell = 120, margin = 90;
  cv::Mat img(margin + 2 * cell + 10, margin + 2 * cell + 10, CV_8UC3, cv::Scalar(255, 255, 255));
  std::size_t peak = 1;
  for (const auto& row : cm.counts)
    for (std::size_t v : row) peak = std::max(peak, v);

  const auto font = cv::FONT_HERSHEY_SIMPLEX;
  for (Label t : kLabels) {
    const int r = static_cast<int>(t);
    cv::putText(img, std::string(to_string(t)), {10, margin + r * cell + cell / 2}, font, 0.5,
                cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
    cv::putText(img, std::string(to_string(t)), {margin + r * cell + 30, margin - 20}, font, 0.5,
                cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
    for (Label p : kLabels) {
      const int c = static_cast<int>(p);
      const std::size_t v = cm.at(t, p);
      const int shade = 255 - static_cast<int>(200.0 * static_cast<double>(v) / static_cast<double>(peak));
      const cv::Rect box(margin + c * cell, margin + r * cell, cell, cell);
      cv::rectangle(img, box, cv::Scalar(255, shade, shade), cv::FILLED);
      cv::rectangle(img, box, cv::Scalar(0, 0, 0), 1);
      const cv::Scalar ink = shade < 128 ? cv::Scalar(255, 255, 255) : cv::Scalar(0, 0, 0);
      cv::putText(img, std::to_string(v), {box.x + 20, box.y + cell / 2 + 8}, font, 0.8, ink, 2,
                  cv::LINE_AA);
    }
  }
  cv::putText(img, "true \\ pred", {5, 25}, font, 0.5, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
  return img;
}

std::string to_json(const EvalReport& r) {
  using nlohmann::json;
  auto scores = [](const ClassScores& s) {
    return json{{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
  };
  json per_class = json::object(), support = json::object(), matrix = json::array();
  for (Label t : kLabels) {
    per_class[std::string(to_string(t))] = scores(r.per_class.at(t));
    support[std::string(to_string(t))] = r.support.at(t);
    json row = json::array();
    for (Label p : kLabels) row.push_back(r.confusion.at(t, p));
    matrix.push_back(row);
  }
  json doc = {{"labels", {"real", "fake"}},
              {"confusion", matrix},
              {"accuracy", r.accuracy},
              {"per_class", per_class},
              {"support", support},
              {"weighted", scores(r.weighted)}};
  return doc.dump(2);
}

void write_report(const std::filesystem::path& path, const EvalReport& r) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  os << to_json(r) << '\n';
  if (!os) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace fakelens
