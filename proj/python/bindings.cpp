#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "fakelens/config.hpp"
#include "fakelens/dataset.hpp"
#include "fakelens/imbalance.hpp"
#include "fakelens/keyframe.hpp"
#include "fakelens/metrics.hpp"
#include "fakelens/pipeline.hpp"
#include "fakelens/synthetic.hpp"

namespace py = pybind11;
using namespace fakelens;

namespace {

using ByteArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

cv::Mat to_mat(const ByteArray& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw std::invalid_argument("expected an HxW or HxWxC uint8 array");
  const int h = static_cast<int>(a.shape(0));
  const int w = static_cast<int>(a.shape(1));
  const int c = a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1;
  cv::Mat view(h, w, CV_8UC(c), const_cast<std::uint8_t*>(a.data()));
  return view.clone();
}

std::vector<cv::Mat> to_mats(const std::vector<ByteArray>& frames) {
  std::vector<cv::Mat> out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(to_mat(f));
  return out;
}

std::vector<Label> to_labels(const std::vector<std::string>& names) {
  std::vector<Label> out;
  for (const auto& n : names) out.push_back(parse_label(n));
  return out;
}

std::map<Label, std::size_t> to_counts(const std::map<std::string, std::size_t>& counts) {
  std::map<Label, std::size_t> out;
  for (const auto& [k, v] : counts) out[parse_label(k)] = v;
  return out;
}

std::map<std::string, double> to_dict(const ClassWeights& w) {
  std::map<std::string, double> out;
  for (const auto& [k, v] : w.weights) out[std::string(to_string(k))] = v;
  return out;
}

py::dict scores_dict(const ClassScores& s) {
  py::dict d;
  d["precision"] = s.precision;
  d["recall"] = s.recall;
  d["f1"] = s.f1;
  return d;
}

py::dict report_dict(const EvalReport& r) {
  py::dict per_class;
  for (const auto& [label, s] : r.per_class) per_class[py::str(std::string(to_string(label)))] = scores_dict(s);
  py::dict d;
  d["confusion"] = r.confusion.counts;
  d["accuracy"] = r.accuracy;
  d["per_class"] = per_class;
  d["weighted"] = scores_dict(r.weighted);
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "fakelens core: keyframes, class weighting, splitting, metrics and the run pipeline";

  py::register_exception<NotFoundError>(m, "NotFoundError", PyExc_FileNotFoundError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);

  m.def("frame_difference",
        [](const ByteArray& a, const ByteArray& b) { return frame_difference(to_mat(a), to_mat(b)); },
        py::arg("a"), py::arg("b"));
  m.def("difference_curve",
        [](const std::vector<ByteArray>& frames) { return difference_curve(to_mats(frames)).values; },
        py::arg("frames"));
  m.def("smooth",
        [](const std::vector<double>& values, int window) {
          DifferenceCurve c;
          c.values = values;
          return smooth(c, window).values;
        },
        py::arg("values"), py::arg("window"));
  m.def("local_maxima",
        [](const std::vector<double>& values, int order) { return local_maxima(values, order); },
        py::arg("values"), py::arg("order"));
  m.def("extract_keyframes",
        [](const std::vector<ByteArray>& frames, int window, int order) {
          const KeyframeSet k = extract_keyframes(to_mats(frames), {window, order});
          py::dict d;
          d["indices"] = k.indices;
          d["scores"] = k.scores;
          d["window"] = k.params.window;
          d["order"] = k.params.order;
          return d;
        },
        py::arg("frames"), py::arg("window") = 9, py::arg("order") = 3);

  m.def("class_weights",
        [](const std::map<std::string, std::size_t>& counts) { return to_dict(class_weights(to_counts(counts))); },
        py::arg("counts"));
  m.def("weighted_cross_entropy",
        [](const std::vector<double>& probs, const std::string& label,
           const std::map<std::string, double>& weights) {
          ClassWeights w;
          for (const auto& [k, v] : weights) w.weights[parse_label(k)] = v;
          return weighted_cross_entropy(probs, parse_label(label), w);
        },
        py::arg("probs"), py::arg("label"), py::arg("weights"));

  m.def("allocate_split",
        [](std::size_t count, std::array<double, 3> r) {
          return allocate_split(count, {r[0], r[1], r[2]});
        },
        py::arg("count"), py::arg("ratios") = std::array<double, 3>{0.8, 0.1, 0.1});

  m.def("confusion",
        [](const std::vector<std::string>& y_true, const std::vector<std::string>& y_pred) {
          return confusion(to_labels(y_true), to_labels(y_pred)).counts;
        },
        py::arg("y_true"), py::arg("y_pred"));
  m.def("report",
        [](const std::vector<std::string>& y_true, const std::vector<std::string>& y_pred) {
          return report_dict(report(confusion(to_labels(y_true), to_labels(y_pred))));
        },
        py::arg("y_true"), py::arg("y_pred"));

  m.def("validate_config_json",
        [](const std::string& text) {
          const ConfigCheck c = validate_config(nlohmann::json::parse(text));
          std::optional<std::string> normalised;
          if (c.config) normalised = to_json(*c.config).dump();
          return std::make_pair(normalised, c.errors);
        },
        py::arg("text"),
        "Returns (normalised config as JSON text or None, list of errors).");

  m.def("run_pipeline_json",
        [](const std::string& text, const std::vector<std::string>& stage_names) {
          const ConfigCheck c = validate_config(nlohmann::json::parse(text));
          if (!c.ok()) throw std::invalid_argument("invalid config: " + c.errors.front());
          std::vector<Stage> stages;
          for (const auto& s : stage_names) stages.push_back(parse_stage(s));
          if (stages.empty()) stages.assign(kStages.begin(), kStages.end());
          RunOutcome out;
          {
            py::gil_scoped_release release;
            out = run_pipeline(*c.config, stages);
          }
          py::list ran;
          for (const auto& s : out.stages) {
            py::dict d;
            d["stage"] = std::string(to_string(s.stage));
            d["skipped"] = s.skipped;
            d["artifacts"] = s.artifacts;
            ran.append(d);
          }
          py::dict d;
          d["ok"] = out.ok;
          d["run_dir"] = out.run_dir.string();
          d["stages"] = ran;
          d["error"] = out.error;
          return d;
        },
        py::arg("text"), py::arg("stages") = std::vector<std::string>{});

  m.def("read_tensor",
        [](const std::filesystem::path& path) {
          const Tensor t = read_tensor(path);
          py::array_t<double> out({t.height(), t.width(), t.channels()});
          std::copy(t.values().begin(), t.values().end(), out.mutable_data());
          return out;
        },
        py::arg("path"));

  m.def("write_fixture", [](const std::filesystem::path& dir, std::uint64_t seed) { write_fixture(dir, seed); },
        py::arg("dir"), py::arg("seed") = 0,
        "Writes a real and a fake synthetic video under dir/real and dir/fake.");
}
