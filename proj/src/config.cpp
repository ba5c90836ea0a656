#include "fakelens/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace fakelens {
namespace {

using nlohmann::json;

// Pulls typed values out of the document, recording every problem.
class Reader {
 public:
  explicit Reader(const json& doc) : doc_(doc) {}

  std::vector<std::string> errors;

  template <typename T, typename Check>
  void take(const std::string& name, T& target, Check check, const char* constraint) {
    if (!doc_.contains(name)) {
      if (is_required(name)) errors.push_back(name + ": required");
      return;
    }
    const json& v = doc_.at(name);
    T value{};
    if (!convert(v, value)) {
      errors.push_back(name + ": expected " + type_name<T>() + ", got " + v.dump());
      return;
    }
    if (!check(value)) {
      errors.push_back(name + ": " + constraint + " (got " + v.dump() + ")");
      return;
    }
    target = value;
  }

 private:
  static bool is_required(const std::string& name) {
    for (const auto& f : config_fields())
      if (f.name == name) return f.required;
    return false;
  }

  static bool convert(const json& v, std::string& out) {
    if (!v.is_string()) return false;
    out = v.get<std::string>();
    return true;
  }
  static bool convert(const json& v, std::filesystem::path& out) {
    if (!v.is_string()) return false;
    out = v.get<std::string>();
    return true;
  }
  static bool convert(const json& v, int& out) {
    if (!v.is_number_integer()) return false;
    const auto x = v.get<std::int64_t>();
    if (x < INT32_MIN || x > INT32_MAX) return false;
    out = static_cast<int>(x);
    return true;
  }
  static bool convert(const json& v, std::uint64_t& out) {
    if (v.is_number_unsigned()) {
      out = v.get<std::uint64_t>();
      return true;
    }
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) {
      out = static_cast<std::uint64_t>(v.get<std::int64_t>());
      return true;
    }
    return false;
  }
  static bool convert(const json& v, double& out) {
    if (!v.is_number()) return false;
    out = v.get<double>();
    return std::isfinite(out);
  }
  static bool convert(const json& v, bool& out) {
    if (!v.is_boolean()) return false;
    out = v.get<bool>();
    return true;
  }
  static bool convert(const json& v, std::vector<double>& out) {
    if (!v.is_array()) return false;
    for (const auto& e : v) {
      if (!e.is_number()) return false;
      out.push_back(e.get<double>());
    }
    return true;
  }
  static bool convert(const json& v, std::vector<std::string>& out) {
    if (!v.is_array()) return false;
    for (const auto& e : v) {
      if (!e.is_string()) return false;
      out.push_back(e.get<std::string>());
    }
    return true;
  }

  template <typename T>
  static const char* type_name() {
    if constexpr (std::is_same_v<T, std::string> || std::is_same_v<T, std::filesystem::path>) {
      return "a string";
    } else if constexpr (std::is_same_v<T, bool>) {
      return "a boolean";
    } else if constexpr (std::is_same_v<T, int>) {
      return "an integer";
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      return "a non-negative integer";
    } else if constexpr (std::is_same_v<T, double>) {
      return "a number";
    } else if constexpr (std::is_same_v<T, std::vector<double>>) {
      return "a list of numbers";
    } else {
      return "a list of strings";
    }
  }

  const json& doc_;
};

auto any = [](const auto&) { return true; };
auto positive = [](auto v) { return v > 0; };
auto non_negative = [](auto v) { return v >= 0; };
auto non_empty = [](const auto& v) { return !v.empty(); };

}  // namespace

HeadConfig RunConfig::head_config() const { return {dense_units, dropout_rate, 2}; }

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.lr0 = lr0;
  t.batch_size = batch_size;
  t.max_epochs = max_epochs;
  t.plateau_patience = plateau_patience;
  t.plateau_factor = plateau_factor;
  t.min_lr = min_lr;
  t.seed = seed;
  t.fine_tune = fine_tune;
  return t;
}

const std::vector<ConfigField>& config_fields() {
  using K = FieldKind;
  static const std::vector<ConfigField> fields = {
      {"run_id", K::string, false, "name of the run directory under out_dir"},
      {"real_dir", K::path, true, "directory of real videos"},
      {"fake_dir", K::path, true, "directory of fake videos"},
      {"out_dir", K::path, true, "root for run directories"},
      {"target_fps", K::number, false, "frame rate videos are resampled to"},
      {"detector", K::string, false, "face detector: marker or cascade"},
      {"cascade_path", K::path, false, "cascade model file for the cascade detector"},
      {"delete_corrupted", K::boolean, false, "delete unreadable videos during scan"},
      {"workers", K::integer, false, "parallel videos during preprocessing"},
      {"window", K::integer, false, "smoothing window (odd)"},
      {"order", K::integer, false, "local-maximum neighbourhood"},
      {"ratios", K::number_list, false, "train,val,test fractions"},
      {"seed", K::integer, false, "seed for splitting, initialisation and training"},
      {"dense_units", K::integer, false, "width of the head's hidden layer"},
      {"dropout_rate", K::number, false, "dropout rate in [0, 1)"},
      {"lr0", K::number, false, "initial learning rate"},
      {"batch_size", K::integer, false, "mini-batch size"},
      {"max_epochs", K::integer, true, "number of training epochs"},
      {"plateau_patience", K::integer, false, "epochs without improvement before decay"},
      {"plateau_factor", K::number, false, "learning-rate decay factor in (0, 1)"},
      {"min_lr", K::number, false, "learning-rate floor"},
      {"fine_tune", K::boolean, false, "train the backbone as well as the head"},
      {"explain_methods", K::string_list, false,
       "smoothgrad,gradcam,gradcam_pp,faster_scorecam (any subset)"},
      {"explain_count", K::integer, false, "test samples explained per method"},
      {"explain_class", K::string, false, "class to explain: predicted, real or fake"},
      {"n", K::integer, false, "SmoothGrad sample count"},
      {"sigma", K::number, false, "SmoothGrad noise as a fraction of the input range"},
      {"top_k", K::integer, false, "channels kept by Faster Score-CAM"},
  };
  return fields;
}

ConfigCheck validate_config(const json& document) {
  ConfigCheck out;
  if (!document.is_object()) {
    out.errors.push_back("config must be a JSON object");
    return out;
  }
  std::set<std::string> known;
  for (const auto& f : config_fields()) known.insert(f.name);
  for (const auto& [key, value] : document.items()) {
    if (!known.count(key)) out.errors.push_back(key + ": unknown key");
  }

  RunConfig c;
  Reader r(document);
  r.take("run_id", c.run_id,
         [](const std::string& s) { return !s.empty() && s.find_first_of("/\\") == std::string::npos && s != "." && s != ".."; },
         "must be a non-empty name without path separators");
  r.take("real_dir", c.real_dir, non_empty, "must not be empty");
  r.take("fake_dir", c.fake_dir, non_empty, "must not be empty");
  r.take("out_dir", c.out_dir, non_empty, "must not be empty");
  r.take("target_fps", c.target_fps, positive, "must be > 0");
  r.take("detector", c.detector,
         [](const std::string& s) { return s == "marker" || s == "cascade"; },
         "must be 'marker' or 'cascade'");
  r.take("cascade_path", c.cascade_path, any, "");
  r.take("delete_corrupted", c.delete_corrupted, any, "");
  r.take("workers", c.workers, positive, "must be >= 1");
  r.take("window", c.window, [](int w) { return w > 0 && w % 2 == 1; },
         "must be a positive odd integer");
  r.take("order", c.order, positive, "must be >= 1");

  std::vector<double> ratios{c.ratios.train, c.ratios.val, c.ratios.test};
  r.take("ratios", ratios,
         [](const std::vector<double>& v) {
           if (v.size() != 3) return false;
           double sum = 0.0;
           for (double x : v) {
             if (!(x > 0.0)) return false;
             sum += x;
           }
           return std::abs(sum - 1.0) <= 1e-9;
         },
         "must be three positive fractions summing to 1");
  c.ratios = {ratios[0], ratios[1], ratios[2]};

  r.take("seed", c.seed, any, "");
  r.take("dense_units", c.dense_units, positive, "must be >= 1");
  r.take("dropout_rate", c.dropout_rate, [](double d) { return d >= 0.0 && d < 1.0; },
         "must be in [0, 1)");
  r.take("lr0", c.lr0, non_negative, "must be >= 0");
  r.take("batch_size", c.batch_size, positive, "must be >= 1");
  r.take("max_epochs", c.max_epochs, positive, "must be >= 1");
  r.take("plateau_patience", c.plateau_patience, positive, "must be >= 1");
  r.take("plateau_factor", c.plateau_factor, [](double f) { return f > 0.0 && f < 1.0; },
         "must be in (0, 1)");
  r.take("min_lr", c.min_lr, non_negative, "must be >= 0");
  r.take("fine_tune", c.fine_tune, any, "");

  std::vector<std::string> methods;
  bool methods_ok = true;
  r.take("explain_methods", methods,
         [&](const std::vector<std::string>& v) {
           for (const auto& m : v) {
             try {
               parse_method(m);
             } catch (const std::invalid_argument&) {
               methods_ok = false;
             }
           }
           return methods_ok;
         },
         "entries must be smoothgrad, gradcam, gradcam_pp or faster_scorecam");
  if (document.contains("explain_methods") && methods_ok && document.at("explain_methods").is_array()) {
    c.explain_methods.clear();
    for (const auto& m : methods) c.explain_methods.push_back(parse_method(m));
  }
  r.take("explain_count", c.explain_count, non_negative, "must be >= 0");
  r.take("explain_class", c.explain_class,
         [](const std::string& s) { return s == "predicted" || s == "real" || s == "fake"; },
         "must be 'predicted', 'real' or 'fake'");
  r.take("n", c.n, positive, "must be >= 1");
  r.take("sigma", c.sigma, non_negative, "must be >= 0");
  r.take("top_k", c.top_k, positive, "must be >= 1");

  out.errors.insert(out.errors.end(), r.errors.begin(), r.errors.end());
  if (c.detector == "cascade" && c.cascade_path.empty()) {
    out.errors.push_back("cascade_path: required when detector is 'cascade'");
  }
  if (out.ok()) out.config = c;
  return out;
}

json to_json(const RunConfig& c) {
  json methods = json::array();
  for (ExplainMethod m : c.explain_methods) methods.push_back(std::string(to_string(m)));
  return {{"run_id", c.run_id},
          {"real_dir", c.real_dir.string()},
          {"fake_dir", c.fake_dir.string()},
          {"out_dir", c.out_dir.string()},
          {"target_fps", c.target_fps},
          {"detector", c.detector},
          {"cascade_path", c.cascade_path},
          {"delete_corrupted", c.delete_corrupted},
          {"workers", c.workers},
          {"window", c.window},
          {"order", c.order},
          {"ratios", {c.ratios.train, c.ratios.val, c.ratios.test}},
          {"seed", c.seed},
          {"dense_units", c.dense_units},
          {"dropout_rate", c.dropout_rate},
          {"lr0", c.lr0},
          {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"plateau_patience", c.plateau_patience},
          {"plateau_factor", c.plateau_factor},
          {"min_lr", c.min_lr},
          {"fine_tune", c.fine_tune},
          {"explain_methods", methods},
          {"explain_count", c.explain_count},
          {"explain_class", c.explain_class},
          {"n", c.n},
          {"sigma", c.sigma},
          {"top_k", c.top_k}};
}

json read_config_document(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw NotFoundError("cannot open config " + path.string());
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config " + path.string() + " is not valid JSON: " + e.what());
  }
}

std::optional<json> parse_field_text(FieldKind kind, const std::string& text) {
  auto split = [](const std::string& s) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) parts.push_back(item);
    return parts;
  };
  auto number = [](const std::string& s) -> std::optional<json> {
    try {
      const json v = json::parse(s);
      if (v.is_number()) return v;
    } catch (const json::exception&) {
    }
    return std::nullopt;
  };
  switch (kind) {
    case FieldKind::string:
    case FieldKind::path:
      return json(text);
    case FieldKind::integer:
    case FieldKind::number:
      return number(text);
    case FieldKind::boolean:
      if (text == "true" || text == "1") return json(true);
      if (text == "false" || text == "0") return json(false);
      return std::nullopt;
    case FieldKind::number_list: {
      json arr = json::array();
      for (const auto& part : split(text)) {
        auto v = number(part);
        if (!v) return std::nullopt;
        arr.push_back(*v);
      }
      return arr;
    }
    case FieldKind::string_list: {
      json arr = json::array();
      for (const auto& part : split(text)) arr.push_back(part);
      return arr;
    }
  }
  return std::nullopt;
}

}  // namespace fakelens
