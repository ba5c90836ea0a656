#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fakelens/dataset.hpp"
#include "fakelens/explain.hpp"
#include "fakelens/network.hpp"
#include "fakelens/trainer.hpp"

namespace fakelens {

/// Every tunable of a pipeline run. Only the three directories and
/// max_epochs lack defaults.
struct RunConfig {
  std::string run_id = "default";
  std::filesystem::path real_dir;
  std::filesystem::path fake_dir;
  std::filesystem::path out_dir;

  // ingest
  double target_fps = 30.0;
  std::string detector = "marker";  // marker | cascade
  std::string cascade_path;
  bool delete_corrupted = false;
  int workers = 1;

  // keyframes
  int window = 9;
  int order = 3;

  // split
  SplitRatios ratios;
  std::uint64_t seed = 0;

  // model and training
  int dense_units = 256;
  double dropout_rate = 0.5;
  double lr0 = 1e-3;
  int batch_size = 16;
  int max_epochs = 0;
  int plateau_patience = 3;
  double plateau_factor = 0.5;
  double min_lr = 1e-6;
  bool fine_tune = false;

  // explanations
  std::vector<ExplainMethod> explain_methods{kExplainMethods.begin(), kExplainMethods.end()};
  int explain_count = 1;                  // test samples explained per method
  std::string explain_class = "predicted";  // predicted | real | fake
  int n = 25;
  double sigma = 0.10;
  int top_k = 8;

  HeadConfig head_config() const;
  TrainConfig train_config() const;
};

enum class FieldKind { string, path, integer, number, boolean, number_list, string_list };

struct ConfigField {
  std::string name;
  FieldKind kind;
  bool required;
  std::string help;
};

/// The document schema, in a stable order.
const std::vector<ConfigField>& config_fields();

struct ConfigCheck {
  std::optional<RunConfig> config;  // set iff errors is empty
  std::vector<std::string> errors;
  bool ok() const { return errors.empty(); }
};

/// Rejects unknown keys, fills defaults and checks every constraint,
/// collecting all problems rather than stopping at the first.
ConfigCheck validate_config(const nlohmann::json& document);

/// Normalised document for `config`; validate_config(to_json(c)) gives c back.
nlohmann::json to_json(const RunConfig& config);

/// Reads a JSON document from `path`.
nlohmann::json read_config_document(const std::filesystem::path& path);

/// Converts a command-line string into the JSON value for field `kind`.
/// Lists are comma separated. Returns nullopt if the text does not parse.
std::optional<nlohmann::json> parse_field_text(FieldKind kind, const std::string& text);

}  // namespace fakelens
