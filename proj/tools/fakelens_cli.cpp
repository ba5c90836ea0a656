// fakelens: command-line driver for the detection pipeline.

#include <deque>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "fakelens/config.hpp"
#include "fakelens/pipeline.hpp"
#include "fakelens/synthetic.hpp"

namespace {

using nlohmann::json;
using namespace fakelens;

// Flag spellings beyond --<field> and --<field-with-dashes>.
const std::map<std::string, std::string> kAliases = {
    {"out_dir", "--out"}, {"explain_methods", "--method"}, {"explain_class", "--class"}};

struct Invocation {
  CLI::App* app = nullptr;
  std::vector<Stage> stages;
  std::string config_path;
  std::map<std::string, std::string> values;
};

std::string dashed(std::string s) {
  std::replace(s.begin(), s.end(), '_', '-');
  return s;
}

void add_config_flags(Invocation& inv) {
  inv.app->add_option("--config", inv.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  for (const auto& f : config_fields()) {
    std::string names = "--" + f.name;
    if (dashed(f.name) != f.name) names += ",--" + dashed(f.name);
    if (auto it = kAliases.find(f.name); it != kAliases.end()) names += "," + it->second;
    inv.app->add_option(names, inv.values[f.name], f.help);
  }
}

int print_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) return 1;
  std::cout << is.rdbuf();
  return 0;
}

int execute(const Invocation& inv) {
  json doc = json::object();
  if (!inv.config_path.empty()) doc = read_config_document(inv.config_path);
  std::vector<std::string> errors;
  for (const auto& f : config_fields()) {
    const auto opt = inv.app->get_option("--" + f.name);
    if (opt->count() == 0) continue;
    if (auto v = parse_field_text(f.kind, inv.values.at(f.name))) {
      doc[f.name] = *v;
    } else {
      errors.push_back(f.name + ": cannot parse '" + inv.values.at(f.name) + "'");
    }
  }
  const ConfigCheck check = validate_config(doc);
  errors.insert(errors.end(), check.errors.begin(), check.errors.end());
  if (!errors.empty()) {
    std::cerr << "invalid configuration:\n";
    for (const auto& e : errors) std::cerr << "  " << e << '\n';
    return 2;
  }

  const RunOutcome outcome = run_pipeline(*check.config, inv.stages, &std::clog);
  if (!outcome.ok) {
    std::cerr << "stage '" << to_string(*outcome.failed_stage) << "' failed: " << outcome.error << '\n';
    return outcome.exit_code();
  }
  if (inv.stages.size() == 1 && inv.stages.front() == Stage::weights) {
    return print_json_file(outcome.run_dir / "weights.json");
  }
  if (inv.stages.size() == 1 && inv.stages.front() == Stage::evaluate) {
    return print_json_file(outcome.run_dir / "report.json");
  }
  std::cout << outcome.run_dir.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deepfake face detection pipeline: keyframes, weighted training, explanations"};
  app.require_subcommand(1);

  const std::map<std::string, std::string> help = {
      {"scan", "probe input videos (and optionally delete unreadable ones)"},
      {"preprocess", "extract keyframe face crops and sample tensors"},
      {"split", "build the manifest and assign train/val/test splits"},
      {"weights", "compute class weights from the training split"},
      {"train", "train the classifier and write a checkpoint"},
      {"evaluate", "score the test split and render the confusion matrix"},
      {"explain", "write heatmaps and overlays for test samples"},
  };

  std::deque<Invocation> invocations;
  for (Stage s : kStages) {
    const std::string name(to_string(s));
    Invocation& inv = invocations.emplace_back();
    inv.app = app.add_subcommand(name, help.at(name));
    inv.stages = {s};
    add_config_flags(inv);
  }
  Invocation& run = invocations.emplace_back();
  run.app = app.add_subcommand("run", "run every stage, skipping those already up to date");
  run.stages.assign(kStages.begin(), kStages.end());
  add_config_flags(run);

  std::string synth_out;
  std::uint64_t synth_seed = 0;
  auto* synth = app.add_subcommand("synth", "write the two-video synthetic fixture (real/ and fake/)");
  synth->add_option("--out", synth_out, "destination directory")->required();
  synth->add_option("--seed", synth_seed, "generator seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      write_fixture(synth_out, synth_seed);
      std::cout << synth_out << '\n';
      return 0;
    }
    for (const auto& inv : invocations) {
      if (inv.app->parsed()) return execute(inv);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
