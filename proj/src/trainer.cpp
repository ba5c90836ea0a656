#include "fakelens/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "fakelens/metrics.hpp"

namespace fakelens {
namespace {

using nlohmann::json;

void check_config(const TrainConfig& c) {
  if (!(c.lr0 >= 0.0)) throw std::invalid_argument("train: lr0 must be >= 0");
  if (c.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (c.max_epochs < 1) throw std::invalid_argument("train: max_epochs must be >= 1");
  if (c.plateau_patience < 1) throw std::invalid_argument("train: plateau_patience must be >= 1");
  if (!(c.plateau_factor > 0.0 && c.plateau_factor < 1.0)) {
    throw std::invalid_argument("train: plateau_factor must be in (0, 1)");
  }
  if (!(c.min_lr >= 0.0)) throw std::invalid_argument("train: min_lr must be >= 0");
}

double unweighted_loss(std::span<const double> logits, Label label) {
  static const ClassWeights ones = unit_weights();
  return weighted_cross_entropy(softmax(logits), label, ones);
}

TrainResult train_impl(const SampleSource& train_set, const SampleSource& val_set,
                       Classifier model, const TrainConfig& config, const ClassWeights& weights,
                       Rng& rng) {
  check_config(config);
  if (train_set.size() == 0) throw std::invalid_argument("train: empty training split");
  if (val_set.size() == 0) throw std::invalid_argument("train: empty validation split");
  for (Label l : kLabels) weights.at(l);

  const bool frozen = !config.fine_tune;
  const std::size_t n = train_set.size();

  // A frozen backbone is deterministic, so its pooled features are
  // computed once and reused every epoch.
  std::vector<std::vector<double>> train_pooled, val_pooled;
  if (frozen) {
    auto pool_all = [&](const SampleSource& src, std::vector<std::vector<double>>& out) {
      out.reserve(src.size());
      for (std::size_t i = 0; i < src.size(); ++i) {
        out.push_back(Head::pool(model.backbone().forward(src.image(i)).back()));
      }
    };
    pool_all(train_set, train_pooled);
    pool_all(val_set, val_pooled);
  }

  auto validate = [&]() {
    Evaluation e;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < val_set.size(); ++i) {
      const auto logits = frozen ? model.head().forward(val_pooled[i]) : model.logits(val_set.image(i));
      const Label truth = val_set.label(i);
      e.loss += unweighted_loss(logits, truth);
      if (predict_label(softmax(logits)) == truth) ++correct;
    }
    e.loss /= static_cast<double>(val_set.size());
    e.accuracy = static_cast<double>(correct) / static_cast<double>(val_set.size());
    return e;
  };

  TrainHistory history;
  std::optional<Classifier> best;
  double best_loss = std::numeric_limits<double>::infinity();
  AdamState head_state, backbone_state;
  std::uint64_t step = 0;
  double lr = config.lr0;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batch = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    rng.shuffle(std::span(order));
    double epoch_loss = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n; start += batch, ++batch_index) {
      const std::size_t stop = std::min(n, start + batch);
      Classifier::Gradients grads;
      grads.head.assign(model.head().parameters().size(), 0.0);
      if (!frozen) grads.backbone.assign(model.backbone().parameters().size(), 0.0);

      double batch_loss = 0.0;
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t i = order[k];
        const auto mask = model.head().dropout_mask(rng);
        const Label label = train_set.label(i);
        if (frozen) {
          Head::Trace trace;
          const auto logits = model.head().forward(train_pooled[i], mask, &trace);
          batch_loss += weighted_cross_entropy(softmax(logits), label, weights);
          model.head().backward(trace, weighted_cross_entropy_grad(logits, label, weights), grads.head);
        } else {
          batch_loss += model.loss(train_set.image(i), label, weights, mask, &grads, true);
        }
      }
      if (!std::isfinite(batch_loss)) throw TrainingDiverged(epoch, batch_index);

      const double scale = 1.0 / static_cast<double>(stop - start);
      for (double& g : grads.head) g *= scale;
      for (double& g : grads.backbone) g *= scale;
      ++step;
      adam_step(model.head().parameters(), grads.head, head_state, lr, step);
      if (!frozen) adam_step(model.backbone().parameters(), grads.backbone, backbone_state, lr, step);
      epoch_loss += batch_loss;
    }

    const Evaluation val = validate();
    if (!std::isfinite(val.loss)) throw TrainingDiverged(epoch, batch_index);
    history.epochs.push_back({epoch, epoch_loss / static_cast<double>(n), val.loss, val.accuracy, lr});
    if (val.loss < best_loss) {
      best_loss = val.loss;
      best = model;
      history.best_epoch = history.epochs.size() - 1;
    }
    lr = plateau_schedule(history.epochs, config.plateau_patience, config.plateau_factor,
                          config.min_lr);
  }
  return {std::move(*best), std::move(history)};
}

}  // namespace

void adam_step(std::span<double> param, std::span<const double> grad, AdamState& state, double lr,
               std::uint64_t t, const AdamParams& hp) {
  if (t < 1) throw std::invalid_argument("adam_step: t must be >= 1");
  if (param.size() != grad.size()) throw std::invalid_argument("adam_step: size mismatch");
  if (state.m.size() != param.size()) state.m.assign(param.size(), 0.0);
  if (state.v.size() != param.size()) state.v.assign(param.size(), 0.0);
  const double td = static_cast<double>(t);
  const double bc1 = 1.0 - std::pow(hp.beta1, td);
  const double bc2 = 1.0 - std::pow(hp.beta2, td);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g;
    state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    param[i] -= lr * m_hat / (std::sqrt(v_hat) + hp.epsilon);
  }
}

double plateau_schedule(std::span<const EpochRecord> history, int patience, double factor,
                        double min_lr) {
  if (history.empty()) throw std::invalid_argument("plateau_schedule: empty history");
  if (patience < 1) throw std::invalid_argument("plateau_schedule: patience must be >= 1");
  double lr = history.front().lr;
  double best = std::numeric_limits<double>::infinity();
  int stale = 0;
  for (const auto& rec : history) {
    if (rec.val_loss < best - kPlateauThreshold) {
      best = rec.val_loss;
      stale = 0;
    } else if (++stale >= patience) {
      lr = std::max(lr * factor, min_lr);
      stale = 0;
    }
  }
  return lr;
}

void InMemorySource::add(Tensor image, Label label) {
  images_.push_back(std::move(image));
  labels_.push_back(label);
}

ManifestSource::ManifestSource(const DatasetManifest& manifest, Split split)
    : records_(manifest.in_split(split)) {}

Tensor ManifestSource::image(std::size_t i) const { return load_sample(records_.at(i).tensor_path); }

TrainingDiverged::TrainingDiverged(int epoch, std::size_t batch)
    : std::runtime_error("training diverged (non-finite loss) at epoch " + std::to_string(epoch) +
                         ", batch " + std::to_string(batch)),
      epoch_(epoch),
      batch_(batch) {}

TrainResult train(const SampleSource& train_set, const SampleSource& val_set, Classifier model,
                  const TrainConfig& config, const ClassWeights& weights) {
  Rng rng(config.seed);
  return train_impl(train_set, val_set, std::move(model), config, weights, rng);
}

TrainResult train(const DatasetManifest& manifest, std::unique_ptr<Backbone> backbone,
                  const HeadConfig& head_config, const TrainConfig& config,
                  const ClassWeights& weights) {
  Rng rng(config.seed);
  Head head(backbone->feature_channels(), head_config, rng);
  Classifier model(std::move(backbone), std::move(head));
  return train_impl(ManifestSource(manifest, Split::train), ManifestSource(manifest, Split::val),
                    std::move(model), config, weights, rng);
}

Evaluation evaluate_loss(const Classifier& model, const SampleSource& samples) {
  if (samples.size() == 0) throw std::invalid_argument("evaluate_loss: no samples");
  Evaluation e;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto logits = model.logits(samples.image(i));
    e.loss += unweighted_loss(logits, samples.label(i));
    if (predict_label(softmax(logits)) == samples.label(i)) ++correct;
  }
  e.loss /= static_cast<double>(samples.size());
  e.accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
  return e;
}

void save_checkpoint(const std::filesystem::path& dir, const Classifier& model) {
  const auto* conv = dynamic_cast<const ConvBackbone*>(&model.backbone());
  if (!conv) throw std::invalid_argument("save_checkpoint: only ConvBackbone models are supported");
  std::filesystem::create_directories(dir);

  const HeadConfig& hc = model.head().config();
  json index = {{"format", "fakelens-checkpoint"},
                {"version", 1},
                {"backbone", {{"type", "conv"}, {"in_channels", conv->in_channels()},
                              {"channels", conv->channels()}}},
                {"head", {{"feature_channels", model.head().feature_channels()},
                          {"dense_units", hc.dense_units},
                          {"dropout_rate", hc.dropout_rate},
                          {"classes", hc.classes}}},
                {"tensors", json::array()}};

  auto dump = [&](const std::vector<ParamSlice>& slices, std::span<const double> params) {
    for (const auto& slice : slices) {
      std::string file = slice.name;
      std::replace(file.begin(), file.end(), '/', '.');
      file += ".flt";
      Tensor t(1, 1, static_cast<int>(slice.size()));
      std::copy_n(params.begin() + static_cast<std::ptrdiff_t>(slice.offset), slice.size(),
                  t.values().begin());
      write_tensor(dir / file, t);
      index["tensors"].push_back({{"name", slice.name}, {"shape", slice.shape}, {"file", file}});
    }
  };
  dump(conv->layout(), conv->parameters());
  dump(model.head().layout(), model.head().parameters());

  std::ofstream os(dir / "index.json");
  os << index.dump(2) << '\n';
  if (!os) throw std::runtime_error("cannot write " + (dir / "index.json").string());
}

Classifier load_checkpoint(const std::filesystem::path& dir) {
  const auto index_path = dir / "index.json";
  std::ifstream is(index_path);
  if (!is) throw NotFoundError("no checkpoint index at " + index_path.string());
  const json index = json::parse(is);
  if (index.value("format", "") != "fakelens-checkpoint") {
    throw std::invalid_argument("not a fakelens checkpoint: " + index_path.string());
  }
  const auto& bb = index.at("backbone");
  if (bb.at("type") != "conv") throw std::invalid_argument("unsupported backbone type in checkpoint");
  auto backbone = std::make_unique<ConvBackbone>(bb.at("channels").get<std::vector<int>>(), 0,
                                                 bb.at("in_channels").get<int>());
  const auto& h = index.at("head");
  HeadConfig hc{h.at("dense_units").get<int>(), h.at("dropout_rate").get<double>(),
                h.at("classes").get<int>()};
  Head head = Head::zeros(h.at("feature_channels").get<int>(), hc);

  std::map<std::string, std::string> files;
  for (const auto& t : index.at("tensors")) files[t.at("name")] = t.at("file");

  auto restore = [&](const std::vector<ParamSlice>& slices, std::span<double> params) {
    for (const auto& slice : slices) {
      auto it = files.find(slice.name);
      if (it == files.end()) throw std::invalid_argument("checkpoint lacks tensor " + slice.name);
      const Tensor t = read_tensor(dir / it->second);
      if (t.size() != slice.size()) {
        throw std::invalid_argument("checkpoint tensor " + slice.name + " has the wrong size");
      }
      std::copy(t.values().begin(), t.values().end(),
                params.begin() + static_cast<std::ptrdiff_t>(slice.offset));
    }
  };
  restore(backbone->layout(), backbone->parameters());
  restore(head.layout(), head.parameters());
  return Classifier(std::move(backbone), std::move(head));
}

void write_history_csv(const std::filesystem::path& path, const TrainHistory& history) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "epoch,train_loss,val_loss,val_acc,lr\n";
  char line[256];
  for (const auto& r : history.epochs) {
    std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.train_loss,
                  r.val_loss, r.val_accuracy, r.lr);
    os << line;
  }
}

}  // namespace fakelens
