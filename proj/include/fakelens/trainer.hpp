#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include "fakelens/dataset.hpp"
#include "fakelens/imbalance.hpp"
#include "fakelens/network.hpp"

namespace fakelens {

struct TrainConfig {
  double lr0 = 1e-3;
  int batch_size = 16;
  int max_epochs = 20;
  int plateau_patience = 3;
  double plateau_factor = 0.5;
  double min_lr = 1e-6;
  std::uint64_t seed = 0;
  bool fine_tune = false;  // false: backbone frozen, only the head trains
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double lr = 0.0;  // learning rate in effect during the epoch

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // index into epochs with the lowest val_loss

  friend bool operator==(const TrainHistory&, const TrainHistory&) = default;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
};

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update at step `t` (t >= 1). The state is sized
/// on first use.
void adam_step(std::span<double> param, std::span<const double> grad, AdamState& state, double lr,
               std::uint64_t t, const AdamParams& hp = {});

/// Minimum improvement in val_loss that resets the patience counter.
inline constexpr double kPlateauThreshold = 1e-8;

/// Learning rate for the epoch after `history`, found by replaying the
/// reduce-on-plateau rule from history.front().lr: whenever val_loss has
/// failed to beat the best so far by more than kPlateauThreshold for
/// `patience` consecutive epochs, the rate becomes max(lr * factor, min_lr)
/// and the counter restarts.
double plateau_schedule(std::span<const EpochRecord> history, int patience, double factor,
                        double min_lr);

/// Random-access labelled images.
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual std::size_t size() const = 0;
  virtual Label label(std::size_t i) const = 0;
  virtual Tensor image(std::size_t i) const = 0;
};

class InMemorySource : public SampleSource {
 public:
  InMemorySource() = default;
  void add(Tensor image, Label label);
  std::size_t size() const override { return images_.size(); }
  Label label(std::size_t i) const override { return labels_.at(i); }
  Tensor image(std::size_t i) const override { return images_.at(i); }

 private:
  std::vector<Tensor> images_;
  std::vector<Label> labels_;
};

/// Records of one split, loaded lazily from their tensor files.
class ManifestSource : public SampleSource {
 public:
  ManifestSource(const DatasetManifest& manifest, Split split);
  std::size_t size() const override { return records_.size(); }
  Label label(std::size_t i) const override { return records_.at(i).label; }
  Tensor image(std::size_t i) const override;

 private:
  std::vector<SampleRecord> records_;
};

/// Raised when the training loss stops being finite.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int epoch, std::size_t batch);
  int epoch() const { return epoch_; }
  std::size_t batch() const { return batch_; }

 private:
  int epoch_;
  std::size_t batch_;
};

struct TrainResult {
  Classifier model;  // parameters from the epoch with the lowest val_loss
  TrainHistory history;
};

/// Mini-batch training with the class-weighted loss. Each epoch shuffles
/// the training set with the run's generator, then draws one dropout mask
/// per sample in batch order. Validation loss is the unweighted mean
/// cross-entropy in inference mode.
TrainResult train(const SampleSource& train_set, const SampleSource& val_set, Classifier model,
                  const TrainConfig& config, const ClassWeights& weights);

/// Builds the head (initialised from config.seed) on top of `backbone` and
/// trains on the manifest's train split, validating on its val split.
TrainResult train(const DatasetManifest& manifest, std::unique_ptr<Backbone> backbone,
                  const HeadConfig& head_config, const TrainConfig& config,
                  const ClassWeights& weights);

/// Mean unweighted cross-entropy and accuracy of `model` over `samples`.
struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};
Evaluation evaluate_loss(const Classifier& model, const SampleSource& samples);

/// Checkpoint directory: index.json describing the architecture and one
/// tensor file (1 x 1 x n) per named parameter block.
void save_checkpoint(const std::filesystem::path& dir, const Classifier& model);
Classifier load_checkpoint(const std::filesystem::path& dir);

/// CSV with header epoch,train_loss,val_loss,val_acc,lr.
void write_history_csv(const std::filesystem::path& path, const TrainHistory& history);

}  // namespace fakelens
