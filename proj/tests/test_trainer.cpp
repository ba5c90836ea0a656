#include <gtest/gtest.h>

#include <fstream>
#include <limits>
#include <random>

#include "fakelens/image_ops.hpp"
#include "fakelens/synthetic.hpp"
#include "fakelens/trainer.hpp"
#include "gradcheck.hpp"
#include "support.hpp"

using namespace fakelens;
using testing_support::TempDir;

namespace {

Classifier tiny_model(std::uint64_t seed, HeadConfig hc = {32, 0.5, 2}) {
  auto bb = make_tiny_backbone(seed);
  Rng rng(seed + 1000);
  Head head(bb->feature_channels(), hc, rng);
  return Classifier(std::move(bb), std::move(head));
}

std::vector<EpochRecord> losses(std::vector<double> v, double lr = 1e-3) {
  std::vector<EpochRecord> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back({static_cast<int>(i + 1), 0.0, v[i], 0.0, lr});
  return out;
}

InMemorySource small_patch_source(std::size_t per_class, std::uint64_t seed, int size = 32) {
  return to_source(make_patch_set(per_class, per_class, seed, size));
}

std::vector<double> all_params(const Classifier& m) {
  std::vector<double> out(m.backbone().parameters().begin(), m.backbone().parameters().end());
  out.insert(out.end(), m.head().parameters().begin(), m.head().parameters().end());
  return out;
}

}  // namespace

TEST(Head, ZeroHeadGivesEvenOdds) {
  const Head h = Head::zeros(4, {});
  Tensor features(3, 3, 4, 0.7);
  const auto p = softmax(h.forward(Head::pool(features)));
  EXPECT_EQ(p[0], 0.5);
  EXPECT_EQ(p[1], 0.5);
}

TEST(Head, PoolOfSinglePixelIsIdentity) {
  Tensor f(1, 1, 3);
  f(0, 0, 0) = 0.25;
  f(0, 0, 1) = -1.5;
  f(0, 0, 2) = 9.0;
  EXPECT_EQ(Head::pool(f), (std::vector<double>{0.25, -1.5, 9.0}));
}

TEST(Head, PoolIsChannelMean) {
  std::mt19937_64 gen(3);
  const Tensor f = testing_support::random_tensor(5, 6, 7, gen, -2.0, 2.0);
  const auto pooled = Head::pool(f);
  for (int c = 0; c < 7; ++c) {
    double s = 0.0;
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 6; ++x) s += f(y, x, c);
    EXPECT_NEAR(pooled[c], s / 30.0, 1e-14);
  }
}

TEST(Head, DropoutMaskIsInverted) {
  Rng rng(4);
  const Head h = Head::zeros(4, {1000, 0.5, 2});
  const auto mask = h.dropout_mask(rng);
  std::size_t zeros = 0;
  for (double m : mask) {
    EXPECT_TRUE(m == 0.0 || m == 2.0);
    zeros += m == 0.0;
  }
  EXPECT_NEAR(static_cast<double>(zeros) / 1000.0, 0.5, 0.06);
}

TEST(Head, InferenceIsDeterministic) {
  const Classifier m = tiny_model(1);
  std::mt19937_64 gen(5);
  const Tensor x = testing_support::random_tensor(32, 32, 3, gen);
  EXPECT_EQ(m.logits(x), m.logits(x));
}

TEST(Backbone, TinyShapes) {
  const auto bb = make_tiny_backbone(0);
  const auto stages = bb->forward(Tensor(224, 224, 3, 0.5));
  ASSERT_EQ(stages.size(), 3u);
  EXPECT_EQ(stages[0].height(), 112);
  EXPECT_EQ(stages[1].channels(), 16);
  EXPECT_EQ(stages[2].height(), 28);
  EXPECT_EQ(stages[2].width(), 28);
  EXPECT_EQ(stages[2].channels(), 32);
  EXPECT_EQ(bb->stage_names(), (std::vector<std::string>{"conv1", "conv2", "conv3"}));
  EXPECT_EQ(make_tiny_backbone(0)->parameters()[7], bb->parameters()[7]);
}

TEST(Adam, ZeroGradientKeepsParameter) {
  std::vector<double> p{0.3, -1.0};
  const std::vector<double> g{0.0, 0.0};
  AdamState s;
  adam_step(p, g, s, 1e-3, 1);
  EXPECT_EQ(p, (std::vector<double>{0.3, -1.0}));
}

TEST(Adam, FirstStep) {
  std::vector<double> p{0.0};
  const std::vector<double> g{1.0};
  AdamState s;
  adam_step(p, g, s, 1e-3, 1);
  EXPECT_NEAR(p[0], -1e-3 / (1.0 + 1e-8), 1e-18);
  EXPECT_NEAR(p[0], -9.99999990e-4, 1e-12);
}

TEST(Adam, ConstantGradientStepApproachesLr) {
  std::vector<double> p{0.0};
  const std::vector<double> g{0.37};
  AdamState s;
  double prev = 0.0;
  for (std::uint64_t t = 1; t <= 1000; ++t) {
    prev = p[0];
    adam_step(p, g, s, 1e-3, t);
  }
  EXPECT_NEAR(prev - p[0], 1e-3, 1e-9);
}

TEST(Adam, RejectsStepZero) {
  std::vector<double> p{0.0};
  const std::vector<double> g{1.0};
  AdamState s;
  EXPECT_THROW(adam_step(p, g, s, 1e-3, 0), std::invalid_argument);
}

TEST(Plateau, ImprovingKeepsLr) {
  EXPECT_EQ(plateau_schedule(losses({1.0, 0.9, 0.8, 0.7, 0.6, 0.5}), 3, 0.5, 1e-6), 1e-3);
}

TEST(Plateau, ThreeFlatEpochsHalveLr) {
  EXPECT_EQ(plateau_schedule(losses({1.0, 1.0, 1.0}), 3, 0.5, 1e-6), 1e-3);
  EXPECT_EQ(plateau_schedule(losses({1.0, 1.0, 1.0, 1.0}), 3, 0.5, 1e-6), 5e-4);
  // An improvement smaller than the threshold does not count.
  EXPECT_EQ(plateau_schedule(losses({1.0, 1.0 - 5e-9, 1.0 - 9e-9, 1.0 - 9.5e-9}), 3, 0.5, 1e-6), 5e-4);
}

TEST(Plateau, CounterResetsAfterReduction) {
  EXPECT_EQ(plateau_schedule(losses({1, 1, 1, 1, 1, 1}), 3, 0.5, 1e-6), 5e-4);
  EXPECT_EQ(plateau_schedule(losses({1, 1, 1, 1, 1, 1, 1}), 3, 0.5, 1e-6), 2.5e-4);
}

TEST(Plateau, ClampsAtMinLr) {
  std::vector<double> flat(200, 1.0);
  EXPECT_EQ(plateau_schedule(losses(flat), 3, 0.5, 1e-6), 1e-6);
  EXPECT_EQ(plateau_schedule(losses(flat), 1, 0.1, 1e-5), 1e-5);
}

TEST(Train, ZeroLearningRateLeavesParameters) {
  const auto data = small_patch_source(6, 1);
  for (bool fine : {false, true}) {
    Classifier m = tiny_model(2);
    TrainConfig cfg;
    cfg.lr0 = 0.0;
    cfg.max_epochs = 1;
    cfg.batch_size = 4;
    cfg.fine_tune = fine;
    const auto before = all_params(m);
    const auto r = train(data, data, m, cfg, unit_weights());
    EXPECT_EQ(all_params(r.model), before) << "fine_tune=" << fine;
  }
}

TEST(Train, SameSeedSameHistory) {
  const auto data = small_patch_source(8, 2);
  TrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.batch_size = 5;
  cfg.seed = 17;
  cfg.fine_tune = true;
  const auto a = train(data, data, tiny_model(3), cfg, unit_weights());
  const auto b = train(data, data, tiny_model(3), cfg, unit_weights());
  EXPECT_EQ(a.history, b.history);
  EXPECT_EQ(all_params(a.model), all_params(b.model));
  cfg.seed = 18;
  const auto c = train(data, data, tiny_model(3), cfg, unit_weights());
  EXPECT_NE(a.history, c.history);
}

TEST(Train, SeparablePatchesAreLearned) {
  const auto train_set = to_source(make_patch_set(50, 50, 10));
  const auto val_set = to_source(make_patch_set(10, 10, 11));
  const auto test_set = to_source(make_patch_set(30, 30, 12));
  TrainConfig cfg;
  cfg.max_epochs = 20;
  cfg.seed = 1;
  auto bb = make_tiny_backbone(1);
  Rng rng(1);
  Head head(bb->feature_channels(), {}, rng);
  const auto r = train(train_set, val_set, Classifier(std::move(bb), std::move(head)), cfg, unit_weights());
  EXPECT_GE(evaluate_loss(r.model, train_set).accuracy, 0.99);
  EXPECT_GE(evaluate_loss(r.model, test_set).accuracy, 0.95);

  // The returned model is the best epoch's.
  double best = std::numeric_limits<double>::infinity();
  for (const auto& e : r.history.epochs) best = std::min(best, e.val_loss);
  EXPECT_EQ(r.history.epochs[r.history.best_epoch].val_loss, best);
  EXPECT_NEAR(evaluate_loss(r.model, val_set).loss, best, 1e-12);

  // The learning-rate trace replays from the validation losses.
  const auto& ep = r.history.epochs;
  ASSERT_EQ(ep.size(), 20u);
  EXPECT_EQ(ep[0].lr, cfg.lr0);
  for (std::size_t k = 1; k < ep.size(); ++k) {
    EXPECT_LE(ep[k].lr, ep[k - 1].lr);
    EXPECT_EQ(ep[k].lr, plateau_schedule(std::span(ep).first(k), cfg.plateau_patience,
                                         cfg.plateau_factor, cfg.min_lr));
  }
}

TEST(Train, NonFiniteLossAborts) {
  InMemorySource data;
  data.add(Tensor(32, 32, 3, 0.5), Label::real);
  data.add(Tensor(32, 32, 3, std::numeric_limits<double>::quiet_NaN()), Label::fake);
  TrainConfig cfg;
  cfg.max_epochs = 2;
  cfg.batch_size = 2;
  try {
    train(data, data, tiny_model(4), cfg, unit_weights());
    FAIL() << "expected TrainingDiverged";
  } catch (const TrainingDiverged& e) {
    EXPECT_EQ(e.epoch(), 1);
    EXPECT_EQ(e.batch(), 0u);
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos);
  }
}

TEST(Train, RejectsEmptySplits) {
  InMemorySource empty;
  const auto data = small_patch_source(2, 3);
  TrainConfig cfg;
  EXPECT_THROW(train(empty, data, tiny_model(1), cfg, unit_weights()), std::invalid_argument);
  EXPECT_THROW(train(data, empty, tiny_model(1), cfg, unit_weights()), std::invalid_argument);
}

TEST(Train, FromManifest) {
  TempDir dir;
  DatasetManifest m;
  const auto images = make_patch_set(6, 6, 21, 224);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const fs::path p = dir / ("s" + std::to_string(i) + ".flt");
    write_tensor(p, to_tensor(images[i].image));
    m.records.push_back({"s" + std::to_string(i), images[i].label, Split::unassigned, p.string(), "v"});
  }
  m = stratified_split(m, {0.5, 0.25, 0.25}, 0);
  TrainConfig cfg;
  cfg.max_epochs = 2;
  const auto a = train(m, make_tiny_backbone(0), {16, 0.5, 2}, cfg, unit_weights());
  const auto b = train(m, make_tiny_backbone(0), {16, 0.5, 2}, cfg, unit_weights());
  EXPECT_EQ(a.history, b.history);
  EXPECT_EQ(a.history.epochs.size(), 2u);
}

TEST(Gradients, WeightScalesGradientExactly) {
  std::mt19937_64 gen(6);
  const Classifier m = tiny_model(5);
  const Tensor x = testing_support::random_tensor(32, 32, 3, gen);
  for (Label l : kLabels) {
    ClassWeights w = unit_weights();
    w.weights[l] = 3.7;
    Classifier::Gradients gw, g1;
    const double lw = m.loss(x, l, w, {}, &gw, true);
    const double l1 = m.loss(x, l, unit_weights(), {}, &g1, true);
    EXPECT_NEAR(lw, 3.7 * l1, 1e-12 * lw);
    std::vector<double> scaled, weighted;
    for (double v : g1.head) scaled.push_back(3.7 * v);
    for (double v : g1.backbone) scaled.push_back(3.7 * v);
    weighted.insert(weighted.end(), gw.head.begin(), gw.head.end());
    weighted.insert(weighted.end(), gw.backbone.begin(), gw.backbone.end());
    EXPECT_LE(testing_support::norm_relative_error(weighted, scaled), 1e-6);
  }
}

TEST(Gradients, ParametersMatchFiniteDifferences) {
  std::mt19937_64 gen(7);
  Classifier m = tiny_model(6);
  const Tensor x = testing_support::random_tensor(32, 32, 3, gen);
  Rng rng(9);
  const auto mask = m.head().dropout_mask(rng);
  ClassWeights w;
  w.weights = {{Label::real, 2.5}, {Label::fake, 0.6}};
  for (Label l : kLabels) {
    const auto e = testing_support::param_gradient_error(m, x, l, w, {}, 60, gen);
    EXPECT_LE(e.head, 1e-4);
    EXPECT_LE(e.backbone, 1e-4);
    const auto d = testing_support::param_gradient_error(m, x, l, w, mask, 60, gen);
    EXPECT_LE(d.head, 1e-4);
    EXPECT_LE(d.backbone, 1e-4);
  }
}

TEST(Gradients, InputAndLayersMatchFiniteDifferences) {
  std::mt19937_64 gen(8);
  const Classifier m = tiny_model(7);
  const Tensor x = testing_support::random_tensor(32, 32, 3, gen);
  for (int cls = 0; cls < 2; ++cls) {
    EXPECT_LE(testing_support::input_gradient_error(m, x, cls, 80, gen), 1e-4);
    for (std::size_t layer = 0; layer < 3; ++layer) {
      EXPECT_LE(testing_support::probe_gradient_error(m, x, cls, layer, 80, gen), 1e-4)
          << "layer " << layer << " class " << cls;
    }
  }
}

TEST(Probe, RejectsUnknownLayer) {
  const Classifier m = tiny_model(1);
  EXPECT_THROW(m.probe(Tensor(16, 16, 3), 0, "conv9"), std::invalid_argument);
  EXPECT_THROW(m.input_gradient(Tensor(16, 16, 3), 2), std::invalid_argument);
}

TEST(Checkpoint, RoundTrip) {
  TempDir dir;
  const Classifier m = tiny_model(8);
  save_checkpoint(dir / "ckpt", m);
  const Classifier back = load_checkpoint(dir / "ckpt");

  const auto orig = all_params(m);
  const auto loaded = all_params(back);
  ASSERT_EQ(orig.size(), loaded.size());
  for (std::size_t i = 0; i < orig.size(); ++i)
    ASSERT_EQ(loaded[i], static_cast<double>(static_cast<float>(orig[i])));
  EXPECT_EQ(back.head().config().dense_units, 32);

  std::mt19937_64 gen(2);
  const Tensor x = testing_support::random_tensor(64, 64, 3, gen);
  const auto a = m.logits(x), b = back.logits(x);
  for (int k = 0; k < 2; ++k) EXPECT_NEAR(a[k], b[k], 1e-4 * (1.0 + std::abs(a[k])));

  // A second save of the loaded model is lossless.
  save_checkpoint(dir / "again", back);
  EXPECT_EQ(all_params(load_checkpoint(dir / "again")), loaded);
}

TEST(Checkpoint, MissingIndex) {
  TempDir dir;
  EXPECT_THROW(load_checkpoint(dir.path()), NotFoundError);
}

TEST(History, CsvLayout) {
  TempDir dir;
  TrainHistory h;
  h.epochs.push_back({1, 0.5, 0.25, 0.75, 1e-3});
  write_history_csv(dir / "h.csv", h);
  std::ifstream is(dir / "h.csv");
  std::string header, row;
  std::getline(is, header);
  std::getline(is, row);
  EXPECT_EQ(header, "epoch,train_loss,val_loss,val_acc,lr");
  EXPECT_EQ(row, "1,0.5,0.25,0.75,0.001");
}
