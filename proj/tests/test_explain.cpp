#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include <opencv2/imgcodecs.hpp>

#include "fakelens/explain.hpp"
#include "fakelens/imbalance.hpp"
#include "cam_oracle.hpp"
#include "support.hpp"

using namespace fakelens;
using testing_support::FixedProbeModel;
using testing_support::LinearModel;
using testing_support::TempDir;
using testing_support::ToyCamModel;

namespace {

void expect_tensor_near(const Tensor& a, const Tensor& b, double tol) {
  ASSERT_TRUE(a.same_shape(b));
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a.values()[i], b.values()[i], tol) << "at " << i;
}

bool all_zero(const Tensor& t) {
  return std::all_of(t.values().begin(), t.values().end(), [](double v) { return v == 0.0; });
}

void expect_unit_range(const Tensor& t) {
  for (double v : t.values()) {
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 1.0);
  }
}

Tensor gradcam_oracle(const Tensor& a, const Tensor& g, int h, int w) {
  std::vector<double> alpha(a.channels(), 0.0);
  for (int k = 0; k < a.channels(); ++k) {
    for (int y = 0; y < g.height(); ++y)
      for (int x = 0; x < g.width(); ++x) alpha[k] += g(y, x, k);
    alpha[k] /= g.height() * g.width();
  }
  Tensor raw(a.height(), a.width(), 1);
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x) {
      double s = 0.0;
      for (int k = 0; k < a.channels(); ++k) s += alpha[k] * a(y, x, k);
      raw(y, x, 0) = std::max(0.0, s);
    }
  return testing_support::oracle_normalize(testing_support::oracle_upsample(raw, h, w));
}

Tensor gradcam_pp_oracle(const Tensor& a, const Tensor& g, int h, int w) {
  Tensor raw(a.height(), a.width(), 1);
  std::vector<double> weight(a.channels(), 0.0);
  for (int k = 0; k < a.channels(); ++k) {
    double total = 0.0;
    for (int y = 0; y < a.height(); ++y)
      for (int x = 0; x < a.width(); ++x) total += a(y, x, k);
    for (int y = 0; y < g.height(); ++y)
      for (int x = 0; x < g.width(); ++x) {
        const double d = g(y, x, k);
        const double denom = 2 * d * d + total * d * d * d;
        const double alpha = d * d / (denom + 1e-12);
        weight[k] += alpha * (d > 0 ? d : 0.0);
      }
  }
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x) {
      double s = 0.0;
      for (int k = 0; k < a.channels(); ++k) s += weight[k] * a(y, x, k);
      raw(y, x, 0) = std::max(0.0, s);
    }
  return testing_support::oracle_normalize(testing_support::oracle_upsample(raw, h, w));
}

ToyCamModel random_toy(std::mt19937_64& gen, int channels) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<std::vector<double>> u(channels, std::vector<double>(3));
  std::vector<double> bias(channels);
  std::vector<std::vector<double>> v(2, std::vector<double>(channels));
  for (auto& row : u)
    for (double& e : row) e = n(gen);
  for (double& b : bias) b = 0.2 * n(gen);
  for (auto& row : v)
    for (double& e : row) e = n(gen);
  return ToyCamModel(u, bias, v);
}

}  // namespace

TEST(Normalize, ConstantBecomesZero) {
  EXPECT_TRUE(all_zero(normalize_map(Tensor(3, 3, 1, 4.2))));
}

TEST(Normalize, IdempotentAndAffineInvariant) {
  std::mt19937_64 gen(1);
  const Tensor t = testing_support::random_tensor(6, 5, 1, gen, -3.0, 7.0);
  const Tensor n = normalize_map(t);
  expect_unit_range(n);
  EXPECT_EQ(n.min(), 0.0);
  EXPECT_EQ(n.max(), 1.0);
  expect_tensor_near(normalize_map(n), n, 1e-15);
  Tensor scaled = t;
  for (double& v : scaled.values()) v = 2.5 * v + 11.0;
  expect_tensor_near(normalize_map(scaled), n, 1e-13);
  expect_tensor_near(n, testing_support::oracle_normalize(t), 1e-15);
}

TEST(Saliency, LinearModelIsMaxAbsWeight) {
  const LinearModel m({{1.0, -2.0, 0.5}, {-0.25, 0.1, 0.2}});
  std::mt19937_64 gen(2);
  const Tensor x = testing_support::random_tensor(5, 4, 3, gen);
  const Tensor s = saliency(m, x, Label::real);
  ASSERT_EQ(s.channels(), 1);
  for (double v : s.values()) EXPECT_EQ(v, 2.0);
  const Tensor sf = saliency(m, x, Label::fake);
  for (double v : sf.values()) EXPECT_EQ(v, 0.25);
  // Constant saliency normalises to zero.
  EXPECT_TRUE(all_zero(smoothgrad(m, x, Label::real).values.channel(0)));
}

TEST(Saliency, MatchesInputGradientOfClassifier) {
  Rng rng(3);
  Classifier model(make_tiny_backbone(3), Head(32, {16, 0.5, 2}, rng));
  std::mt19937_64 gen(3);
  const Tensor x = testing_support::random_tensor(24, 24, 3, gen);
  const Tensor g = model.input_gradient(x, 1);
  const Tensor s = saliency(model, x, Label::fake);
  for (int y = 0; y < 24; ++y)
    for (int xx = 0; xx < 24; ++xx)
      EXPECT_EQ(s(y, xx, 0), std::max({std::abs(g(y, xx, 0)), std::abs(g(y, xx, 1)), std::abs(g(y, xx, 2))}));
}

TEST(SmoothGrad, ZeroSigmaIsNormalisedSaliency) {
  std::mt19937_64 gen(4);
  const ToyCamModel m = random_toy(gen, 4);
  const Tensor x = testing_support::random_tensor(8, 8, 3, gen);
  const Heatmap h = smoothgrad(m, x, Label::fake, {5, 0.0, 1});
  EXPECT_EQ(h.method, ExplainMethod::smoothgrad);
  EXPECT_EQ(h.target_class, Label::fake);
  expect_tensor_near(h.values, normalize_map(saliency(m, x, Label::fake)), 0.0);
}

TEST(SmoothGrad, SeededAndSeedSensitive) {
  std::mt19937_64 gen(5);
  const ToyCamModel m = random_toy(gen, 6);
  const Tensor x = testing_support::random_tensor(12, 12, 3, gen);
  const auto a = smoothgrad(m, x, Label::real, {3, 0.5, 7}).values;
  const auto b = smoothgrad(m, x, Label::real, {3, 0.5, 7}).values;
  const auto c = smoothgrad(m, x, Label::real, {3, 0.5, 8}).values;
  expect_tensor_near(a, b, 0.0);
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += std::abs(a.values()[i] - c.values()[i]);
  EXPECT_GT(diff, 0.0);
  expect_unit_range(a);
}

TEST(SmoothGrad, AveragesGateProbability) {
  // One unit sitting exactly on its ReLU threshold: noise switches it on
  // about half the time, so the averaged gradient at the sampled pixels
  // is half the open-gate value, and pixels never read stay at zero.
  const ToyCamModel m({{1.0, 0.0, 0.0}}, {-0.5}, {{1.0}, {1.0}});
  Tensor x(16, 16, 3, 0.5);
  x(15, 15, 1) = 0.0;  // gives the input a range for the noise scale
  x(15, 14, 1) = 1.0;
  const Heatmap h = smoothgrad(m, x, Label::real, {2000, 0.1, 11});
  double sum = 0.0;
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) {
      if (i % 2 == 0 && j % 2 == 0) {
        sum += h.values(i, j, 0);
      } else {
        EXPECT_EQ(h.values(i, j, 0), 0.0);
      }
    }
  // Normalised by the largest cell, which sits a few standard errors
  // above the mean.
  const double mean = sum / 64.0;
  EXPECT_GT(mean, 0.85);
  EXPECT_LT(mean, 1.0);
}

TEST(SmoothGrad, RejectsBadParams) {
  const LinearModel m({{1.0, 1.0, 1.0}, {1.0, 1.0, 1.0}});
  const Tensor x(2, 2, 3);
  EXPECT_THROW(smoothgrad(m, x, Label::real, {0, 0.1, 0}), std::invalid_argument);
  EXPECT_THROW(smoothgrad(m, x, Label::real, {1, -0.1, 0}), std::invalid_argument);
}

TEST(GradCam, SingleChannelIsUpsampledActivation) {
  std::mt19937_64 gen(6);
  const Tensor a = testing_support::random_tensor(4, 4, 1, gen, 0.0, 2.0);
  const FixedProbeModel m(a, Tensor(4, 4, 1, 0.3));
  const Heatmap h = gradcam(m, Tensor(16, 16, 3), Label::fake);
  EXPECT_EQ(h.method, ExplainMethod::gradcam);
  expect_tensor_near(h.values, testing_support::oracle_normalize(testing_support::oracle_upsample(a, 16, 16)),
                     1e-12);
}

TEST(GradCam, NegativeEvidenceIsCutByRelu) {
  std::mt19937_64 gen(7);
  const Tensor a = testing_support::random_tensor(4, 4, 1, gen, 0.1, 2.0);
  const FixedProbeModel m(a, Tensor(4, 4, 1, -0.3));
  EXPECT_TRUE(all_zero(gradcam(m, Tensor(16, 16, 3), Label::fake).values));
}

TEST(GradCam, MatchesOracle) {
  std::mt19937_64 gen(8);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor a = testing_support::random_tensor(5, 7, 6, gen, 0.0, 3.0);
    const Tensor g = testing_support::random_tensor(5, 7, 6, gen, -1.0, 1.0);
    const FixedProbeModel m(a, g);
    expect_tensor_near(gradcam(m, Tensor(20, 28, 3), Label::real).values, gradcam_oracle(a, g, 20, 28), 1e-12);
  }
}

TEST(GradCam, SilentChannelChangesNothing) {
  std::mt19937_64 gen(9);
  const Tensor a = testing_support::random_tensor(4, 4, 3, gen);
  const Tensor g = testing_support::random_tensor(4, 4, 3, gen, -1.0, 1.0);
  Tensor a4(4, 4, 4), g4(4, 4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      for (int k = 0; k < 3; ++k) {
        a4(y, x, k) = a(y, x, k);
        g4(y, x, k) = g(y, x, k);
      }
      g4(y, x, 3) = 5.0;  // activation stays zero
    }
  const Tensor x(8, 8, 3);
  expect_tensor_near(gradcam(FixedProbeModel(a4, g4), x, Label::real).values,
                     gradcam(FixedProbeModel(a, g), x, Label::real).values, 1e-14);
  expect_tensor_near(gradcam_pp(FixedProbeModel(a4, g4), x, Label::real).values,
                     gradcam_pp(FixedProbeModel(a, g), x, Label::real).values, 1e-14);
}

TEST(GradCamPP, MatchesOracle) {
  std::mt19937_64 gen(10);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor a = testing_support::random_tensor(5, 5, 4, gen, 0.0, 3.0);
    const Tensor g = testing_support::random_tensor(5, 5, 4, gen, -1.0, 1.0);
    const FixedProbeModel m(a, g);
    const Heatmap h = gradcam_pp(m, Tensor(15, 15, 3), Label::fake);
    EXPECT_EQ(h.method, ExplainMethod::gradcam_pp);
    expect_tensor_near(h.values, gradcam_pp_oracle(a, g, 15, 15), 1e-12);
  }
}

TEST(GradCamPP, AgreesWithGradCamOnOneChannel) {
  std::mt19937_64 gen(11);
  const Tensor a = testing_support::random_tensor(6, 6, 1, gen);
  const Tensor g = testing_support::random_tensor(6, 6, 1, gen, 0.1, 1.0);
  const FixedProbeModel m(a, g);
  const Tensor x(24, 24, 3);
  expect_tensor_near(gradcam_pp(m, x, Label::real).values, gradcam(m, x, Label::real).values, 1e-12);
}

TEST(GradCamPP, ZeroGradientGivesZeroMap) {
  std::mt19937_64 gen(12);
  const FixedProbeModel m(testing_support::random_tensor(4, 4, 3, gen), Tensor(4, 4, 3));
  EXPECT_TRUE(all_zero(gradcam_pp(m, Tensor(8, 8, 3), Label::real).values));
}

TEST(ScoreCam, OneChannelIsItsMask) {
  std::mt19937_64 gen(13);
  const Tensor a = testing_support::random_tensor(4, 4, 1, gen);
  const FixedProbeModel m(a, Tensor(4, 4, 1));
  const Heatmap h = faster_scorecam(m, Tensor(12, 12, 3, 1.0), Label::real, "", 1);
  EXPECT_EQ(h.method, ExplainMethod::faster_scorecam);
  expect_tensor_near(h.values, testing_support::oracle_normalize(testing_support::oracle_upsample(a, 12, 12)),
                     1e-12);
}

TEST(ScoreCam, ConstantChannelsGiveZeroMap) {
  Tensor a(4, 4, 2);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      a(y, x, 0) = 1.0;
      a(y, x, 1) = 3.0;
    }
  EXPECT_TRUE(all_zero(faster_scorecam(FixedProbeModel(a, Tensor(4, 4, 2)), Tensor(8, 8, 3), Label::fake, "", 2)
                           .values));
}

TEST(ScoreCam, TiesGoToLowerChannel) {
  // Channel 1 is channel 0 transposed: equal spread, different layout.
  Tensor a(4, 4, 2);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      a(y, x, 0) = y == 0 ? 1.0 : 0.0;
      a(x, y, 1) = y == 0 ? 1.0 : 0.0;
    }
  const Heatmap h = faster_scorecam(FixedProbeModel(a, Tensor(4, 4, 2)), Tensor(4, 4, 3, 1.0), Label::real, "", 1);
  expect_tensor_near(h.values, a.channel(0), 1e-15);
}

TEST(ScoreCam, MatchesBruteForce) {
  std::mt19937_64 gen(14);
  for (int trial = 0; trial < 20; ++trial) {
    const ToyCamModel m = random_toy(gen, 6);
    const Tensor x = testing_support::random_tensor(10, 12, 3, gen);
    for (int k : {1, 3, 6}) {
      for (Label l : kLabels) {
        expect_tensor_near(faster_scorecam(m, x, l, "feat", k).values,
                           testing_support::scorecam_oracle(m, x, static_cast<int>(l), "feat", k), 1e-9);
      }
    }
  }
}

TEST(ScoreCam, TopKOutOfRange) {
  const FixedProbeModel m(Tensor(2, 2, 3), Tensor(2, 2, 3));
  EXPECT_THROW(faster_scorecam(m, Tensor(4, 4, 3), Label::real, "", 0), std::invalid_argument);
  EXPECT_THROW(faster_scorecam(m, Tensor(4, 4, 3), Label::real, "", 4), std::invalid_argument);
  EXPECT_NO_THROW(faster_scorecam(m, Tensor(4, 4, 3), Label::real, "", 3));
}

TEST(Explain, LayerSelection) {
  const LinearModel linear({{1.0, 1.0, 1.0}, {1.0, 1.0, 1.0}});
  EXPECT_THROW(gradcam(linear, Tensor(4, 4, 3), Label::real), std::invalid_argument);
  const FixedProbeModel fixed(Tensor(2, 2, 1, 1.0), Tensor(2, 2, 1, 1.0));
  EXPECT_THROW(gradcam(fixed, Tensor(4, 4, 3), Label::real, "other"), std::invalid_argument);
  EXPECT_NO_THROW(gradcam(fixed, Tensor(4, 4, 3), Label::real, "fixed"));
}

TEST(Explain, EveryMethodOnClassifier) {
  Rng rng(15);
  Classifier model(make_tiny_backbone(15), Head(32, {16, 0.5, 2}, rng));
  std::mt19937_64 gen(15);
  const Tensor x = testing_support::random_tensor(32, 40, 3, gen);
  ExplainOptions opts;
  opts.smoothgrad.n = 3;
  for (ExplainMethod method : kExplainMethods) {
    EXPECT_EQ(parse_method(to_string(method)), method);
    for (Label l : kLabels) {
      const Heatmap h = explain(method, model, x, l, opts);
      EXPECT_EQ(h.method, method);
      EXPECT_EQ(h.target_class, l);
      ASSERT_EQ(h.values.height(), 32);
      ASSERT_EQ(h.values.width(), 40);
      ASSERT_EQ(h.values.channels(), 1);
      expect_unit_range(h.values);
    }
  }
  // Every conv stage can be probed.
  for (const auto& layer : model.layer_names()) expect_unit_range(gradcam(model, x, Label::fake, layer).values);
  EXPECT_THROW(parse_method("lime"), std::invalid_argument);
}

TEST(Overlay, JetEndpoints) {
  EXPECT_EQ(jet_color(0.0), cv::Vec3b(128, 0, 0));
  EXPECT_EQ(jet_color(0.5), cv::Vec3b(128, 255, 128));
  EXPECT_EQ(jet_color(1.0), cv::Vec3b(0, 0, 128));
  EXPECT_EQ(jet_color(-4.0), jet_color(0.0));
  EXPECT_EQ(jet_color(7.0), jet_color(1.0));
}

TEST(Overlay, BlendAndPngRoundTrip) {
  TempDir dir;
  std::mt19937_64 gen(16);
  Heatmap h;
  h.values = testing_support::random_tensor(20, 30, 1, gen);
  cv::Mat crop(20, 30, CV_8UC3);
  cv::randu(crop, 0, 256);
  const cv::Mat out = write_overlay(dir / "sub/o.png", h, crop);
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 30; ++x) {
      const cv::Vec3b tint = jet_color(h.values(y, x, 0));
      for (int c = 0; c < 3; ++c) {
        const long want = std::lround(0.6 * crop.at<cv::Vec3b>(y, x)[c] + 0.4 * tint[c]);
        ASSERT_EQ(out.at<cv::Vec3b>(y, x)[c], want);
      }
    }
  const cv::Mat back = cv::imread((dir / "sub/o.png").string(), cv::IMREAD_COLOR);
  ASSERT_EQ(back.size(), out.size());
  EXPECT_EQ(cv::norm(back, out, cv::NORM_INF), 0.0);
}

TEST(Overlay, RejectsMismatchedCrop) {
  Heatmap h;
  h.values = Tensor(4, 4, 1);
  EXPECT_THROW(overlay(h, cv::Mat(4, 5, CV_8UC3)), std::invalid_argument);
  EXPECT_THROW(overlay(h, cv::Mat(4, 4, CV_8UC1)), std::invalid_argument);
}
