#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string_view>

#include <opencv2/core.hpp>

#include "fakelens/dataset.hpp"
#include "fakelens/network.hpp"
#include "fakelens/tensor.hpp"

namespace fakelens {

enum class ExplainMethod { smoothgrad, gradcam, gradcam_pp, faster_scorecam };

inline constexpr std::array<ExplainMethod, 4> kExplainMethods = {
    ExplainMethod::smoothgrad, ExplainMethod::gradcam, ExplainMethod::gradcam_pp,
    ExplainMethod::faster_scorecam};

std::string_view to_string(ExplainMethod method);
ExplainMethod parse_method(std::string_view text);

/// Relevance map aligned with the explained input, values in [0, 1].
struct Heatmap {
  Tensor values;  // H x W x 1
  ExplainMethod method = ExplainMethod::gradcam;
  Label target_class = Label::fake;
};

/// Min-max normalisation to [0, 1]; a constant map becomes all zeros.
Tensor normalize_map(const Tensor& raw);

/// |d score / d x| reduced over channels by max. H x W x 1, unnormalised.
Tensor saliency(const ExplainableModel& model, const Tensor& x, Label target);

struct SmoothGradParams {
  int n = 25;
  double sigma = 0.10;  // noise std as a fraction of max(x) - min(x)
  std::uint64_t seed = 0;
};

Heatmap smoothgrad(const ExplainableModel& model, const Tensor& x, Label target,
                   const SmoothGradParams& params = {});

/// An empty layer name selects the model's last probe-able layer.
Heatmap gradcam(const ExplainableModel& model, const Tensor& x, Label target,
                std::string_view layer = {});
Heatmap gradcam_pp(const ExplainableModel& model, const Tensor& x, Label target,
                   std::string_view layer = {});

/// Score-CAM restricted to the top_k channels with the largest spatial
/// standard deviation (ties go to the lower channel index).
Heatmap faster_scorecam(const ExplainableModel& model, const Tensor& x, Label target,
                        std::string_view layer = {}, int top_k = 8);

struct ExplainOptions {
  SmoothGradParams smoothgrad;
  std::string layer;
  int top_k = 8;
};

Heatmap explain(ExplainMethod method, const ExplainableModel& model, const Tensor& x, Label target,
                const ExplainOptions& options = {});

/// Jet colour for v in [0, 1] as BGR. With t = v:
///   r = clamp(1.5 - |4t - 3|), g = clamp(1.5 - |4t - 2|), b = clamp(1.5 - |4t - 1|)
/// each scaled by 255 and rounded.
cv::Vec3b jet_color(double v);

inline constexpr double kOverlayAlpha = 0.4;

/// Blend round((1 - alpha) * crop + alpha * jet(heatmap)) on an 8-bit BGR
/// crop of the heatmap's size.
cv::Mat overlay(const Heatmap& heatmap, const cv::Mat& crop);

/// Writes overlay(heatmap, crop) as a PNG and returns it.
cv::Mat write_overlay(const std::filesystem::path& path, const Heatmap& heatmap,
                      const cv::Mat& crop);

}  // namespace fakelens
