#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <opencv2/core.hpp>

namespace fakelens {

/// Consecutive-frame dissimilarities; values[i] compares frames i and i+1.
struct DifferenceCurve {
  std::vector<double> values;
  bool smoothed = false;
  int window = 1;
};

struct KeyframeParams {
  int window = 9;  // smoothing width in curve samples, odd
  int order = 3;   // local-maximum neighbourhood radius
};

struct KeyframeSet {
  std::vector<std::size_t> indices;  // frame indices, strictly increasing
  std::vector<double> scores;        // smoothed difference at each index
  KeyframeParams params;             // parameters actually applied
};

/// Mean over all pixels and channels of |a - b| / 255 for two 8-bit images
/// of identical size and channel count.
double frame_difference(const cv::Mat& a, const cv::Mat& b);

DifferenceCurve difference_curve(std::span<const cv::Mat> frames);

/// Centred moving average. Near the ends the window shrinks to the samples
/// that exist, so the output has the input's length.
DifferenceCurve smooth(const DifferenceCurve& curve, int window);

/// Indices of strict local maxima within +/- `order` samples. A run of
/// equal values counts as one candidate, reported at its leftmost index,
/// when every sample within `order` of either end of the run is strictly
/// lower and at least one such sample exists.
std::vector<std::size_t> local_maxima(std::span<const double> values, int order);

/// difference_curve -> smooth -> local_maxima, with curve index i reported
/// as frame i + 1. Window means are compared exactly (on integer pixel
/// totals) rather than after rounding to double. Never returns an empty set for three or more frames:
/// without a local maximum the highest-scoring frame is used (leftmost on
/// ties), and an exactly constant curve yields frame n / 2.
KeyframeSet extract_keyframes(std::span<const cv::Mat> frames, KeyframeParams params = {});

}  // namespace fakelens
