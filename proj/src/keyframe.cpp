#include "fakelens/keyframe.hpp"

#include <algorithm>
#include <cstdint>
#include <stdexcept>

namespace fakelens {

namespace {

void check_pair(const cv::Mat& a, const cv::Mat& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("frame_difference: empty frame");
  if (a.rows != b.rows || a.cols != b.cols || a.channels() != b.channels()) {
    throw std::invalid_argument("frame_difference: frames differ in size or channel count");
  }
  if (a.depth() != CV_8U || b.depth() != CV_8U) {
    throw std::invalid_argument("frame_difference: expected 8-bit frames");
  }
}

// Sum of |a - b| over every pixel and channel.
std::uint64_t abs_diff_total(const cv::Mat& a, const cv::Mat& b) {
  check_pair(a, b);
  const int row_len = a.cols * a.channels();
  std::uint64_t total = 0;
  for (int y = 0; y < a.rows; ++y) {
    const auto* pa = a.ptr<std::uint8_t>(y);
    const auto* pb = b.ptr<std::uint8_t>(y);
    for (int i = 0; i < row_len; ++i) total += pa[i] > pb[i] ? pa[i] - pb[i] : pb[i] - pa[i];
  }
  return total;
}

double sample_scale(const cv::Mat& a) {
  return static_cast<double>(a.rows) * a.cols * a.channels() * 255.0;
}

// Window mean kept as an exact fraction of integer pixel totals, so equal
// means compare equal however the window was summed.
struct ExactMean {
  std::uint64_t sum = 0;
  std::uint64_t count = 1;

  friend bool operator<(const ExactMean& a, const ExactMean& b) {
    return static_cast<unsigned __int128>(a.sum) * b.count <
           static_cast<unsigned __int128>(b.sum) * a.count;
  }
  friend bool operator==(const ExactMean& a, const ExactMean& b) {
    return static_cast<unsigned __int128>(a.sum) * b.count ==
           static_cast<unsigned __int128>(b.sum) * a.count;
  }
};

template <typename T>
std::vector<std::size_t> maxima_of(std::span<const T> values, int order) {
  const std::size_t n = values.size();
  std::vector<std::size_t> peaks;
  std::size_t start = 0;
  while (start < n) {
    std::size_t end = start;
    while (end + 1 < n && values[end + 1] == values[start]) ++end;

    const T& v = values[start];
    const std::size_t reach = static_cast<std::size_t>(order);
    const std::size_t left_lo = start >= reach ? start - reach : 0;
    const std::size_t right_hi = std::min(n - 1, end + reach);
    bool dominant = left_lo < start || right_hi > end;
    for (std::size_t j = left_lo; dominant && j < start; ++j) dominant = values[j] < v;
    for (std::size_t j = end + 1; dominant && j <= right_hi; ++j) dominant = values[j] < v;
    if (dominant) peaks.push_back(start);

    start = end + 1;
  }
  return peaks;
}

}  // namespace

double frame_difference(const cv::Mat& a, const cv::Mat& b) {
  return static_cast<double>(abs_diff_total(a, b)) / sample_scale(a);
}

DifferenceCurve difference_curve(std::span<const cv::Mat> frames) {
  if (frames.size() < 2) throw std::invalid_argument("difference_curve: need at least 2 frames");
  DifferenceCurve curve;
  curve.values.reserve(frames.size() - 1);
  for (std::size_t i = 0; i + 1 < frames.size(); ++i) {
    curve.values.push_back(frame_difference(frames[i], frames[i + 1]));
  }
  return curve;
}

DifferenceCurve smooth(const DifferenceCurve& curve, int window) {
  if (window <= 0 || window % 2 == 0) {
    throw std::invalid_argument("smooth: window must be a positive odd integer");
  }
  const auto n = static_cast<long long>(curve.values.size());
  if (n == 0) throw std::invalid_argument("smooth: empty curve");
  if (window > 2 * n - 1) {
    throw std::invalid_argument("smooth: window exceeds 2 * length - 1");
  }
  const long long half = window / 2;

  DifferenceCurve out;
  out.smoothed = true;
  out.window = window;
  out.values.resize(static_cast<std::size_t>(n));
  for (long long i = 0; i < n; ++i) {
    const long long lo = std::max(0LL, i - half);
    const long long hi = std::min(n - 1, i + half);
    double sum = 0.0;
    double lowest = curve.values[lo];
    double highest = curve.values[lo];
    for (long long j = lo; j <= hi; ++j) {
      sum += curve.values[j];
      lowest = std::min(lowest, curve.values[j]);
      highest = std::max(highest, curve.values[j]);
    }
    // Clamp away rounding so a flat window stays exactly flat.
    out.values[i] = std::clamp(sum / static_cast<double>(hi - lo + 1), lowest, highest);
  }
  return out;
}

std::vector<std::size_t> local_maxima(std::span<const double> values, int order) {
  if (order < 1) throw std::invalid_argument("local_maxima: order must be >= 1");
  return maxima_of(values, order);
}

KeyframeSet extract_keyframes(std::span<const cv::Mat> frames, KeyframeParams params) {
  if (frames.size() < 3) throw std::invalid_argument("extract_keyframes: need at least 3 frames");
  if (params.order < 1) throw std::invalid_argument("extract_keyframes: order must be >= 1");
  if (params.window <= 0 || params.window % 2 == 0) {
    throw std::invalid_argument("extract_keyframes: window must be a positive odd integer");
  }

  // Same steps as difference_curve -> smooth -> local_maxima, but on the
  // integer pixel totals, so ties between windows are decided exactly.
  const std::size_t m = frames.size() - 1;
  std::vector<std::uint64_t> prefix(m + 1, 0);
  for (std::size_t i = 0; i < m; ++i) prefix[i + 1] = prefix[i] + abs_diff_total(frames[i], frames[i + 1]);

  // Wider windows than 2m-1 all collapse to the global mean, so clamp.
  params.window = std::min(params.window, static_cast<int>(2 * m - 1));
  const std::size_t half = static_cast<std::size_t>(params.window / 2);
  std::vector<ExactMean> curve(m);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(m - 1, i + half);
    curve[i] = {prefix[hi + 1] - prefix[lo], hi - lo + 1};
  }
  const double scale = sample_scale(frames[0]);
  auto score = [&](std::size_t i) {
    return static_cast<double>(curve[i].sum) / (static_cast<double>(curve[i].count) * scale);
  };

  KeyframeSet set;
  set.params = params;
  for (std::size_t i : maxima_of(std::span<const ExactMean>(curve), params.order)) {
    set.indices.push_back(i + 1);
    set.scores.push_back(score(i));
  }
  if (!set.indices.empty()) return set;

  const bool constant =
      std::all_of(curve.begin(), curve.end(), [&](const ExactMean& x) { return x == curve.front(); });
  std::size_t curve_index;
  if (constant) {
    curve_index = frames.size() / 2 - 1;
  } else {
    curve_index = static_cast<std::size_t>(std::max_element(curve.begin(), curve.end()) - curve.begin());
  }
  set.indices.push_back(curve_index + 1);
  set.scores.push_back(score(curve_index));
  return set;
}

}  // namespace fakelens
