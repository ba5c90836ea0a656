#include "fakelens/media_ingest.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <mutex>
#include <tuple>

#include <opencv2/core/utils/logger.hpp>
#include <opencv2/imgproc.hpp>
#include <opencv2/objdetect.hpp>
#include <opencv2/videoio.hpp>

#include "fakelens/image_ops.hpp"

namespace fakelens {
namespace {

void quiet_opencv() {
  static std::once_flag once;
  std::call_once(once, [] {
    cv::utils::logging::setLogLevel(cv::utils::logging::LOG_LEVEL_SILENT);
  });
}

cv::VideoCapture open_capture(const fs::path& path) {
  quiet_opencv();
  return cv::VideoCapture(path.string(), cv::CAP_FFMPEG);
}

}  // namespace

bool is_video_file(const fs::path& path) {
  static constexpr std::array kExtensions = {".mp4", ".avi", ".mkv", ".mov", ".webm",
                                             ".mpg", ".mpeg", ".m4v", ".wmv", ".flv"};
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  return std::find(kExtensions.begin(), kExtensions.end(), ext) != kExtensions.end();
}

std::vector<fs::path> list_videos(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw NotFoundError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && is_video_file(entry.path())) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

VideoMeta probe_video(const fs::path& path) {
  if (!fs::exists(path)) throw NotFoundError("no such file: " + path.string());

  VideoMeta meta;
  meta.path = path;
  if (fs::is_regular_file(path) && fs::file_size(path) == 0) return meta;

  cv::VideoCapture cap = open_capture(path);
  if (!cap.isOpened()) return meta;

  const double announced = cap.get(cv::CAP_PROP_FRAME_COUNT);
  meta.fps = cap.get(cv::CAP_PROP_FPS);

  cv::Mat frame;
  while (cap.read(frame)) {
    if (frame.empty()) break;
    if (meta.frame_count == 0) {
      meta.width = frame.cols;
      meta.height = frame.rows;
    }
    ++meta.frame_count;
  }
  meta.readable = meta.frame_count >= 1 && meta.fps > 0.0 && std::isfinite(meta.fps);
  meta.partial = meta.readable && announced > 0.0 &&
                 static_cast<double>(meta.frame_count) < announced;
  if (!meta.readable) meta.frame_count = 0;
  return meta;
}

PurgeReport purge_corrupted(const fs::path& dir, bool dry_run) {
  PurgeReport report;
  for (const auto& path : list_videos(dir)) {
    if (probe_video(path).readable) continue;
    if (dry_run) {
      report.removed.push_back(path);
      continue;
    }
    std::error_code ec;
    fs::remove(path, ec);
    if (ec) {
      report.failures.emplace_back(path, ec.message());
    } else {
      report.removed.push_back(path);
    }
  }
  return report;
}

std::vector<std::size_t> resample_indices(std::size_t source_frames, double source_fps,
                                          double target_fps) {
  if (!(source_fps > 0.0) || !(target_fps > 0.0)) {
    throw std::invalid_argument("resample_indices: frame rates must be positive");
  }
  if (source_frames == 0) return {};
  const double ratio = source_fps / target_fps;
  const auto count = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(static_cast<double>(source_frames) / ratio)));
  std::vector<std::size_t> indices(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto src = static_cast<std::size_t>(std::llround(static_cast<double>(i) * ratio));
    indices[i] = std::min(src, source_frames - 1);
  }
  return indices;
}

FrameSequence decode_frames(const fs::path& path, double target_fps) {
  if (!(target_fps > 0.0)) throw std::invalid_argument("decode_frames: target_fps must be positive");
  const VideoMeta meta = probe_video(path);
  if (!meta.readable) throw std::invalid_argument("decode_frames: unreadable video " + path.string());

  FrameSequence seq;
  seq.source_id = path.stem().string();
  seq.fps = target_fps;
  seq.partial = meta.partial;

  const auto wanted = resample_indices(meta.frame_count, meta.fps, target_fps);
  cv::VideoCapture cap = open_capture(path);
  cv::Mat frame;
  std::size_t source_index = 0;
  bool have_frame = false;
  for (std::size_t idx : wanted) {
    while (!have_frame || source_index < idx + 1) {
      if (!cap.read(frame) || frame.empty()) {
        seq.partial = true;
        return seq;
      }
      have_frame = true;
      ++source_index;
    }
    seq.frames.push_back(frame.clone());
  }
  return seq;
}

MarkerFaceDetector::MarkerFaceDetector(cv::Vec3b marker_bgr, int tolerance, int min_area)
    : marker_(marker_bgr), tolerance_(tolerance), min_area_(min_area) {}

std::vector<BBox> MarkerFaceDetector::detect(const cv::Mat& frame) const {
  if (frame.empty() || frame.type() != CV_8UC3) {
    throw std::invalid_argument("MarkerFaceDetector: expected a non-empty BGR image");
  }
  const cv::Scalar lo(std::max(0, marker_[0] - tolerance_), std::max(0, marker_[1] - tolerance_),
                      std::max(0, marker_[2] - tolerance_));
  const cv::Scalar hi(std::min(255, marker_[0] + tolerance_),
                      std::min(255, marker_[1] + tolerance_),
                      std::min(255, marker_[2] + tolerance_));
  cv::Mat mask;
  cv::inRange(frame, lo, hi, mask);

  cv::Mat labels, stats, centroids;
  const int n = cv::connectedComponentsWithStats(mask, labels, stats, centroids, 8, CV_32S);
  std::vector<BBox> boxes;
  for (int i = 1; i < n; ++i) {
    const int left = stats.at<int>(i, cv::CC_STAT_LEFT);
    const int top = stats.at<int>(i, cv::CC_STAT_TOP);
    const int w = stats.at<int>(i, cv::CC_STAT_WIDTH);
    const int h = stats.at<int>(i, cv::CC_STAT_HEIGHT);
    if (static_cast<long long>(w) * h < min_area_) continue;
    boxes.push_back({top, left, top + h, left + w});
  }
  return boxes;
}

struct CascadeFaceDetector::Impl {
  mutable std::mutex mutex;
  mutable cv::CascadeClassifier classifier;
};

CascadeFaceDetector::CascadeFaceDetector(const fs::path& model_path)
    : impl_(std::make_unique<Impl>()) {
  if (!fs::exists(model_path)) throw NotFoundError("no such cascade model: " + model_path.string());
  if (!impl_->classifier.load(model_path.string())) {
    throw std::invalid_argument("cannot load cascade model: " + model_path.string());
  }
}

CascadeFaceDetector::~CascadeFaceDetector() = default;

std::vector<BBox> CascadeFaceDetector::detect(const cv::Mat& frame) const {
  cv::Mat gray;
  cv::cvtColor(frame, gray, cv::COLOR_BGR2GRAY);
  cv::equalizeHist(gray, gray);
  std::vector<cv::Rect> found;
  {
    std::lock_guard lock(impl_->mutex);
    impl_->classifier.detectMultiScale(gray, found);
  }
  std::vector<BBox> boxes;
  for (const auto& r : found) {
    const cv::Rect clipped = r & cv::Rect(0, 0, frame.cols, frame.rows);
    if (clipped.area() > 0) boxes.push_back({clipped.y, clipped.x, clipped.y + clipped.height,
                                             clipped.x + clipped.width});
  }
  return boxes;
}

std::vector<BBox> detect_faces(const cv::Mat& frame, const FaceDetector& detector) {
  if (frame.empty()) throw std::invalid_argument("detect_faces: empty frame");
  auto boxes = detector.detect(frame);
  std::sort(boxes.begin(), boxes.end(), [](const BBox& a, const BBox& b) {
    if (a.area() != b.area()) return a.area() > b.area();
    return std::tie(a.top, a.left, a.bottom, a.right) < std::tie(b.top, b.left, b.bottom, b.right);
  });
  return boxes;
}

FaceCrop crop_and_resize(const cv::Mat& frame, const BBox& bbox, std::string source_id,
                         std::size_t frame_index) {
  if (frame.empty()) throw std::invalid_argument("crop_and_resize: empty frame");
  if (!bbox.valid_within(frame.rows, frame.cols)) {
    throw std::invalid_argument("crop_and_resize: box is empty or outside the frame");
  }
  const cv::Mat region = frame(cv::Rect(bbox.left, bbox.top, bbox.width(), bbox.height()));
  FaceCrop crop;
  crop.image = resize_bilinear(region, kCropSize, kCropSize);
  crop.source_id = std::move(source_id);
  crop.frame_index = frame_index;
  crop.bbox = bbox;
  return crop;
}

}  // namespace fakelens
