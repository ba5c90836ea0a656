#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

namespace fakelens {

namespace fs = std::filesystem;

/// Side length of every face crop fed to the classifier.
inline constexpr int kCropSize = 224;

/// Raised when an input path does not exist (as opposed to existing but
/// being undecodable).
class NotFoundError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct VideoMeta {
  fs::path path;
  std::size_t frame_count = 0;
  double fps = 0.0;
  int width = 0;
  int height = 0;
  bool readable = false;
  // Fewer frames decoded than the container header announced.
  bool partial = false;
};

struct FrameSequence {
  std::string source_id;
  double fps = 0.0;
  std::vector<cv::Mat> frames;  // BGR, 8-bit, temporal order
  bool partial = false;
};

/// Pixel box with exclusive bottom/right edges.
struct BBox {
  int top = 0;
  int left = 0;
  int bottom = 0;
  int right = 0;

  int height() const { return bottom - top; }
  int width() const { return right - left; }
  long long area() const { return static_cast<long long>(height()) * width(); }
  bool valid_within(int frame_height, int frame_width) const {
    return 0 <= top && top < bottom && bottom <= frame_height && 0 <= left && left < right &&
           right <= frame_width;
  }

  friend bool operator==(const BBox&, const BBox&) = default;
};

struct FaceCrop {
  cv::Mat image;  // kCropSize x kCropSize, 8-bit BGR
  std::string source_id;
  std::size_t frame_index = 0;
  BBox bbox;
};

/// True for file extensions the ingest stage treats as video containers.
bool is_video_file(const fs::path& path);

/// Video files below `dir` (recursive), sorted by path.
std::vector<fs::path> list_videos(const fs::path& dir);

/// Opens and fully decodes `path` to establish whether it is usable.
/// Throws NotFoundError when the path does not exist.
VideoMeta probe_video(const fs::path& path);

struct PurgeReport {
  std::vector<fs::path> removed;  // deleted, or would be deleted under dry run
  std::vector<std::pair<fs::path, std::string>> failures;
};

/// Deletes every unreadable video below `dir`. With `dry_run` the same
/// list is returned but nothing is touched. A failed deletion is recorded
/// in `failures` and does not stop the sweep.
PurgeReport purge_corrupted(const fs::path& dir, bool dry_run);

/// Nearest-source-frame mapping used when resampling to a target rate:
/// output i reads source round(i * source_fps / target_fps), clamped, and
/// the output length is round(source_frames * target_fps / source_fps).
std::vector<std::size_t> resample_indices(std::size_t source_frames, double source_fps,
                                          double target_fps);

/// Decodes `path` and resamples to `target_fps`. A mid-stream failure
/// returns the frames gathered so far with `partial` set.
FrameSequence decode_frames(const fs::path& path, double target_fps = 30.0);

/// Pluggable face localiser.
class FaceDetector {
 public:
  virtual ~FaceDetector() = default;
  virtual std::vector<BBox> detect(const cv::Mat& frame) const = 0;
};

/// Deterministic detector for synthetic footage: every connected region of
/// pixels within `tolerance` (per channel) of `marker_bgr` is one face, and
/// its bounding box is reported. Planted rectangles are drawn as outlines
/// in the marker colour.
class MarkerFaceDetector : public FaceDetector {
 public:
  explicit MarkerFaceDetector(cv::Vec3b marker_bgr = {0, 255, 0}, int tolerance = 40,
                              int min_area = 16);
  std::vector<BBox> detect(const cv::Mat& frame) const override;

 private:
  cv::Vec3b marker_;
  int tolerance_;
  int min_area_;
};

/// Adapter over an OpenCV cascade classifier model file.
class CascadeFaceDetector : public FaceDetector {
 public:
  explicit CascadeFaceDetector(const fs::path& model_path);
  ~CascadeFaceDetector() override;
  std::vector<BBox> detect(const cv::Mat& frame) const override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Runs `detector` and orders boxes by area, largest first (ties broken by
/// top, left, bottom, right).
std::vector<BBox> detect_faces(const cv::Mat& frame, const FaceDetector& detector);

/// Crops `bbox` out of `frame` and resamples it bilinearly to
/// kCropSize x kCropSize. Throws std::invalid_argument for a box that is
/// empty or leaves the frame.
FaceCrop crop_and_resize(const cv::Mat& frame, const BBox& bbox, std::string source_id = {},
                         std::size_t frame_index = 0);

}  // namespace fakelens
