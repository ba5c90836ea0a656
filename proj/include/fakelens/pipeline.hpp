#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fakelens/config.hpp"
#include "fakelens/keyframe.hpp"
#include "fakelens/media_ingest.hpp"

namespace fakelens {

enum class Stage { scan, preprocess, split, weights, train, evaluate, explain };

inline constexpr std::array<Stage, 7> kStages = {Stage::scan,    Stage::preprocess, Stage::split,
                                                 Stage::weights, Stage::train,      Stage::evaluate,
                                                 Stage::explain};

std::string_view to_string(Stage stage);
Stage parse_stage(std::string_view text);

/// <out_dir>/<run_id>, made absolute.
std::filesystem::path run_directory(const RunConfig& config);

std::unique_ptr<FaceDetector> make_detector(const RunConfig& config);

/// Faces and keyframes of one video.
struct VideoResult {
  std::string source_id;
  std::size_t frame_count = 0;  // after resampling
  std::size_t faces_found = 0;  // over all frames
  bool partial = false;
  KeyframeSet keyframes;        // frame indices into the resampled sequence
  std::vector<FaceCrop> crops;  // every face of every keyframe, in frame order
};

/// Decodes, detects faces, and picks keyframes on the track formed by the
/// largest face of each frame that has one. A track shorter than three
/// frames is kept whole. A video without faces yields no crops.
VideoResult preprocess_video(const std::filesystem::path& video, const std::string& source_id,
                             const FaceDetector& detector, const RunConfig& config);

struct StageOutcome {
  Stage stage = Stage::scan;
  bool skipped = false;
  std::vector<std::string> artifacts;  // relative to the run directory
};

struct RunOutcome {
  bool ok = true;
  std::filesystem::path run_dir;
  std::vector<StageOutcome> stages;
  std::optional<Stage> failed_stage;
  std::string error;

  int exit_code() const { return ok ? 0 : 1; }
};

/// Runs `stages` in order inside the run directory, journaling each one.
/// A stage is skipped when the journal shows it completed with the same
/// input hash (file contents plus the config values it reads) and its
/// artifacts are still present. The first failure stops the run.
RunOutcome run_pipeline(const RunConfig& config, std::span<const Stage> stages = kStages,
                        std::ostream* log = nullptr);

}  // namespace fakelens
