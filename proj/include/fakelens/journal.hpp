#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

namespace fakelens {

/// Append-only JSON Lines log of a run. Safe to share between threads.
class Journal {
 public:
  explicit Journal(std::filesystem::path path);

  /// Writes one line and flushes it. Adds "seq" (1-based, continuing any
  /// existing file) to the entry.
  void append(nlohmann::json entry);

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::mutex mutex_;
  std::ofstream out_;
  std::size_t seq_ = 0;
};

/// Entries in file order. A torn final line (from an interrupted write) is
/// ignored; any other malformed line throws.
std::vector<nlohmann::json> read_journal(const std::filesystem::path& path);

struct StageRecord {
  std::string hash;                     // input hash of the last completion
  std::vector<std::string> artifacts;   // paths relative to the run directory
  bool failed = false;                  // last event for the stage was a failure
};

/// Stage state rebuilt from the log: for each stage, its latest
/// completion and whether a later attempt failed.
struct JournalState {
  std::map<std::string, StageRecord> stages;

  /// Artifacts of every stage whose latest completion has not been
  /// superseded by a failure.
  std::vector<std::string> artifacts() const;
};

JournalState replay_journal(const std::vector<nlohmann::json>& entries);
JournalState replay_journal(const std::filesystem::path& path);

}  // namespace fakelens
