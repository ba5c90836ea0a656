#include "fakelens/journal.hpp"

#include <stdexcept>

namespace fakelens {

using nlohmann::json;

Journal::Journal(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  if (std::filesystem::exists(path_)) seq_ = read_journal(path_).size();
  out_.open(path_, std::ios::app);
  if (!out_) throw std::runtime_error("cannot open journal " + path_.string());
}

void Journal::append(json entry) {
  std::lock_guard lock(mutex_);
  entry["seq"] = ++seq_;
  out_ << entry.dump() << '\n';
  out_.flush();
  if (!out_) throw std::runtime_error("cannot append to journal " + path_.string());
}

std::vector<json> read_journal(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open journal " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(is, line);) {
    if (!line.empty()) lines.push_back(std::move(line));
  }
  std::vector<json> entries;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      entries.push_back(json::parse(lines[i]));
    } catch (const json::parse_error&) {
      if (i + 1 == lines.size()) break;
      throw std::runtime_error("journal " + path.string() + ": malformed line " +
                               std::to_string(i + 1));
    }
  }
  return entries;
}

std::vector<std::string> JournalState::artifacts() const {
  std::vector<std::string> out;
  for (const auto& [name, rec] : stages) {
    if (rec.failed) continue;
    out.insert(out.end(), rec.artifacts.begin(), rec.artifacts.end());
  }
  return out;
}

JournalState replay_journal(const std::vector<json>& entries) {
  JournalState state;
  for (const auto& e : entries) {
    const std::string event = e.value("event", "");
    if (event != "stage_done" && event != "stage_skipped" && event != "stage_failed") continue;
    StageRecord& rec = state.stages[e.at("stage").get<std::string>()];
    if (event == "stage_failed") {
      rec.failed = true;
    } else {
      rec.failed = false;
      rec.hash = e.at("hash").get<std::string>();
      rec.artifacts = e.at("artifacts").get<std::vector<std::string>>();
    }
  }
  return state;
}

JournalState replay_journal(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return {};
  return replay_journal(read_journal(path));
}

}  // namespace fakelens
