#include "fakelens/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <openssl/evp.h>
#include <opencv2/imgcodecs.hpp>

#include "fakelens/dataset.hpp"
#include "fakelens/explain.hpp"
#include "fakelens/imbalance.hpp"
#include "fakelens/journal.hpp"
#include "fakelens/metrics.hpp"
#include "fakelens/network.hpp"
#include "fakelens/trainer.hpp"

namespace fakelens {
namespace {

using nlohmann::json;

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) {
      throw std::runtime_error("SHA-256 unavailable");
    }
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(std::string_view bytes) {
    // Length prefix keeps ("ab","c") and ("a","bc") apart.
    const std::uint64_t n = bytes.size();
    EVP_DigestUpdate(ctx_, &n, sizeof n);
    EVP_DigestUpdate(ctx_, bytes.data(), bytes.size());
  }

  void update_file(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw NotFoundError("missing input " + path.string());
    update(path.filename().string());
    char buf[1 << 16];
    while (is) {
      is.read(buf, sizeof buf);
      EVP_DigestUpdate(ctx_, buf, static_cast<std::size_t>(is.gcount()));
    }
  }

  // Every regular file below `dir`, keyed by relative path.
  void update_tree(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw NotFoundError("missing input directory " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    update(std::to_string(files.size()));
    for (const auto& f : files) {
      update(fs::relative(f, dir).generic_string());
      update_file(f);
    }
  }

  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, md, &len);
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int{md[i]};
    return os.str();
  }

 private:
  EVP_MD_CTX* ctx_;
};

std::string slug(const std::string& s) {
  std::string out = s;
  std::replace(out.begin(), out.end(), '/', '_');
  return out;
}

void write_json(const fs::path& path, const json& doc) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  os << doc.dump(2) << '\n';
  if (!os) throw std::runtime_error("cannot write " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw NotFoundError("missing " + path.string());
  return json::parse(is);
}

void require(const fs::path& path, Stage producer) {
  if (!fs::exists(path)) {
    throw NotFoundError("missing " + path.string() + "; run the '" + std::string(to_string(producer)) +
                        "' stage first");
  }
}

// Videos below real_dir and fake_dir with their label and source id.
struct VideoEntry {
  Label label;
  fs::path path;
  std::string source_id;
};

std::vector<VideoEntry> list_inputs(const RunConfig& c) {
  std::vector<VideoEntry> out;
  for (Label l : kLabels) {
    const fs::path dir = l == Label::real ? c.real_dir : c.fake_dir;
    if (!fs::is_directory(dir)) throw NotFoundError("input directory not found: " + dir.string());
    for (const auto& v : list_videos(dir)) {
      fs::path rel = fs::relative(v, dir);
      rel.replace_extension();
      out.push_back({l, v, slug(rel.generic_string())});
    }
  }
  return out;
}

ClassWeights weights_from_json(const json& doc) {
  ClassWeights w;
  for (Label l : kLabels) w.weights[l] = doc.at(std::string(to_string(l))).get<double>();
  return w;
}

class Runner {
 public:
  Runner(const RunConfig& config, std::ostream* log)
      : c_(config), dir_(run_directory(config)), log_(log) {
    fs::create_directories(dir_);
    journal_ = std::make_unique<Journal>(dir_ / "journal.jsonl");
    write_json(dir_ / "config.json", to_json(c_));
  }

  RunOutcome run(std::span<const Stage> stages) {
    RunOutcome outcome;
    outcome.run_dir = dir_;
    journal_->append({{"event", "run_start"}, {"run_id", c_.run_id}});
    for (Stage s : stages) {
      const std::string name(to_string(s));
      try {
        const std::string hash = input_hash(s);
        const JournalState state = replay_journal(journal_->path());
        auto it = state.stages.find(name);
        if (it != state.stages.end() && !it->second.failed && it->second.hash == hash &&
            artifacts_exist(it->second.artifacts)) {
          journal_->append({{"event", "stage_skipped"}, {"stage", name}, {"hash", hash},
                            {"artifacts", it->second.artifacts}});
          note(name + ": up to date, skipped");
          outcome.stages.push_back({s, true, it->second.artifacts});
          continue;
        }
        journal_->append({{"event", "stage_start"}, {"stage", name}, {"hash", hash}});
        note(name + ": running");
        std::vector<std::string> artifacts = execute(s);
        // Scanning may delete inputs, so its hash is taken afterwards.
        const std::string done_hash = s == Stage::scan ? input_hash(s) : hash;
        journal_->append({{"event", "stage_done"}, {"stage", name}, {"hash", done_hash},
                          {"artifacts", artifacts}});
        outcome.stages.push_back({s, false, std::move(artifacts)});
      } catch (const std::exception& e) {
        journal_->append({{"event", "stage_failed"}, {"stage", name}, {"error", e.what()}});
        note(name + ": failed: " + e.what());
        outcome.ok = false;
        outcome.failed_stage = s;
        outcome.error = e.what();
        break;
      }
    }
    journal_->append({{"event", "run_end"}, {"ok", outcome.ok}});
    return outcome;
  }

 private:
  void note(const std::string& msg) {
    if (log_) *log_ << "[" << c_.run_id << "] " << msg << '\n';
  }

  bool artifacts_exist(const std::vector<std::string>& artifacts) const {
    return std::all_of(artifacts.begin(), artifacts.end(),
                       [&](const std::string& a) { return fs::exists(dir_ / a); });
  }

  std::string input_hash(Stage s) const {
    Sha256 h;
    h.update(to_string(s));
    json params;
    switch (s) {
      case Stage::scan:
        params = {{"delete_corrupted", c_.delete_corrupted}};
        for (const auto& v : list_inputs(c_)) {
          h.update(std::string(to_string(v.label)) + "/" + v.source_id);
          h.update_file(v.path);
        }
        break;
      case Stage::preprocess: {
        params = {{"target_fps", c_.target_fps}, {"detector", c_.detector},
                  {"cascade_path", c_.cascade_path}, {"window", c_.window}, {"order", c_.order}};
        require(dir_ / "scan.json", Stage::scan);
        h.update_file(dir_ / "scan.json");
        for (const auto& v : list_inputs(c_)) h.update_file(v.path);
        if (c_.detector == "cascade") h.update_file(c_.cascade_path);
        break;
      }
      case Stage::split:
        params = {{"ratios", {c_.ratios.train, c_.ratios.val, c_.ratios.test}}, {"seed", c_.seed}};
        require(dir_ / "crops", Stage::preprocess);
        h.update_tree(dir_ / "crops");
        break;
      case Stage::weights:
        require(dir_ / "manifest.jsonl", Stage::split);
        h.update_file(dir_ / "manifest.jsonl");
        break;
      case Stage::train:
        params = {{"dense_units", c_.dense_units}, {"dropout_rate", c_.dropout_rate},
                  {"lr0", c_.lr0}, {"batch_size", c_.batch_size}, {"max_epochs", c_.max_epochs},
                  {"plateau_patience", c_.plateau_patience}, {"plateau_factor", c_.plateau_factor},
                  {"min_lr", c_.min_lr}, {"fine_tune", c_.fine_tune}, {"seed", c_.seed}};
        require(dir_ / "manifest.jsonl", Stage::split);
        require(dir_ / "weights.json", Stage::weights);
        h.update_file(dir_ / "manifest.jsonl");
        h.update_file(dir_ / "weights.json");
        h.update_tree(dir_ / "tensors");
        break;
      case Stage::evaluate:
        require(dir_ / "checkpoint", Stage::train);
        h.update_file(dir_ / "manifest.jsonl");
        h.update_tree(dir_ / "checkpoint");
        h.update_tree(dir_ / "tensors");
        break;
      case Stage::explain: {
        json methods = json::array();
        for (ExplainMethod m : c_.explain_methods) methods.push_back(std::string(to_string(m)));
        params = {{"explain_methods", methods}, {"explain_count", c_.explain_count},
                  {"explain_class", c_.explain_class}, {"n", c_.n}, {"sigma", c_.sigma},
                  {"top_k", c_.top_k}, {"seed", c_.seed}};
        require(dir_ / "checkpoint", Stage::train);
        h.update_file(dir_ / "manifest.jsonl");
        h.update_tree(dir_ / "checkpoint");
        h.update_tree(dir_ / "crops");
        h.update_tree(dir_ / "tensors");
        break;
      }
    }
    h.update(params.dump());
    return h.hex();
  }

  std::vector<std::string> execute(Stage s) {
    switch (s) {
      case Stage::scan: return scan();
      case Stage::preprocess: return preprocess();
      case Stage::split: return split();
      case Stage::weights: return weights();
      case Stage::train: return train_model();
      case Stage::evaluate: return evaluate_model();
      case Stage::explain: return explain_samples();
    }
    return {};
  }

  std::vector<std::string> scan() {
    json removed = json::array(), failures = json::array();
    if (c_.delete_corrupted) {
      for (const fs::path& dir : {c_.real_dir, c_.fake_dir}) {
        const PurgeReport r = purge_corrupted(dir, false);
        for (const auto& p : r.removed) removed.push_back(p.string());
        for (const auto& [p, why] : r.failures) failures.push_back({{"path", p.string()}, {"error", why}});
      }
    }
    json videos = json::array();
    for (const auto& v : list_inputs(c_)) {
      const VideoMeta m = probe_video(v.path);
      videos.push_back({{"label", to_string(v.label)}, {"source_id", v.source_id},
                        {"path", v.path.string()}, {"readable", m.readable},
                        {"partial", m.partial}, {"frame_count", m.frame_count}, {"fps", m.fps},
                        {"width", m.width}, {"height", m.height}});
      if (!m.readable) note("unreadable video " + v.path.string());
    }
    write_json(dir_ / "scan.json", {{"videos", videos}, {"removed", removed}, {"failures", failures}});
    return {"scan.json"};
  }

  std::vector<std::string> preprocess() {
    const json scan = read_json(dir_ / "scan.json");
    std::vector<VideoEntry> todo;
    for (const auto& v : scan.at("videos")) {
      if (!v.at("readable").get<bool>()) continue;
      todo.push_back({parse_label(v.at("label").get<std::string>()), v.at("path").get<std::string>(),
                      v.at("source_id").get<std::string>()});
    }
    fs::remove_all(dir_ / "crops");
    fs::remove_all(dir_ / "tensors");
    for (Label l : kLabels) {
      fs::create_directories(dir_ / "crops" / std::string(to_string(l)));
      fs::create_directories(dir_ / "tensors" / std::string(to_string(l)));
    }

    const auto detector = make_detector(c_);
    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> total_crops{0};
    std::mutex error_mutex;
    std::string first_error;

    auto worker = [&] {
      for (std::size_t i = next++; i < todo.size(); i = next++) {
        const VideoEntry& v = todo[i];
        try {
          VideoResult r = preprocess_video(v.path, v.source_id, *detector, c_);
          const std::string label(to_string(v.label));
          journal_->append({{"event", "video"}, {"label", label}, {"source_id", v.source_id},
                            {"frame_count", r.frame_count}, {"faces_found", r.faces_found},
                            {"partial", r.partial}});
          if (r.crops.empty()) {
            note("no faces in " + v.path.string() + ", skipped");
            continue;
          }
          journal_->append({{"event", "keyframes"}, {"label", label}, {"source_id", v.source_id},
                            {"indices", r.keyframes.indices}, {"scores", r.keyframes.scores},
                            {"window", r.keyframes.params.window},
                            {"order", r.keyframes.params.order}});
          const auto tensors = save_samples(r.crops, dir_ / "tensors" / label);
          for (std::size_t k = 0; k < r.crops.size(); ++k) {
            fs::path png = dir_ / "crops" / label / fs::relative(tensors[k], dir_ / "tensors" / label);
            png.replace_extension(".png");
            fs::create_directories(png.parent_path());
            if (!cv::imwrite(png.string(), r.crops[k].image)) {
              throw std::runtime_error("cannot write " + png.string());
            }
          }
          total_crops += r.crops.size();
        } catch (const std::exception& e) {
          std::lock_guard lock(error_mutex);
          if (first_error.empty()) first_error = v.path.string() + ": " + e.what();
        }
      }
    };
    const std::size_t n_workers = std::min<std::size_t>(static_cast<std::size_t>(c_.workers),
                                                        std::max<std::size_t>(todo.size(), 1));
    std::vector<std::thread> pool;
    for (std::size_t i = 1; i < n_workers; ++i) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    if (!first_error.empty()) throw std::runtime_error(first_error);
    if (total_crops == 0) throw std::runtime_error("no face crops were produced");
    note("extracted " + std::to_string(total_crops.load()) + " face crops");
    return {"crops", "tensors"};
  }

  std::vector<std::string> split() {
    DatasetManifest m = build_manifest(dir_ / "crops" / "real", dir_ / "crops" / "fake");
    for (auto& r : m.records) r.tensor_path = (dir_ / "tensors" / (r.sample_id + ".flt")).string();
    m = stratified_split(m, c_.ratios, c_.seed);
    write_manifest(dir_ / "manifest.jsonl", m);
    return {"manifest.jsonl"};
  }

  std::vector<std::string> weights() {
    const DatasetManifest m = read_manifest(dir_ / "manifest.jsonl");
    const ClassWeights w = class_weights(m.class_counts(Split::train));
    json doc = json::object();
    for (Label l : kLabels) doc[std::string(to_string(l))] = w.at(l);
    write_json(dir_ / "weights.json", doc);
    return {"weights.json"};
  }

  std::vector<std::string> train_model() {
    const DatasetManifest m = read_manifest(dir_ / "manifest.jsonl");
    const ClassWeights w = weights_from_json(read_json(dir_ / "weights.json"));
    TrainResult result = train(m, make_tiny_backbone(c_.seed), c_.head_config(), c_.train_config(), w);
    fs::remove_all(dir_ / "checkpoint");
    save_checkpoint(dir_ / "checkpoint", result.model);
    write_history_csv(dir_ / "history.csv", result.history);
    const auto& best = result.history.epochs.at(result.history.best_epoch);
    note("best epoch " + std::to_string(best.epoch) + ": val_loss " + std::to_string(best.val_loss) +
         ", val_acc " + std::to_string(best.val_accuracy));
    return {"checkpoint", "history.csv"};
  }

  std::vector<std::string> evaluate_model() {
    const DatasetManifest m = read_manifest(dir_ / "manifest.jsonl");
    const Classifier model = load_checkpoint(dir_ / "checkpoint");
    const EvalReport r = evaluate(model, m, Split::test, load_record, dir_ / "confusion.png");
    write_report(dir_ / "report.json", r);
    note("test accuracy " + std::to_string(r.accuracy));
    return {"report.json", "confusion.png"};
  }

  std::vector<std::string> explain_samples() {
    const DatasetManifest m = read_manifest(dir_ / "manifest.jsonl");
    const Classifier model = load_checkpoint(dir_ / "checkpoint");
    auto records = m.in_split(Split::test);
    if (records.size() > static_cast<std::size_t>(c_.explain_count)) {
      records.resize(static_cast<std::size_t>(c_.explain_count));
    }
    fs::remove_all(dir_ / "explain");
    fs::create_directories(dir_ / "explain");

    ExplainOptions opt;
    opt.smoothgrad = {c_.n, c_.sigma, c_.seed};
    opt.top_k = c_.top_k;
    json index = json::array();
    for (const auto& rec : records) {
      const Tensor x = load_sample(rec.tensor_path);
      const cv::Mat crop = cv::imread((dir_ / "crops" / (rec.sample_id + ".png")).string(), cv::IMREAD_COLOR);
      if (crop.empty()) throw NotFoundError("missing crop image for " + rec.sample_id);
      const Label predicted = predict_label(model.probabilities(x));
      const Label target = c_.explain_class == "predicted" ? predicted : parse_label(c_.explain_class);
      for (ExplainMethod method : c_.explain_methods) {
        const Heatmap h = explain(method, model, x, target, opt);
        const fs::path base = dir_ / "explain" / std::string(to_string(method)) / slug(rec.sample_id);
        write_overlay(fs::path(base).replace_extension(".png"), h, crop);
        write_tensor(fs::path(base).replace_extension(".flt"), h.values);
        index.push_back({{"sample_id", rec.sample_id}, {"label", to_string(rec.label)},
                         {"predicted", to_string(predicted)}, {"target_class", to_string(target)},
                         {"method", to_string(method)},
                         {"overlay", fs::relative(fs::path(base).replace_extension(".png"), dir_).generic_string()},
                         {"heatmap", fs::relative(fs::path(base).replace_extension(".flt"), dir_).generic_string()}});
      }
    }
    write_json(dir_ / "explain" / "index.json", index);
    return {"explain"};
  }

  const RunConfig& c_;
  fs::path dir_;
  std::ostream* log_;
  std::unique_ptr<Journal> journal_;
};

}  // namespace

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::scan: return "scan";
    case Stage::preprocess: return "preprocess";
    case Stage::split: return "split";
    case Stage::weights: return "weights";
    case Stage::train: return "train";
    case Stage::evaluate: return "evaluate";
    case Stage::explain: return "explain";
  }
  return "?";
}

Stage parse_stage(std::string_view text) {
  for (Stage s : kStages) {
    if (to_string(s) == text) return s;
  }
  throw std::invalid_argument("unknown stage '" + std::string(text) + "'");
}

fs::path run_directory(const RunConfig& config) {
  return fs::absolute(config.out_dir / config.run_id).lexically_normal();
}

std::unique_ptr<FaceDetector> make_detector(const RunConfig& config) {
  if (config.detector == "marker") return std::make_unique<MarkerFaceDetector>();
  if (config.detector == "cascade") return std::make_unique<CascadeFaceDetector>(config.cascade_path);
  throw std::invalid_argument("unknown detector '" + config.detector + "'");
}

VideoResult preprocess_video(const fs::path& video, const std::string& source_id,
                             const FaceDetector& detector, const RunConfig& config) {
  FrameSequence seq = decode_frames(video, config.target_fps);
  VideoResult out;
  out.source_id = source_id;
  out.frame_count = seq.frames.size();
  out.partial = seq.partial;

  // Per frame: every face crop, largest first.
  std::vector<std::vector<FaceCrop>> faces(seq.frames.size());
  std::vector<cv::Mat> track;
  std::vector<std::size_t> track_frames;
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    for (const BBox& b : detect_faces(seq.frames[i], detector)) {
      faces[i].push_back(crop_and_resize(seq.frames[i], b, source_id, i));
    }
    out.faces_found += faces[i].size();
    if (!faces[i].empty()) {
      track.push_back(faces[i].front().image);
      track_frames.push_back(i);
    }
  }
  if (track.empty()) return out;

  std::vector<std::size_t> chosen;
  if (track.size() < 3) {
    chosen.resize(track.size());
    for (std::size_t k = 0; k < track.size(); ++k) chosen[k] = k;
    out.keyframes.params = {config.window, config.order};
    out.keyframes.scores.assign(track.size(), 0.0);
  } else {
    out.keyframes = extract_keyframes(track, {config.window, config.order});
    chosen = out.keyframes.indices;
  }
  out.keyframes.indices.clear();
  for (std::size_t k : chosen) {
    const std::size_t frame = track_frames[k];
    out.keyframes.indices.push_back(frame);
    for (auto& crop : faces[frame]) out.crops.push_back(std::move(crop));
  }
  return out;
}

RunOutcome run_pipeline(const RunConfig& config, std::span<const Stage> stages, std::ostream* log) {
  Runner runner(config, log);
  return runner.run(stages);
}

}  // namespace fakelens
