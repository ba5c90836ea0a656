#include "fakelens/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "fakelens/random.hpp"

namespace fakelens {
namespace {

using nlohmann::json;

bool is_image_file(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

void collect(const fs::path& dir, Label label, std::vector<SampleRecord>& out) {
  if (!fs::is_directory(dir)) throw NotFoundError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& file : files) {
    const fs::path rel = fs::relative(file, dir);
    SampleRecord rec;
    rec.sample_id = std::string(to_string(label)) + "/" +
                    (rel.parent_path() / rel.stem()).generic_string();
    rec.label = label;
    rec.source_id = rel.has_parent_path() ? rel.parent_path().filename().string()
                                          : rel.stem().string();
    out.push_back(std::move(rec));
  }
}

void put_u32(std::ostream& os, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(bytes, 4);
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

std::string_view to_string(Label label) { return label == Label::real ? "real" : "fake"; }

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::unassigned: return "unassigned";
  }
  return "unassigned";
}

Label parse_label(std::string_view text) {
  if (text == "real") return Label::real;
  if (text == "fake") return Label::fake;
  throw std::invalid_argument("unknown label '" + std::string(text) + "'");
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  if (text == "unassigned") return Split::unassigned;
  throw std::invalid_argument("unknown split '" + std::string(text) + "'");
}

std::map<Label, std::size_t> DatasetManifest::class_counts(Split split) const {
  std::map<Label, std::size_t> counts;
  for (Label l : kLabels) counts[l] = 0;
  for (const auto& r : records)
    if (r.split == split) ++counts[r.label];
  return counts;
}

std::vector<SampleRecord> DatasetManifest::in_split(Split split) const {
  std::vector<SampleRecord> out;
  std::copy_if(records.begin(), records.end(), std::back_inserter(out),
               [split](const SampleRecord& r) { return r.split == split; });
  return out;
}

DatasetManifest build_manifest(const fs::path& real_dir, const fs::path& fake_dir) {
  DatasetManifest manifest;
  collect(real_dir, Label::real, manifest.records);
  collect(fake_dir, Label::fake, manifest.records);
  if (manifest.records.empty()) {
    throw std::invalid_argument("build_manifest: no samples in either class directory");
  }
  return manifest;
}

std::array<std::size_t, 3> allocate_split(std::size_t count, const SplitRatios& ratios) {
  const std::array<double, 3> r = {ratios.train, ratios.val, ratios.test};
  std::array<std::size_t, 3> alloc{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double target = r[i] * static_cast<double>(count);
    alloc[i] = static_cast<std::size_t>(std::floor(target));
    remainder[i] = target - std::floor(target);
    assigned += alloc[i];
  }
  std::array<std::size_t, 3> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; assigned < count; k = (k + 1) % 3, ++assigned) ++alloc[order[k]];
  // Rounding of r[i]*count can overshoot by one when ratios sum to 1+eps.
  for (std::size_t k = 3; assigned > count; --assigned) --alloc[order[--k]];
  return alloc;
}

DatasetManifest stratified_split(const DatasetManifest& manifest, const SplitRatios& ratios,
                                 std::uint64_t seed) {
  if (!(ratios.train > 0.0 && ratios.val > 0.0 && ratios.test > 0.0)) {
    throw std::invalid_argument("stratified_split: ratios must be positive");
  }
  if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    throw std::invalid_argument("stratified_split: ratios must sum to 1");
  }

  DatasetManifest out = manifest;
  Rng rng(seed);
  for (Label label : kLabels) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < out.records.size(); ++i)
      if (out.records[i].label == label) members.push_back(i);
    if (members.size() < 3) {
      throw std::invalid_argument("stratified_split: class '" + std::string(to_string(label)) +
                                  "' has " + std::to_string(members.size()) +
                                  " samples, need at least 3");
    }
    rng.shuffle(std::span(members));
    const auto alloc = allocate_split(members.size(), ratios);
    std::size_t pos = 0;
    for (auto [split, n] : {std::pair{Split::train, alloc[0]}, std::pair{Split::val, alloc[1]},
                            std::pair{Split::test, alloc[2]}}) {
      for (std::size_t k = 0; k < n; ++k) out.records[members[pos++]].split = split;
    }
  }
  return out;
}

void write_manifest(const fs::path& path, const DatasetManifest& manifest) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write manifest " + path.string());
  for (const auto& r : manifest.records) {
    json line = {{"sample_id", r.sample_id},
                 {"label", to_string(r.label)},
                 {"split", to_string(r.split)},
                 {"tensor_path", r.tensor_path},
                 {"source_id", r.source_id}};
    os << line.dump() << '\n';
  }
}

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw NotFoundError("cannot read manifest " + path.string());
  DatasetManifest manifest;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      SampleRecord r;
      r.sample_id = j.at("sample_id").get<std::string>();
      r.label = parse_label(j.at("label").get<std::string>());
      r.split = parse_split(j.at("split").get<std::string>());
      r.tensor_path = j.at("tensor_path").get<std::string>();
      r.source_id = j.at("source_id").get<std::string>();
      manifest.records.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw std::invalid_argument(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return manifest;
}

FormatError::FormatError(const std::string& what, std::size_t offset)
    : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

void write_tensor(const fs::path& path, const Tensor& tensor) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write tensor " + path.string());
  os.write(kTensorMagic.data(), kTensorMagic.size());
  put_u32(os, static_cast<std::uint32_t>(tensor.height()));
  put_u32(os, static_cast<std::uint32_t>(tensor.width()));
  put_u32(os, static_cast<std::uint32_t>(tensor.channels()));
  for (double v : tensor.values()) put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  if (!os) throw std::runtime_error("short write on tensor " + path.string());
}

Tensor read_tensor(const fs::path& path) {
  if (!fs::exists(path)) throw NotFoundError("no such tensor file: " + path.string());
  std::ifstream is(path, std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 16) throw FormatError("truncated tensor header", bytes.size());
  if (std::memcmp(bytes.data(), kTensorMagic.data(), kTensorMagic.size()) != 0) {
    throw FormatError("bad tensor magic", 0);
  }
  const std::uint32_t h = get_u32(&bytes[4]);
  const std::uint32_t w = get_u32(&bytes[8]);
  const std::uint32_t c = get_u32(&bytes[12]);
  constexpr std::uint64_t kMaxDim = 1u << 20;
  if (h > kMaxDim) throw FormatError("implausible height", 4);
  if (w > kMaxDim) throw FormatError("implausible width", 8);
  if (c > kMaxDim) throw FormatError("implausible channel count", 12);
  const std::uint64_t count = static_cast<std::uint64_t>(h) * w * c;
  const std::uint64_t expected = 16 + 4 * count;
  if (bytes.size() < expected) {
    throw FormatError("tensor payload truncated", bytes.size() - (bytes.size() - 16) % 4);
  }
  if (bytes.size() > expected) throw FormatError("trailing bytes after tensor payload", expected);

  Tensor t(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
  auto values = t.values();
  for (std::uint64_t i = 0; i < count; ++i) {
    values[i] = static_cast<double>(std::bit_cast<float>(get_u32(&bytes[16 + 4 * i])));
  }
  return t;
}

std::vector<fs::path> save_samples(std::span<const FaceCrop> crops, const fs::path& dir) {
  std::vector<fs::path> paths;
  std::map<std::pair<std::string, std::size_t>, int> ordinal;
  for (const auto& crop : crops) {
    if (crop.image.empty() || crop.image.type() != CV_8UC3) {
      throw std::invalid_argument("save_samples: crop must be an 8-bit 3-channel image");
    }
    Tensor t(crop.image.rows, crop.image.cols, 3);
    for (int y = 0; y < crop.image.rows; ++y) {
      const auto* row = crop.image.ptr<std::uint8_t>(y);
      for (int x = 0; x < crop.image.cols; ++x)
        for (int ch = 0; ch < 3; ++ch)
          t(y, x, ch) = static_cast<double>(static_cast<float>(row[x * 3 + ch]) / 255.0f);
    }
    const int k = ordinal[{crop.source_id, crop.frame_index}]++;
    const fs::path path = dir / (crop.source_id.empty() ? "unknown" : crop.source_id) /
                          (std::to_string(crop.frame_index) + "_" + std::to_string(k) + ".flt");
    write_tensor(path, t);
    paths.push_back(path);
  }
  return paths;
}

Tensor load_sample(const fs::path& path) {
  Tensor t = read_tensor(path);
  if (t.height() != kCropSize || t.width() != kCropSize || t.channels() != 3) {
    throw FormatError("sample tensor is not 224x224x3", 4);
  }
  return t;
}

}  // namespace fakelens
