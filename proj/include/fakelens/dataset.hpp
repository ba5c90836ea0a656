#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fakelens/media_ingest.hpp"
#include "fakelens/tensor.hpp"

namespace fakelens {

enum class Label { real = 0, fake = 1 };
inline constexpr std::array kLabels = {Label::real, Label::fake};

enum class Split { train, val, test, unassigned };

std::string_view to_string(Label label);
std::string_view to_string(Split split);
Label parse_label(std::string_view text);
Split parse_split(std::string_view text);

struct SampleRecord {
  std::string sample_id;
  Label label = Label::real;
  Split split = Split::unassigned;
  std::string tensor_path;
  std::string source_id;

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

struct DatasetManifest {
  std::vector<SampleRecord> records;

  std::map<Label, std::size_t> class_counts(Split split) const;
  std::vector<SampleRecord> in_split(Split split) const;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

/// One record per image file below `real_dir` and `fake_dir`. The sample id
/// is "<label>/<path relative to the class dir, without extension>"; the
/// source id is the name of the directory holding the file (the file stem
/// when it sits directly in the class dir). Either directory may be empty
/// but not both.
DatasetManifest build_manifest(const fs::path& real_dir, const fs::path& fake_dir);

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

/// Largest-remainder allocation of `count` items to the three ratios. Ties
/// in the fractional parts favour train, then val, then test.
std::array<std::size_t, 3> allocate_split(std::size_t count, const SplitRatios& ratios);

/// Shuffles each class with a generator seeded from `seed` and assigns the
/// per-class allocation from allocate_split. Records keep their order.
/// Throws std::invalid_argument if a class has fewer than 3 samples or the
/// ratios are not positive and summing to 1.
DatasetManifest stratified_split(const DatasetManifest& manifest, const SplitRatios& ratios,
                                 std::uint64_t seed);

/// JSON Lines, one record per line.
void write_manifest(const fs::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const fs::path& path);

/// Malformed tensor file. `offset` is the byte position where reading failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset);
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// Tensor file layout: 4-byte magic "FLT3", three little-endian uint32
/// dimensions (height, width, channels), then height*width*channels
/// little-endian float32 values in C order.
inline constexpr std::array<char, 4> kTensorMagic = {'F', 'L', 'T', '3'};

void write_tensor(const fs::path& path, const Tensor& tensor);
Tensor read_tensor(const fs::path& path);

/// Writes each crop as a tensor of v / 255 (computed in float32) to
/// `dir/<source_id>/<frame_index>_<k>.flt`, k counting crops that share a
/// source and frame. Returns the written paths in input order.
std::vector<fs::path> save_samples(std::span<const FaceCrop> crops, const fs::path& dir);

/// Reads a stored crop; requires a 224x224x3 tensor.
Tensor load_sample(const fs::path& path);

}  // namespace fakelens
