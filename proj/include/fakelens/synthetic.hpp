#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <opencv2/core.hpp>

#include "fakelens/dataset.hpp"
#include "fakelens/random.hpp"
#include "fakelens/trainer.hpp"

namespace fakelens {

/// Synthetic stand-ins for face crops: a dark noisy background with one
/// square patch whose colour depends on the class. The patch is the only
/// class evidence, which makes the data separable and gives explainers a
/// known region to find.

/// Patch colour (BGR) for a class.
cv::Vec3b class_color(Label label);

struct PatchImage {
  cv::Mat image;  // size x size, 8-bit BGR
  Label label = Label::real;
  int quadrant = 0;  // 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right
  cv::Rect patch;
};

PatchImage make_patch_image(Label label, Rng& rng, int size = 224);

/// n_real + n_fake images, real first, all from one generator seeded with `seed`.
std::vector<PatchImage> make_patch_set(std::size_t n_real, std::size_t n_fake, std::uint64_t seed,
                                       int size = 224);

InMemorySource to_source(const std::vector<PatchImage>& images);

/// Quadrant of (y, x) in a height x width grid, numbered as in PatchImage.
int quadrant_of(int y, int x, int height, int width);

struct FixtureVideoSpec {
  int frames = 240;
  double fps = 30.0;
  int width = 256;
  int height = 160;
  std::vector<cv::Rect> faces{{16, 20, 104, 104}, {140, 36, 96, 96}};
  cv::Vec3b marker{0, 255, 0};  // outline colour read by MarkerFaceDetector
};

/// Writes a losslessly coded video (FFV1 in AVI) whose frames carry
/// marker-outlined "faces", each with a class-coloured patch. The patches
/// jump to new spots every 8-12 frames.
void write_fixture_video(const std::filesystem::path& path, Label label, std::uint64_t seed,
                         const FixtureVideoSpec& spec = {});

/// Creates <dir>/real/real_0.avi and <dir>/fake/fake_0.avi.
void write_fixture(const std::filesystem::path& dir, std::uint64_t seed = 0);

}  // namespace fakelens
