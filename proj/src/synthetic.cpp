#include "fakelens/synthetic.hpp"

#include <algorithm>
#include <stdexcept>

#include <opencv2/imgproc.hpp>
#include <opencv2/videoio.hpp>

#include "fakelens/image_ops.hpp"

namespace fakelens {
namespace {

unsigned char jitter(unsigned char base, int spread, Rng& rng) {
  const int v = base + static_cast<int>(rng.below(2 * spread + 1)) - spread;
  return static_cast<unsigned char>(std::clamp(v, 0, 255));
}

void fill_background(cv::Mat& img, Rng& rng) {
  for (int y = 0; y < img.rows; ++y) {
    for (int x = 0; x < img.cols; ++x) {
      cv::Vec3b& px = img.at<cv::Vec3b>(y, x);
      for (int c = 0; c < 3; ++c) px[c] = static_cast<unsigned char>(10 + rng.below(21));
    }
  }
}

void paint_patch(cv::Mat& img, const cv::Rect& r, Label label, Rng& rng) {
  const cv::Vec3b base = class_color(label);
  for (int y = r.y; y < r.y + r.height; ++y) {
    for (int x = r.x; x < r.x + r.width; ++x) {
      cv::Vec3b& px = img.at<cv::Vec3b>(y, x);
      for (int c = 0; c < 3; ++c) px[c] = jitter(base[c], 12, rng);
    }
  }
}

}  // namespace

cv::Vec3b class_color(Label label) {
  return label == Label::real ? cv::Vec3b(210, 90, 40) : cv::Vec3b(40, 90, 210);
}

int quadrant_of(int y, int x, int height, int width) {
  return (y >= height / 2 ? 2 : 0) + (x >= width / 2 ? 1 : 0);
}

PatchImage make_patch_image(Label label, Rng& rng, int size) {
  if (size < 16) throw std::invalid_argument("make_patch_image: size must be >= 16");
  PatchImage out;
  out.label = label;
  out.image = cv::Mat(size, size, CV_8UC3);
  fill_background(out.image, rng);

  const int half = size / 2;
  const int side = size / 4;
  out.quadrant = static_cast<int>(rng.below(4));
  const int qy = (out.quadrant / 2) * half;
  const int qx = (out.quadrant % 2) * half;
  const int slack = half - side;
  const int y0 = qy + static_cast<int>(rng.below(static_cast<std::uint64_t>(slack) + 1));
  const int x0 = qx + static_cast<int>(rng.below(static_cast<std::uint64_t>(slack) + 1));
  out.patch = cv::Rect(x0, y0, side, side);
  paint_patch(out.image, out.patch, label, rng);
  return out;
}

std::vector<PatchImage> make_patch_set(std::size_t n_real, std::size_t n_fake, std::uint64_t seed,
                                       int size) {
  Rng rng(seed);
  std::vector<PatchImage> out;
  out.reserve(n_real + n_fake);
  for (std::size_t i = 0; i < n_real; ++i) out.push_back(make_patch_image(Label::real, rng, size));
  for (std::size_t i = 0; i < n_fake; ++i) out.push_back(make_patch_image(Label::fake, rng, size));
  return out;
}

InMemorySource to_source(const std::vector<PatchImage>& images) {
  InMemorySource src;
  for (const auto& p : images) src.add(to_tensor(p.image), p.label);
  return src;
}

void write_fixture_video(const std::filesystem::path& path, Label label, std::uint64_t seed,
                         const FixtureVideoSpec& spec) {
  if (spec.frames < 3) throw std::invalid_argument("fixture video needs at least 3 frames");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  cv::VideoWriter writer(path.string(), cv::CAP_FFMPEG, cv::VideoWriter::fourcc('F', 'F', 'V', '1'),
                         spec.fps, cv::Size(spec.width, spec.height));
  if (!writer.isOpened()) throw std::runtime_error("cannot open video writer for " + path.string());

  Rng rng(seed);
  cv::Mat background(spec.height, spec.width, CV_8UC3);
  fill_background(background, rng);

  std::vector<cv::Rect> patches(spec.faces.size());
  int next_jump = 0;
  for (int f = 0; f < spec.frames; ++f) {
    if (f == next_jump) {
      for (std::size_t k = 0; k < spec.faces.size(); ++k) {
        const cv::Rect& face = spec.faces[k];
        const int side = face.width * 2 / 5;
        const auto room_y = static_cast<std::uint64_t>(face.height - side - 3);
        const auto room_x = static_cast<std::uint64_t>(face.width - side - 3);
        patches[k] = cv::Rect(face.x + 2 + static_cast<int>(rng.below(room_x)),
                              face.y + 2 + static_cast<int>(rng.below(room_y)), side, side);
      }
      next_jump = f + 8 + static_cast<int>(rng.below(5));
    }
    cv::Mat frame = background.clone();
    Rng paint(seed * 1000003ULL + static_cast<std::uint64_t>(next_jump));
    for (std::size_t k = 0; k < spec.faces.size(); ++k) {
      paint_patch(frame, patches[k], label, paint);
      cv::rectangle(frame, spec.faces[k], cv::Scalar(spec.marker[0], spec.marker[1], spec.marker[2]), 1);
    }
    writer.write(frame);
  }
  writer.release();
}

void write_fixture(const std::filesystem::path& dir, std::uint64_t seed) {
  write_fixture_video(dir / "real" / "real_0.avi", Label::real, seed);
  write_fixture_video(dir / "fake" / "fake_0.avi", Label::fake, seed + 1);
}

}  // namespace fakelens
