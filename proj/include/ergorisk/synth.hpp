#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ergorisk/geometry.hpp"
#include "ergorisk/pose_io.hpp"
#include "ergorisk/reba.hpp"
#include "ergorisk/rng.hpp"
#include "ergorisk/tensor.hpp"

namespace ergorisk::synth {

// Sampling ranges in degrees. Each bilateral region draws one base angle
// and a per-side offset in [-side_offset, side_offset], clamped to range.
struct AngleRanges {
  double trunk_max = 70.0;
  double neck_max = 60.0;
  // trunk + neck stays below this so the head segment never passes
  // horizontal, where inclination folds back.
  double head_tilt_max = 85.0;
  double knee_flexion_max = 100.0;
  double upper_arm_max = 150.0;
  double elbow_flexion_max = 150.0;
  double wrist_deviation_max = 40.0;
  double side_offset = 15.0;
};

// Figure in image coordinates (x right, y down), facing +x.
// Bilateral arrays are {left, right}.
struct FigureSpec {
  double trunk = 0.0;  // forward lean of hip-mid -> shoulder-mid from vertical
  double neck = 0.0;   // head flexion relative to the trunk
  std::array<double, 2> knee_flexion{};
  std::array<double, 2> upper_arm{};      // angle(hip, shoulder, elbow)
  std::array<double, 2> elbow_flexion{};  // 180 - angle(shoulder, elbow, wrist)
  std::array<double, 2> wrist_deviation{};

  // Segment lengths before fitting to the frame. Zero means "missing".
  double torso = 0.0;
  double neck_length = 0.0;
  double half_width = 0.0;  // shoulder and hip half-width
  double head_half_width = 0.0;
  double upper_arm_length = 0.0;
  double forearm_length = 0.0;
  double hand_length = 0.0;
  double thigh = 0.0;
  double shin = 0.0;

  // Placement: frame point = root + scale * body point, where the body
  // frame has the hip midpoint at the origin.
  double root_x = 0.5;
  double root_y = 0.5;
  double scale = 0.0;

  std::size_t canvas = 64;
  double stroke_radius = 1.0;  // pixels
};

// Proportions of an adult figure with every joint neutral, fitted to the
// frame.
FigureSpec neutral_figure(std::size_t canvas = 64);

// Random angles within `ranges`, nominal proportions jittered by +-10%,
// fitted so every landmark lies in [0.05, 0.95]^2.
FigureSpec sample_figure(Rng& rng, std::size_t canvas = 64, const AngleRanges& ranges = {});

// Sets root and scale so the figure's bounding box is centred and spans
// at most [margin, 1 - margin] on both axes.
void fit_to_frame(FigureSpec& spec, double margin = 0.05);

// Places the 17 mapped landmarks with visibility 1; other slots absent.
// Throws ValueError when a segment length or the scale is not positive, or
// a landmark falls outside [0,1]^2.
Skeleton figure_to_skeleton(const FigureSpec& spec, const std::string& id = "figure",
                            const LandmarkIndexMap& map = {});

// Planar 8-bit image, channel-major [3][size][size].
struct Image {
  std::size_t size = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(std::size_t channel, std::size_t row, std::size_t col) const {
    return pixels[(channel * size + row) * size + col];
  }
  bool operator==(const Image&) const = default;
};

inline constexpr std::uint8_t kBackground = 255;
inline constexpr std::uint8_t kInk = 0;

// Every skeleton edge drawn as ink where the distance from the pixel centre
// to the segment is at most spec.stroke_radius; no anti-aliasing. The three
// channels are identical. Throws like figure_to_skeleton.
Image render_stick_figure(const FigureSpec& spec, std::size_t size);

// Binary PPM (P6), maxval 255.
std::string encode_ppm(const Image& image);
void write_ppm(const std::filesystem::path& path, const Image& image);
// Accepts P6 with maxval 255 and square frames. Throws ParseError.
Image read_ppm(const std::filesystem::path& path);
Image decode_ppm(const std::string& bytes);

// [3,size,size] with values in [0,1].
template <typename T>
ad::Tensor<T> image_tensor(const Image& image);

struct ManifestEntry {
  std::string id;
  std::string image;  // path relative to the dataset directory
  int reba = 0;
  int class_label = 0;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  std::array<std::size_t, kNumRiskClasses> histogram{};  // index = class - 1
};

struct GenOptions {
  std::size_t image_size = 64;
  std::size_t threads = 1;
  AngleRanges ranges{};
};

// Sample i uses Rng(seed).split(i), so output does not depend on thread
// count. Writes into `out_dir`:
//   manifest.jsonl   {"id","image","reba","class"} per sample
//   skeletons.jsonl  landmark records
//   labels.jsonl     scoring results
//   images/<id>.ppm
//   summary.json     sample count, seed, image size, class histogram
Manifest gen_dataset(std::size_t n, std::uint64_t seed, const std::filesystem::path& out_dir,
                     const RebaConfig& reba = default_reba_config(), const GenOptions& options = {});

std::string sample_id(std::size_t index);

Manifest read_manifest(const std::filesystem::path& path);

}  // namespace ergorisk::synth
