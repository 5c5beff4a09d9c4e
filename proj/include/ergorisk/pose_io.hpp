#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ergorisk {

inline constexpr std::size_t kLandmarkCount = 33;
inline constexpr double kDefaultVisibilityThreshold = 0.5;

struct Landmark {
  double x = 0.0;
  double y = 0.0;
  double v = 0.0;  // visibility confidence

  bool operator==(const Landmark&) const = default;
};

enum class CoordinateSpace { normalized, pixels };

// One subject's 33-slot landmark set. Absent slots are explicit; there are
// no sentinel coordinates.
struct Skeleton {
  std::string id;
  int image_width = 0;
  int image_height = 0;
  std::array<std::optional<Landmark>, kLandmarkCount> landmarks{};
  CoordinateSpace space = CoordinateSpace::normalized;

  bool has(std::size_t index) const { return index < kLandmarkCount && landmarks[index].has_value(); }
  std::size_t present_count() const;

  bool operator==(const Skeleton&) const = default;
};

// Indices of the landmarks the ergonomic pipeline consults, in the standard
// 33-point body topology.
struct LandmarkIndexMap {
  std::size_t nose = 0;
  std::size_t left_ear = 7;
  std::size_t right_ear = 8;
  std::size_t left_shoulder = 11;
  std::size_t right_shoulder = 12;
  std::size_t left_elbow = 13;
  std::size_t right_elbow = 14;
  std::size_t left_wrist = 15;
  std::size_t right_wrist = 16;
  std::size_t left_index = 19;
  std::size_t right_index = 20;
  std::size_t left_hip = 23;
  std::size_t right_hip = 24;
  std::size_t left_knee = 25;
  std::size_t right_knee = 26;
  std::size_t left_ankle = 27;
  std::size_t right_ankle = 28;

  std::array<std::size_t, 17> all() const;
  // Throws ConfigError on duplicates or indices outside 0..32.
  void validate() const;
};

// Human-readable name of a topology index ("left_hip", "landmark_3", ...).
std::string landmark_name(std::size_t index);

enum class PoseFormat { jsonl, csv };

// ".csv" selects CSV, anything else JSONL.
PoseFormat format_from_path(const std::filesystem::path& path);

// Parses every record, preserving order. No visibility filtering.
// Throws ParseError (malformed line), SchemaError (wrong shape, e.g. a
// landmark count other than 33) or ValueError (non-finite or out-of-range
// value). All messages carry the 1-based line number.
std::vector<Skeleton> parse_landmark_file(const std::filesystem::path& path, PoseFormat format);
std::vector<Skeleton> parse_landmark_stream(std::istream& in, PoseFormat format);

Skeleton parse_jsonl_record(std::string_view line, std::size_t line_number = 1);

// Absent slots serialize as `null` (JSONL) or three empty fields (CSV).
std::string to_jsonl(const Skeleton& s);
std::string csv_header();
std::string to_csv_row(const Skeleton& s);
void write_landmark_file(const std::filesystem::path& path, const std::vector<Skeleton>& skeletons,
                         PoseFormat format);

// Slots whose visibility is below `threshold` become absent.
Skeleton filter_visibility(const Skeleton& s, double threshold = kDefaultVisibilityThreshold);

// Scales present landmarks by the frame size. Throws ValueError when the
// frame dimensions are not positive or the skeleton is already in pixels.
Skeleton rescale_to_pixels(const Skeleton& s);

}  // namespace ergorisk
