#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ergorisk/geometry.hpp"
#include "ergorisk/pose_io.hpp"

namespace ergorisk {

inline constexpr int kNumRiskClasses = 8;

// [lower, upper) in degrees; the last band of a region also includes 180.
struct ScoreBand {
  double lower = 0.0;
  double upper = 180.0;
  int score = 1;
  bool operator==(const ScoreBand&) const = default;
};

struct ScoreThresholds {
  std::map<Region, std::vector<ScoreBand>> bands;

  // Bands must tile [0,180] without gaps or overlaps and carry scores in
  // the region's domain. Throws ConfigError.
  void validate() const;
  bool operator==(const ScoreThresholds&) const = default;
};

// Allowed region scores: trunk 1..4, neck 1..2, legs 1..3, upper arm 1..4,
// lower arm 1..2, wrist 1..2.
std::pair<int, int> region_score_domain(Region r);

// Group lookups, indexed with 1-based scores:
//   table_a[trunk 1..5][neck 1..3][legs 1..4]     -> 1..9
//   table_b[upper 1..6][lower 1..2][wrist 1..3]   -> 1..9
//   table_c[group A 1..12][group B 1..12]         -> 1..12
struct RebaTables {
  std::array<std::array<std::array<int, 4>, 3>, 5> table_a{};
  std::array<std::array<std::array<int, 3>, 2>, 6> table_b{};
  std::array<std::array<int, 12>, 12> table_c{};

  void validate() const;
  bool operator==(const RebaTables&) const = default;
};

struct RebaConfig {
  ScoreThresholds thresholds;
  RebaTables tables;
};

// Angle bands and lookup tables of the published REBA worksheet, with the
// load, coupling and activity modifiers at zero.
RebaConfig default_reba_config();

RebaConfig parse_reba_config(const std::string& json_text);
RebaConfig load_reba_config(const std::filesystem::path& path);
std::string reba_config_to_json(const RebaConfig& cfg);

struct RegionScores {
  int neck = 1;
  int trunk = 1;
  int legs = 1;
  int upper_arm = 1;
  int lower_arm = 1;
  int wrist = 1;
  bool operator==(const RegionScores&) const = default;
};

struct RebaResult {
  std::string id;
  RegionAngles angles;
  RegionScores scores;
  int g_a = 1;
  int g_b = 1;
  int s_reba = 1;
  int class_label = 1;  // min(s_reba, 8)
};

// Score of the band containing `degrees`. Throws DomainError for angles
// outside [0,180] and ConfigError when no band matches.
int score_region(double degrees, Region region, const ScoreThresholds& thresholds);

int group_a(int s_trunk, int s_neck, int s_legs, const RebaTables& t);
int group_b(int s_upper, int s_lower, int s_wrist, const RebaTables& t);
int group_c(int g_a, int g_b, const RebaTables& t);

inline int risk_class(int s_reba) { return s_reba < kNumRiskClasses ? s_reba : kNumRiskClasses; }

// Geometry -> region scores -> groups -> final score and class. Bilateral
// regions use the side with the higher score. Throws MissingLandmarkError
// when the skeleton lacks a required landmark.
RebaResult assess(const Skeleton& s, const GeometryConfig& cfg, const ScoreThresholds& thresholds,
                  const RebaTables& tables);
inline RebaResult assess(const Skeleton& s, const RebaConfig& cfg = default_reba_config()) {
  return assess(s, GeometryConfig{}, cfg.thresholds, cfg.tables);
}

// `{"id":...,"scores":{...},"gA":...,"gB":...,"reba":...,"class":...}`
std::string reba_result_to_json(const RebaResult& r);

struct AnnotationReject {
  std::string id;
  std::string reason;
};

struct AnnotationSummary {
  std::size_t total = 0;
  std::size_t accepted = 0;
  std::vector<AnnotationReject> rejects;
  std::array<std::size_t, kNumRiskClasses> histogram{};  // index = class - 1

  std::string to_json() const;
};

struct AnnotateOptions {
  double visibility_threshold = kDefaultVisibilityThreshold;
  GeometryConfig geometry{};
  std::size_t threads = 1;
};

// Labels every record of `input`. Parsing is all-or-nothing: a malformed
// line aborts before anything is written. Samples that fail geometry are
// listed in the summary instead of the output.
AnnotationSummary annotate_dataset(const std::filesystem::path& input, const std::filesystem::path& output,
                                   const RebaConfig& cfg, const AnnotateOptions& options = {});

// In-memory core of annotate_dataset; output lines are in input order.
AnnotationSummary annotate_skeletons(const std::vector<Skeleton>& skeletons, const RebaConfig& cfg,
                                     const AnnotateOptions& options, std::vector<std::string>& lines);

}  // namespace ergorisk
