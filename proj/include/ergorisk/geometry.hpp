#pragma once

#include <array>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ergorisk/pose_io.hpp"

namespace ergorisk {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point2&) const = default;
};

enum class Region { neck, trunk, legs, upper_arm, lower_arm, wrist };
inline constexpr std::array<Region, 6> kAllRegions = {Region::neck,      Region::trunk,     Region::legs,
                                                      Region::upper_arm, Region::lower_arm, Region::wrist};
std::string_view region_name(Region r);
// Throws ConfigError on an unknown name.
Region region_from_name(std::string_view name);

enum class Side { left, right };

struct SidedAngle {
  double left = 0.0;
  double right = 0.0;
  double worst = 0.0;  // the side that ranks riskier; ties keep left
  Side worst_side = Side::left;
};

// All angles in degrees, in [0,180].
struct RegionAngles {
  double trunk = 0.0;  // inclination of shoulder-mid -> hip-mid from vertical
  double neck = 0.0;   // |inclination(ear-mid, shoulder-mid) - trunk|
  SidedAngle legs;     // knee flexion: 180 - angle(hip, knee, ankle)
  SidedAngle upper_arm;  // angle(hip, shoulder, elbow)
  SidedAngle lower_arm;  // angle(shoulder, elbow, wrist)
  SidedAngle wrist;      // |180 - angle(elbow, wrist, index)|
};

// Orders the two sides of a bilateral region; larger means riskier.
using SideRanker = std::function<double(Region, double degrees)>;

struct GeometryConfig {
  double epsilon = 1e-6;
  LandmarkIndexMap index_map{};
  // Empty ranker: the larger angle is treated as riskier.
  SideRanker ranker;
};

// Angle at b between b->a and b->c, via the clamped cosine. Throws
// DomainError naming `joint` when either vector has zero length.
double joint_angle(Point2 a, Point2 b, Point2 c, std::string_view joint = "joint");

// Deviation of the top->bottom segment from vertical:
// atan((|dx| + epsilon) / |dy|), and exactly 90 when dy is zero.
double inclination_angle(Point2 top, Point2 bottom, double epsilon);

Point2 midpoint(Point2 a, Point2 b);
// Throws MissingLandmarkError naming `region` when either slot is absent.
Point2 midpoint(const Skeleton& s, std::size_t i, std::size_t j, std::string_view region);

// Landmarks region_angles() reads.
std::vector<std::size_t> required_landmarks(const LandmarkIndexMap& map);

// Throws MissingLandmarkError listing every absent required landmark.
RegionAngles region_angles(const Skeleton& s, const GeometryConfig& cfg = {});

// Segments drawn for overlays and synthetic renders.
std::vector<std::pair<std::size_t, std::size_t>> skeleton_edges(const LandmarkIndexMap& map = {});

// Deterministic SVG of the landmarks and edges over the frame.
std::string overlay_svg(const Skeleton& s, const LandmarkIndexMap& map = {});

}  // namespace ergorisk
