#include "ergorisk/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "ergorisk/errors.hpp"
#include "ergorisk/text.hpp"

namespace ergorisk {
namespace {

constexpr double kDegPerRad = 180.0 / std::numbers::pi;

Point2 point(const Skeleton& s, std::size_t i) {
  const auto& lm = *s.landmarks[i];
  return {lm.x, lm.y};
}

SidedAngle sided(Region region, double left, double right, const SideRanker& ranker) {
  SidedAngle out{left, right, left, Side::left};
  const bool right_worse = ranker ? ranker(region, right) > ranker(region, left) : right > left;
  if (right_worse) {
    out.worst = right;
    out.worst_side = Side::right;
  }
  return out;
}

}  // namespace

std::string_view region_name(Region r) {
  switch (r) {
    case Region::neck: return "neck";
    case Region::trunk: return "trunk";
    case Region::legs: return "legs";
    case Region::upper_arm: return "upper_arm";
    case Region::lower_arm: return "lower_arm";
    case Region::wrist: return "wrist";
  }
  return "unknown";
}

Region region_from_name(std::string_view name) {
  for (const Region r : kAllRegions) {
    if (region_name(r) == name) return r;
  }
  throw ConfigError("unknown body region '" + std::string(name) + "'");
}

double joint_angle(Point2 a, Point2 b, Point2 c, std::string_view joint) {
  const double bax = a.x - b.x;
  const double bay = a.y - b.y;
  const double bcx = c.x - b.x;
  const double bcy = c.y - b.y;
  const double norm_ba = std::hypot(bax, bay);
  const double norm_bc = std::hypot(bcx, bcy);
  if (!(norm_ba > 0.0) || !(norm_bc > 0.0) || !std::isfinite(norm_ba) || !std::isfinite(norm_bc)) {
    throw DomainError("degenerate segment at " + std::string(joint) + ": zero-length vector");
  }
  // Same angle as arccos of the normalized dot product, without its loss of
  // precision near 0 and 180 degrees.
  const double cross = bax * bcy - bay * bcx;
  const double dot = bax * bcx + bay * bcy;
  return std::min(180.0, std::atan2(std::abs(cross), dot) * kDegPerRad);
}

double inclination_angle(Point2 top, Point2 bottom, double epsilon) {
  const double dx = std::abs(top.x - bottom.x);
  const double dy = std::abs(top.y - bottom.y);
  if (dy == 0.0) return 90.0;
  return std::atan((dx + epsilon) / dy) * kDegPerRad;
}

Point2 midpoint(Point2 a, Point2 b) { return {(a.x + b.x) / 2.0, (a.y + b.y) / 2.0}; }

Point2 midpoint(const Skeleton& s, std::size_t i, std::size_t j, std::string_view region) {
  for (const std::size_t k : {i, j}) {
    if (!s.has(k)) {
      throw MissingLandmarkError("missing " + landmark_name(k) + " (" + std::to_string(k) + ") for " +
                                 std::string(region));
    }
  }
  return midpoint(point(s, i), point(s, j));
}

std::vector<std::size_t> required_landmarks(const LandmarkIndexMap& m) {
  return {m.left_ear,   m.right_ear,   m.left_shoulder, m.right_shoulder, m.left_elbow, m.right_elbow,
          m.left_wrist, m.right_wrist, m.left_index,    m.right_index,    m.left_hip,   m.right_hip,
          m.left_knee,  m.right_knee,  m.left_ankle,    m.right_ankle};
}

RegionAngles region_angles(const Skeleton& s, const GeometryConfig& cfg) {
  if (!(cfg.epsilon > 0.0)) throw ConfigError("geometry epsilon must be positive");
  const auto& m = cfg.index_map;

  std::string missing;
  for (const std::size_t i : required_landmarks(m)) {
    if (!s.has(i)) {
      if (!missing.empty()) missing += ", ";
      missing += landmark_name(i) + " (" + std::to_string(i) + ")";
    }
  }
  if (!missing.empty()) {
    throw MissingLandmarkError("sample '" + s.id + "' rejected, missing landmarks: " + missing);
  }

  const auto p = [&](std::size_t i) { return point(s, i); };
  const Point2 shoulder_mid = midpoint(p(m.left_shoulder), p(m.right_shoulder));
  const Point2 hip_mid = midpoint(p(m.left_hip), p(m.right_hip));
  const Point2 ear_mid = midpoint(p(m.left_ear), p(m.right_ear));

  RegionAngles out;
  out.trunk = inclination_angle(shoulder_mid, hip_mid, cfg.epsilon);
  out.neck = std::abs(inclination_angle(ear_mid, shoulder_mid, cfg.epsilon) - out.trunk);

  out.legs = sided(Region::legs, 180.0 - joint_angle(p(m.left_hip), p(m.left_knee), p(m.left_ankle), "left knee"),
                   180.0 - joint_angle(p(m.right_hip), p(m.right_knee), p(m.right_ankle), "right knee"),
                   cfg.ranker);
  out.upper_arm =
      sided(Region::upper_arm, joint_angle(p(m.left_hip), p(m.left_shoulder), p(m.left_elbow), "left shoulder"),
            joint_angle(p(m.right_hip), p(m.right_shoulder), p(m.right_elbow), "right shoulder"), cfg.ranker);
  out.lower_arm =
      sided(Region::lower_arm, joint_angle(p(m.left_shoulder), p(m.left_elbow), p(m.left_wrist), "left elbow"),
            joint_angle(p(m.right_shoulder), p(m.right_elbow), p(m.right_wrist), "right elbow"), cfg.ranker);
  out.wrist = sided(Region::wrist,
                    std::abs(180.0 - joint_angle(p(m.left_elbow), p(m.left_wrist), p(m.left_index), "left wrist")),
                    std::abs(180.0 - joint_angle(p(m.right_elbow), p(m.right_wrist), p(m.right_index), "right wrist")),
                    cfg.ranker);
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> skeleton_edges(const LandmarkIndexMap& m) {
  return {
      {m.left_ear, m.nose},           {m.right_ear, m.nose},           {m.left_ear, m.left_shoulder},
      {m.right_ear, m.right_shoulder}, {m.left_shoulder, m.right_shoulder}, {m.left_shoulder, m.left_elbow},
      {m.left_elbow, m.left_wrist},   {m.left_wrist, m.left_index},     {m.right_shoulder, m.right_elbow},
      {m.right_elbow, m.right_wrist}, {m.right_wrist, m.right_index},   {m.left_shoulder, m.left_hip},
      {m.right_shoulder, m.right_hip}, {m.left_hip, m.right_hip},       {m.left_hip, m.left_knee},
      {m.left_knee, m.left_ankle},    {m.right_hip, m.right_knee},      {m.right_knee, m.right_ankle},
  };
}

std::string overlay_svg(const Skeleton& s, const LandmarkIndexMap& map) {
  if (s.image_width <= 0 || s.image_height <= 0) {
    throw ValueError("skeleton '" + s.id + "' has non-positive frame dimensions");
  }
  const double sx = s.space == CoordinateSpace::pixels ? 1.0 : static_cast<double>(s.image_width);
  const double sy = s.space == CoordinateSpace::pixels ? 1.0 : static_cast<double>(s.image_height);
  const auto fmt = [](double v) { return text::format_double(v); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << s.image_width << "\" height=\""
      << s.image_height << "\" viewBox=\"0 0 " << s.image_width << ' ' << s.image_height << "\">\n";
  svg << "<rect width=\"" << s.image_width << "\" height=\"" << s.image_height << "\" fill=\"white\"/>\n";
  for (const auto& [i, j] : skeleton_edges(map)) {
    if (!s.has(i) || !s.has(j)) continue;
    const auto& a = *s.landmarks[i];
    const auto& b = *s.landmarks[j];
    svg << "<line x1=\"" << fmt(a.x * sx) << "\" y1=\"" << fmt(a.y * sy) << "\" x2=\"" << fmt(b.x * sx)
        << "\" y2=\"" << fmt(b.y * sy) << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
  }
  for (std::size_t i = 0; i < kLandmarkCount; ++i) {
    if (!s.has(i)) continue;
    const auto& a = *s.landmarks[i];
    svg << "<circle cx=\"" << fmt(a.x * sx) << "\" cy=\"" << fmt(a.y * sy) << "\" r=\"3\" fill=\"red\"/>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace ergorisk
