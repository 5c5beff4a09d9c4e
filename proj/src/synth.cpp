#include "ergorisk/synth.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numbers>
#include <optional>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "ergorisk/errors.hpp"

namespace ergorisk::synth {
namespace {

using ordered_json = nlohmann::ordered_json;

constexpr double kRadPerDeg = std::numbers::pi / 180.0;

struct Vec {
  double x = 0.0;
  double y = 0.0;
};

Vec operator+(Vec a, Vec b) { return {a.x + b.x, a.y + b.y}; }
Vec operator*(double s, Vec v) { return {s * v.x, s * v.y}; }
Vec operator-(Vec v) { return {-v.x, -v.y}; }

Vec rotate(Vec v, double degrees) {
  const double c = std::cos(degrees * kRadPerDeg);
  const double s = std::sin(degrees * kRadPerDeg);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

constexpr Vec kUp{0.0, -1.0};
constexpr Vec kDown{0.0, 1.0};

// Landmark positions in the body frame (hip midpoint at the origin).
struct BodyPoints {
  Vec nose;
  std::array<Vec, 2> ear, shoulder, elbow, wrist, index, hip, knee, ankle;
};

void require_segments(const FigureSpec& s) {
  const double lengths[] = {s.torso,           s.neck_length,    s.half_width, s.head_half_width, s.upper_arm_length,
                            s.forearm_length,  s.hand_length,    s.thigh,      s.shin};
  for (const double len : lengths) {
    if (!(len > 0.0) || !std::isfinite(len)) {
      throw ValueError("figure spec is missing a segment: every segment length must be positive");
    }
  }
}

BodyPoints body_points(const FigureSpec& s) {
  require_segments(s);
  BodyPoints p;
  const Vec trunk_dir = rotate(kUp, s.trunk);
  const Vec trunk_perp = rotate(trunk_dir, 90.0);
  const Vec shoulder_mid = s.torso * trunk_dir;

  const Vec head_dir = rotate(kUp, s.trunk + s.neck);
  const Vec head_perp = rotate(head_dir, 90.0);
  const Vec ear_mid = shoulder_mid + s.neck_length * head_dir;
  p.nose = ear_mid + s.head_half_width * head_dir;

  for (int side = 0; side < 2; ++side) {
    const double sign = side == 0 ? -1.0 : 1.0;
    p.ear[side] = ear_mid + (sign * s.head_half_width) * head_perp;
    p.hip[side] = (sign * s.half_width) * trunk_perp;
    p.shoulder[side] = shoulder_mid + (sign * s.half_width) * trunk_perp;

    // Shoulder -> hip is antiparallel to the trunk; rotate away from it.
    const Vec arm_dir = rotate(-trunk_dir, -s.upper_arm[side]);
    p.elbow[side] = p.shoulder[side] + s.upper_arm_length * arm_dir;
    const Vec forearm_dir = rotate(arm_dir, -s.elbow_flexion[side]);
    p.wrist[side] = p.elbow[side] + s.forearm_length * forearm_dir;
    const Vec hand_dir = rotate(forearm_dir, -s.wrist_deviation[side]);
    p.index[side] = p.wrist[side] + s.hand_length * hand_dir;

    const Vec thigh_dir = rotate(kDown, -0.5 * s.knee_flexion[side]);
    p.knee[side] = p.hip[side] + s.thigh * thigh_dir;
    const Vec shin_dir = rotate(thigh_dir, s.knee_flexion[side]);
    p.ankle[side] = p.knee[side] + s.shin * shin_dir;
  }
  return p;
}

std::vector<Vec> all_points(const BodyPoints& p) {
  std::vector<Vec> v{p.nose};
  for (int side = 0; side < 2; ++side) {
    for (const Vec q : {p.ear[side], p.shoulder[side], p.elbow[side], p.wrist[side], p.index[side], p.hip[side],
                        p.knee[side], p.ankle[side]}) {
      v.push_back(q);
    }
  }
  return v;
}

double clamp_side(double base, double offset, double hi) { return std::clamp(base + offset, 0.0, hi); }

std::array<double, 2> sided(Rng& rng, double hi, double offset) {
  const double base = rng.uniform(0.0, hi);
  const double left = clamp_side(base, rng.uniform(-offset, offset), hi);
  const double right = clamp_side(base, rng.uniform(-offset, offset), hi);
  return {left, right};
}

double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double dx = bx - ax;
  const double dy = by - ay;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(px - (ax + t * dx), py - (ay + t * dy));
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

FigureSpec neutral_figure(std::size_t canvas) {
  FigureSpec s;
  s.torso = 1.0;
  s.neck_length = 0.35;
  s.half_width = 0.22;
  s.head_half_width = 0.08;
  s.upper_arm_length = 0.6;
  s.forearm_length = 0.5;
  s.hand_length = 0.18;
  s.thigh = 0.9;
  s.shin = 0.85;
  s.canvas = canvas;
  fit_to_frame(s);
  return s;
}

FigureSpec sample_figure(Rng& rng, std::size_t canvas, const AngleRanges& r) {
  FigureSpec s = neutral_figure(canvas);
  s.trunk = rng.uniform(0.0, r.trunk_max);
  s.neck = rng.uniform(0.0, std::min(r.neck_max, r.head_tilt_max - s.trunk));
  s.knee_flexion = sided(rng, r.knee_flexion_max, r.side_offset);
  s.upper_arm = sided(rng, r.upper_arm_max, r.side_offset);
  s.elbow_flexion = sided(rng, r.elbow_flexion_max, r.side_offset);
  s.wrist_deviation = sided(rng, r.wrist_deviation_max, r.side_offset);
  for (double* len : {&s.torso, &s.neck_length, &s.half_width, &s.head_half_width, &s.upper_arm_length,
                      &s.forearm_length, &s.hand_length, &s.thigh, &s.shin}) {
    *len *= rng.uniform(0.9, 1.1);
  }
  fit_to_frame(s);
  return s;
}

void fit_to_frame(FigureSpec& spec, double margin) {
  if (!(margin >= 0.0 && margin < 0.5)) throw ConfigError("frame margin must lie in [0, 0.5)");
  const auto pts = all_points(body_points(spec));
  double lo_x = pts[0].x, hi_x = pts[0].x, lo_y = pts[0].y, hi_y = pts[0].y;
  for (const Vec p : pts) {
    lo_x = std::min(lo_x, p.x);
    hi_x = std::max(hi_x, p.x);
    lo_y = std::min(lo_y, p.y);
    hi_y = std::max(hi_y, p.y);
  }
  const double extent = std::max(hi_x - lo_x, hi_y - lo_y);
  spec.scale = (1.0 - 2.0 * margin) / extent;
  spec.root_x = 0.5 - spec.scale * 0.5 * (lo_x + hi_x);
  spec.root_y = 0.5 - spec.scale * 0.5 * (lo_y + hi_y);
}

Skeleton figure_to_skeleton(const FigureSpec& spec, const std::string& id, const LandmarkIndexMap& m) {
  if (!(spec.scale > 0.0)) throw ValueError("figure spec has no placement (scale must be positive)");
  if (spec.canvas == 0) throw ValueError("figure spec has an empty canvas");
  const BodyPoints p = body_points(spec);
  Skeleton s;
  s.id = id;
  s.image_width = static_cast<int>(spec.canvas);
  s.image_height = static_cast<int>(spec.canvas);
  const auto place = [&](std::size_t index, Vec q) {
    const double x = spec.root_x + spec.scale * q.x;
    const double y = spec.root_y + spec.scale * q.y;
    if (!(x >= 0.0 && x <= 1.0 && y >= 0.0 && y <= 1.0)) {
      throw ValueError("figure landmark " + landmark_name(index) + " falls outside the unit frame");
    }
    s.landmarks[index] = Landmark{x, y, 1.0};
  };
  place(m.nose, p.nose);
  place(m.left_ear, p.ear[0]);
  place(m.right_ear, p.ear[1]);
  place(m.left_shoulder, p.shoulder[0]);
  place(m.right_shoulder, p.shoulder[1]);
  place(m.left_elbow, p.elbow[0]);
  place(m.right_elbow, p.elbow[1]);
  place(m.left_wrist, p.wrist[0]);
  place(m.right_wrist, p.wrist[1]);
  place(m.left_index, p.index[0]);
  place(m.right_index, p.index[1]);
  place(m.left_hip, p.hip[0]);
  place(m.right_hip, p.hip[1]);
  place(m.left_knee, p.knee[0]);
  place(m.right_knee, p.knee[1]);
  place(m.left_ankle, p.ankle[0]);
  place(m.right_ankle, p.ankle[1]);
  return s;
}

Image render_stick_figure(const FigureSpec& spec, std::size_t size) {
  if (size == 0) throw ValueError("render size must be positive");
  if (!(spec.stroke_radius > 0.0)) throw ValueError("stroke radius must be positive");
  const Skeleton s = figure_to_skeleton(spec);
  Image img;
  img.size = size;
  img.pixels.assign(3 * size * size, kBackground);
  const double scale = static_cast<double>(size);
  const double r = spec.stroke_radius;
  for (const auto& [i, j] : skeleton_edges()) {
    const double ax = s.landmarks[i]->x * scale;
    const double ay = s.landmarks[i]->y * scale;
    const double bx = s.landmarks[j]->x * scale;
    const double by = s.landmarks[j]->y * scale;
    const auto lo = [&](double a, double b) {
      return static_cast<std::size_t>(std::max(0.0, std::floor(std::min(a, b) - r - 1.0)));
    };
    const auto hi = [&](double a, double b) {
      return std::min(size - 1, static_cast<std::size_t>(std::max(0.0, std::ceil(std::max(a, b) + r + 1.0))));
    };
    for (std::size_t row = lo(ay, by); row <= hi(ay, by); ++row) {
      for (std::size_t col = lo(ax, bx); col <= hi(ax, bx); ++col) {
        const double d = segment_distance(static_cast<double>(col) + 0.5, static_cast<double>(row) + 0.5, ax, ay, bx, by);
        if (d <= r) {
          for (std::size_t c = 0; c < 3; ++c) img.pixels[(c * size + row) * size + col] = kInk;
        }
      }
    }
  }
  return img;
}

std::string encode_ppm(const Image& image) {
  const std::size_t n = image.size;
  if (image.pixels.size() != 3 * n * n) throw ShapeError("image buffer does not hold 3 x size x size bytes");
  std::string out = "P6\n" + std::to_string(n) + " " + std::to_string(n) + "\n255\n";
  out.reserve(out.size() + 3 * n * n);
  for (std::size_t row = 0; row < n; ++row) {
    for (std::size_t col = 0; col < n; ++col) {
      for (std::size_t c = 0; c < 3; ++c) out.push_back(static_cast<char>(image.at(c, row, col)));
    }
  }
  return out;
}

void write_ppm(const std::filesystem::path& path, const Image& image) { write_text(path, encode_ppm(image)); }

Image decode_ppm(const std::string& bytes) {
  std::size_t pos = 0;
  const auto next_token = [&]() -> std::string {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };
  if (next_token() != "P6") throw ParseError("not a binary PPM (expected P6 magic)", 1);
  long long w = 0, h = 0, maxval = 0;
  const std::string ws = next_token(), hs = next_token(), ms = next_token();
  try {
    w = std::stoll(ws);
    h = std::stoll(hs);
    maxval = std::stoll(ms);
  } catch (const std::exception&) {
    throw ParseError("malformed PPM header", 1);
  }
  if (w <= 0 || w != h) throw ParseError("PPM frame must be square and non-empty", 1);
  if (maxval != 255) throw ParseError("PPM maxval must be 255", 1);
  ++pos;  // single whitespace before the raster
  const std::size_t n = static_cast<std::size_t>(w);
  if (bytes.size() < pos + 3 * n * n) throw ParseError("PPM raster is truncated", 1);
  Image img;
  img.size = n;
  img.pixels.resize(3 * n * n);
  for (std::size_t row = 0; row < n; ++row) {
    for (std::size_t col = 0; col < n; ++col) {
      for (std::size_t c = 0; c < 3; ++c) {
        img.pixels[(c * n + row) * n + col] = static_cast<std::uint8_t>(bytes[pos + (row * n + col) * 3 + c]);
      }
    }
  }
  return img;
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_ppm(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.line());
  }
}

template <typename T>
ad::Tensor<T> image_tensor(const Image& image) {
  std::vector<T> values(image.pixels.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<T>(image.pixels[i]) / static_cast<T>(255);
  return ad::Tensor<T>({3, image.size, image.size}, std::move(values));
}

template ad::Tensor<float> image_tensor<float>(const Image&);
template ad::Tensor<double> image_tensor<double>(const Image&);

std::string sample_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%06zu", index);
  return buf;
}

Manifest gen_dataset(std::size_t n, std::uint64_t seed, const std::filesystem::path& out_dir, const RebaConfig& reba,
                     const GenOptions& options) {
  if (options.image_size == 0) throw ConfigError("image size must be positive");
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "images").string() + ": " + ec.message());

  struct Sample {
    Skeleton skeleton;
    RebaResult result;
    Image image;
  };
  std::vector<std::optional<Sample>> samples(n);
  const Rng root(seed);
  const auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      Rng rng = root.split(i);
      const FigureSpec spec = sample_figure(rng, options.image_size, options.ranges);
      Sample s;
      s.skeleton = figure_to_skeleton(spec, sample_id(i));
      s.result = assess(s.skeleton, reba);
      s.image = render_stick_figure(spec, options.image_size);
      samples[i] = std::move(s);
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(options.threads, n));
  if (threads == 1) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + threads - 1) / threads;
    std::vector<std::exception_ptr> errors(threads);
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          work(std::min(n, t * chunk), std::min(n, (t + 1) * chunk));
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  Manifest manifest;
  std::string manifest_text, skeleton_text, label_text;
  for (std::size_t i = 0; i < n; ++i) {
    const Sample& s = *samples[i];
    ManifestEntry e{s.skeleton.id, "images/" + s.skeleton.id + ".ppm", s.result.s_reba, s.result.class_label};
    write_ppm(out_dir / e.image, s.image);
    ordered_json line;
    line["id"] = e.id;
    line["image"] = e.image;
    line["reba"] = e.reba;
    line["class"] = e.class_label;
    manifest_text += line.dump() + "\n";
    skeleton_text += to_jsonl(s.skeleton) + "\n";
    label_text += reba_result_to_json(s.result) + "\n";
    manifest.histogram[static_cast<std::size_t>(e.class_label - 1)] += 1;
    manifest.entries.push_back(std::move(e));
  }
  write_text(out_dir / "manifest.jsonl", manifest_text);
  write_text(out_dir / "skeletons.jsonl", skeleton_text);
  write_text(out_dir / "labels.jsonl", label_text);

  ordered_json summary;
  summary["n"] = n;
  summary["seed"] = seed;
  summary["image_size"] = options.image_size;
  ordered_json hist = ordered_json::object();
  for (std::size_t c = 0; c < manifest.histogram.size(); ++c) hist[std::to_string(c + 1)] = manifest.histogram[c];
  summary["histogram"] = std::move(hist);
  write_text(out_dir / "summary.json", summary.dump(2) + "\n");
  return manifest;
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  Manifest m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = ordered_json::parse(line);
      ManifestEntry e{j.at("id").get<std::string>(), j.at("image").get<std::string>(), j.at("reba").get<int>(),
                      j.at("class").get<int>()};
      if (e.class_label < 1 || e.class_label > kNumRiskClasses) {
        throw ParseError("class " + std::to_string(e.class_label) + " outside 1..8", lineno);
      }
      m.histogram[static_cast<std::size_t>(e.class_label - 1)] += 1;
      m.entries.push_back(std::move(e));
    } catch (const ordered_json::exception& e) {
      throw ParseError(path.string() + ": " + e.what(), lineno);
    }
  }
  return m;
}

}  // namespace ergorisk::synth
