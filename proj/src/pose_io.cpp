#include "ergorisk/pose_io.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ergorisk/errors.hpp"
#include "ergorisk/text.hpp"

namespace ergorisk {
namespace {

using ordered_json = nlohmann::ordered_json;

std::string at_line(std::size_t line, const std::string& what) {
  return "line " + std::to_string(line) + ": " + what;
}

void check_component(double value, const char* field, std::size_t slot, std::size_t line) {
  if (!std::isfinite(value)) {
    throw ValueError(at_line(line, std::string("non-finite ") + field + " in landmark " + std::to_string(slot)));
  }
  if (value < 0.0 || value > 1.0) {
    throw ValueError(at_line(line, std::string(field) + " of landmark " + std::to_string(slot) +
                                       " outside [0,1]: " + text::format_double(value)));
  }
}

Landmark checked_landmark(double x, double y, double v, std::size_t slot, std::size_t line) {
  check_component(x, "x", slot, line);
  check_component(y, "y", slot, line);
  check_component(v, "v", slot, line);
  return {x, y, v};
}

int checked_dimension(long long value, const char* field, std::size_t line) {
  if (value <= 0 || value > 1'000'000) {
    throw SchemaError(at_line(line, std::string("image dimension '") + field + "' must be a positive integer"));
  }
  return static_cast<int>(value);
}

std::vector<Skeleton> parse_csv(std::istream& in) {
  std::vector<Skeleton> out;
  std::string line;
  std::size_t line_number = 0;
  const std::string expected_header = csv_header();
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty()) continue;
    if (!header_seen) {
      if (line != expected_header) throw SchemaError(at_line(line_number, "unexpected CSV header"));
      header_seen = true;
      continue;
    }
    const auto fields = text::split(line, ',');
    if (fields.size() != 3 + 3 * kLandmarkCount) {
      throw SchemaError(at_line(line_number, "expected " + std::to_string(3 + 3 * kLandmarkCount) +
                                                 " fields, found " + std::to_string(fields.size())));
    }
    Skeleton s;
    s.id = std::string(fields[0]);
    long long w = 0;
    long long h = 0;
    if (!text::parse_int(fields[1], w) || !text::parse_int(fields[2], h)) {
      throw ParseError("image dimensions are not integers", line_number);
    }
    s.image_width = checked_dimension(w, "w", line_number);
    s.image_height = checked_dimension(h, "h", line_number);
    for (std::size_t i = 0; i < kLandmarkCount; ++i) {
      const auto fx = text::trim(fields[3 + 3 * i]);
      const auto fy = text::trim(fields[4 + 3 * i]);
      const auto fv = text::trim(fields[5 + 3 * i]);
      if (fx.empty() && fy.empty() && fv.empty()) continue;
      double x = 0.0;
      double y = 0.0;
      double v = 0.0;
      if (!text::parse_double(fx, x) || !text::parse_double(fy, y) || !text::parse_double(fv, v)) {
        throw ParseError("landmark " + std::to_string(i) + " is not numeric", line_number);
      }
      s.landmarks[i] = checked_landmark(x, y, v, i, line_number);
    }
    out.push_back(std::move(s));
  }
  if (!header_seen && line_number > 0) throw SchemaError("CSV input has no header");
  return out;
}

std::vector<Skeleton> parse_jsonl(std::istream& in) {
  std::vector<Skeleton> out;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (text::trim(line).empty()) continue;
    out.push_back(parse_jsonl_record(line, line_number));
  }
  return out;
}

}  // namespace

std::size_t Skeleton::present_count() const {
  std::size_t n = 0;
  for (const auto& slot : landmarks) n += slot.has_value() ? 1 : 0;
  return n;
}

std::array<std::size_t, 17> LandmarkIndexMap::all() const {
  return {nose,       left_ear,    right_ear,   left_shoulder, right_shoulder, left_elbow,
          right_elbow, left_wrist, right_wrist, left_index,    right_index,    left_hip,
          right_hip,  left_knee,   right_knee,  left_ankle,    right_ankle};
}

void LandmarkIndexMap::validate() const {
  std::set<std::size_t> seen;
  for (const std::size_t i : all()) {
    if (i >= kLandmarkCount) throw ConfigError("landmark index " + std::to_string(i) + " outside 0..32");
    if (!seen.insert(i).second) throw ConfigError("landmark index " + std::to_string(i) + " mapped twice");
  }
}

std::string landmark_name(std::size_t index) {
  static constexpr std::array<const char*, kLandmarkCount> names = {
      "nose",           "left_eye_inner", "left_eye",    "left_eye_outer", "right_eye_inner",
      "right_eye",      "right_eye_outer", "left_ear",   "right_ear",      "mouth_left",
      "mouth_right",    "left_shoulder",  "right_shoulder", "left_elbow",  "right_elbow",
      "left_wrist",     "right_wrist",    "left_pinky",  "right_pinky",    "left_index",
      "right_index",    "left_thumb",     "right_thumb", "left_hip",       "right_hip",
      "left_knee",      "right_knee",     "left_ankle",  "right_ankle",    "left_heel",
      "right_heel",     "left_foot_index", "right_foot_index"};
  if (index < kLandmarkCount) return names[index];
  return "landmark_" + std::to_string(index);
}

PoseFormat format_from_path(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? PoseFormat::csv : PoseFormat::jsonl;
}

Skeleton parse_jsonl_record(std::string_view line, std::size_t line_number) {
  ordered_json record;
  try {
    record = ordered_json::parse(line.begin(), line.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what(), line_number);
  }
  if (!record.is_object()) throw SchemaError(at_line(line_number, "record is not a JSON object"));
  for (const char* key : {"id", "w", "h", "lm"}) {
    if (!record.contains(key)) throw SchemaError(at_line(line_number, std::string("missing key '") + key + "'"));
  }

  Skeleton s;
  const auto& id = record["id"];
  if (id.is_string()) {
    s.id = id.get<std::string>();
  } else if (id.is_number_integer()) {
    s.id = id.dump();
  } else {
    throw SchemaError(at_line(line_number, "'id' must be a string"));
  }
  if (!record["w"].is_number_integer() || !record["h"].is_number_integer()) {
    throw SchemaError(at_line(line_number, "'w' and 'h' must be integers"));
  }
  s.image_width = checked_dimension(record["w"].get<long long>(), "w", line_number);
  s.image_height = checked_dimension(record["h"].get<long long>(), "h", line_number);

  const auto& lm = record["lm"];
  if (!lm.is_array()) throw SchemaError(at_line(line_number, "'lm' must be an array"));
  if (lm.size() != kLandmarkCount) {
    throw SchemaError(at_line(line_number, "expected 33 landmarks, found " + std::to_string(lm.size())));
  }
  for (std::size_t i = 0; i < kLandmarkCount; ++i) {
    const auto& triple = lm[i];
    if (triple.is_null()) continue;
    if (!triple.is_array() || triple.size() != 3) {
      throw SchemaError(at_line(line_number, "landmark " + std::to_string(i) + " is not an [x,y,v] triple"));
    }
    for (const auto& component : triple) {
      if (!component.is_number()) {
        throw SchemaError(at_line(line_number, "landmark " + std::to_string(i) + " has a non-numeric component"));
      }
    }
    s.landmarks[i] = checked_landmark(triple[0].get<double>(), triple[1].get<double>(), triple[2].get<double>(),
                                      i, line_number);
  }
  return s;
}

std::vector<Skeleton> parse_landmark_stream(std::istream& in, PoseFormat format) {
  return format == PoseFormat::csv ? parse_csv(in) : parse_jsonl(in);
}

std::vector<Skeleton> parse_landmark_file(const std::filesystem::path& path, PoseFormat format) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open landmark file " + path.string());
  return parse_landmark_stream(in, format);
}

std::string to_jsonl(const Skeleton& s) {
  ordered_json record;
  record["id"] = s.id;
  record["w"] = s.image_width;
  record["h"] = s.image_height;
  ordered_json lm = ordered_json::array();
  for (const auto& slot : s.landmarks) {
    if (slot) {
      lm.push_back(ordered_json::array({slot->x, slot->y, slot->v}));
    } else {
      lm.push_back(nullptr);
    }
  }
  record["lm"] = std::move(lm);
  return record.dump();
}

std::string csv_header() {
  std::string header = "id,w,h";
  for (std::size_t i = 0; i < kLandmarkCount; ++i) {
    const auto n = std::to_string(i);
    header += ",x" + n + ",y" + n + ",v" + n;
  }
  return header;
}

std::string to_csv_row(const Skeleton& s) {
  if (s.id.find_first_of(",\n\r") != std::string::npos) {
    throw ValueError("skeleton id '" + s.id + "' cannot be written to CSV");
  }
  std::ostringstream row;
  row << s.id << ',' << s.image_width << ',' << s.image_height;
  for (const auto& slot : s.landmarks) {
    if (slot) {
      row << ',' << text::format_double(slot->x) << ',' << text::format_double(slot->y) << ','
          << text::format_double(slot->v);
    } else {
      row << ",,,";
    }
  }
  return row.str();
}

void write_landmark_file(const std::filesystem::path& path, const std::vector<Skeleton>& skeletons,
                         PoseFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write landmark file " + path.string());
  if (format == PoseFormat::csv) out << csv_header() << '\n';
  for (const auto& s : skeletons) {
    out << (format == PoseFormat::csv ? to_csv_row(s) : to_jsonl(s)) << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

Skeleton filter_visibility(const Skeleton& s, double threshold) {
  Skeleton out = s;
  for (auto& slot : out.landmarks) {
    if (slot && slot->v < threshold) slot.reset();
  }
  return out;
}

Skeleton rescale_to_pixels(const Skeleton& s) {
  if (s.image_width <= 0 || s.image_height <= 0) {
    throw ValueError("skeleton '" + s.id + "' has non-positive frame dimensions");
  }
  if (s.space == CoordinateSpace::pixels) throw ValueError("skeleton '" + s.id + "' is already in pixel space");
  Skeleton out = s;
  for (auto& slot : out.landmarks) {
    if (!slot) continue;
    slot->x *= static_cast<double>(s.image_width);
    slot->y *= static_cast<double>(s.image_height);
  }
  out.space = CoordinateSpace::pixels;
  return out;
}

}  // namespace ergorisk
