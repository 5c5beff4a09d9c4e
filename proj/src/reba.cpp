#include "ergorisk/reba.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "ergorisk/errors.hpp"

namespace ergorisk {
namespace {

using ordered_json = nlohmann::ordered_json;

void check_index(int value, int hi, const char* what) {
  if (value < 1 || value > hi) {
    throw DomainError(std::string(what) + " score " + std::to_string(value) + " outside 1.." + std::to_string(hi));
  }
}

template <typename Array>
void check_cells(const Array& cells, int lo, int hi, const char* table) {
  for (const int v : cells) {
    if (v < lo || v > hi) {
      throw ConfigError(std::string(table) + " entry " + std::to_string(v) + " outside " + std::to_string(lo) +
                        ".." + std::to_string(hi));
    }
  }
}

template <std::size_t N>
std::array<int, N> read_row(const ordered_json& j, const std::string& where) {
  if (!j.is_array() || j.size() != N) {
    throw ConfigError(where + ": expected an array of " + std::to_string(N) + " integers");
  }
  std::array<int, N> row{};
  for (std::size_t i = 0; i < N; ++i) {
    if (!j[i].is_number_integer()) throw ConfigError(where + ": non-integer cell");
    row[i] = j[i].get<int>();
  }
  return row;
}

void expect_array(const ordered_json& j, std::size_t n, const std::string& where) {
  if (!j.is_array() || j.size() != n) {
    throw ConfigError(where + ": expected an array of length " + std::to_string(n));
  }
}

}  // namespace

std::pair<int, int> region_score_domain(Region r) {
  switch (r) {
    case Region::trunk: return {1, 4};
    case Region::neck: return {1, 2};
    case Region::legs: return {1, 3};
    case Region::upper_arm: return {1, 4};
    case Region::lower_arm: return {1, 2};
    case Region::wrist: return {1, 2};
  }
  return {1, 1};
}

void ScoreThresholds::validate() const {
  for (const Region r : kAllRegions) {
    const auto it = bands.find(r);
    const std::string name(region_name(r));
    if (it == bands.end() || it->second.empty()) throw ConfigError("no angle bands for " + name);
    const auto& list = it->second;
    const auto [lo, hi] = region_score_domain(r);
    double expected_lower = 0.0;
    for (const auto& band : list) {
      if (band.lower != expected_lower) {
        throw ConfigError(name + " bands leave a gap or overlap at " + std::to_string(expected_lower) + " degrees");
      }
      if (!(band.upper > band.lower)) throw ConfigError(name + " band has an empty range");
      if (band.score < lo || band.score > hi) {
        throw ConfigError(name + " band score " + std::to_string(band.score) + " outside " + std::to_string(lo) +
                          ".." + std::to_string(hi));
      }
      expected_lower = band.upper;
    }
    if (expected_lower != 180.0) throw ConfigError(name + " bands do not end at 180 degrees");
  }
}

void RebaTables::validate() const {
  for (const auto& trunk : table_a) {
    for (const auto& neck : trunk) check_cells(neck, 1, 9, "table_a");
  }
  for (const auto& upper : table_b) {
    for (const auto& lower : upper) check_cells(lower, 1, 9, "table_b");
  }
  for (const auto& row : table_c) check_cells(row, 1, 12, "table_c");
}

RebaConfig default_reba_config() {
  RebaConfig cfg;
  auto& b = cfg.thresholds.bands;
  b[Region::trunk] = {{0, 5, 1}, {5, 20, 2}, {20, 60, 3}, {60, 180, 4}};
  b[Region::neck] = {{0, 20, 1}, {20, 180, 2}};
  // knee flexion: +1 between 30 and 60 degrees, +2 beyond 60
  b[Region::legs] = {{0, 30, 1}, {30, 60, 2}, {60, 180, 3}};
  b[Region::upper_arm] = {{0, 20, 1}, {20, 45, 2}, {45, 90, 3}, {90, 180, 4}};
  // interior elbow angle; 60..100 degrees of flexion is the neutral band
  b[Region::lower_arm] = {{0, 80, 2}, {80, 120, 1}, {120, 180, 2}};
  b[Region::wrist] = {{0, 15, 1}, {15, 180, 2}};

  cfg.tables.table_a = {{
      {{{1, 2, 3, 4}, {1, 2, 3, 4}, {3, 3, 5, 6}}},
      {{{2, 3, 4, 5}, {3, 4, 5, 6}, {4, 5, 6, 7}}},
      {{{2, 4, 5, 6}, {4, 5, 6, 7}, {5, 6, 7, 8}}},
      {{{3, 5, 6, 7}, {5, 6, 7, 8}, {6, 7, 8, 9}}},
      {{{4, 6, 7, 8}, {6, 7, 8, 9}, {7, 8, 9, 9}}},
  }};
  cfg.tables.table_b = {{
      {{{1, 2, 2}, {1, 2, 3}}},
      {{{1, 2, 3}, {2, 3, 4}}},
      {{{3, 4, 5}, {4, 5, 5}}},
      {{{4, 5, 5}, {5, 6, 7}}},
      {{{6, 7, 8}, {7, 8, 8}}},
      {{{7, 8, 8}, {8, 9, 9}}},
  }};
  cfg.tables.table_c = {{
      {1, 1, 1, 2, 3, 3, 4, 5, 6, 7, 7, 7},
      {1, 2, 2, 3, 4, 4, 5, 6, 6, 7, 7, 8},
      {2, 3, 3, 3, 4, 5, 6, 7, 7, 8, 8, 8},
      {3, 4, 4, 4, 5, 6, 7, 8, 8, 9, 9, 9},
      {4, 4, 4, 5, 6, 7, 8, 8, 9, 9, 9, 9},
      {6, 6, 6, 7, 8, 8, 9, 9, 10, 10, 10, 10},
      {7, 7, 7, 8, 9, 9, 9, 10, 10, 11, 11, 11},
      {8, 8, 8, 9, 10, 10, 10, 10, 10, 11, 11, 11},
      {9, 9, 9, 10, 10, 10, 11, 11, 11, 12, 12, 12},
      {10, 10, 10, 11, 11, 11, 11, 12, 12, 12, 12, 12},
      {11, 11, 11, 11, 12, 12, 12, 12, 12, 12, 12, 12},
      {12, 12, 12, 12, 12, 12, 12, 12, 12, 12, 12, 12},
  }};
  return cfg;
}

RebaConfig parse_reba_config(const std::string& json_text) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("REBA config is not valid JSON: ") + e.what());
  }
  for (const char* key : {"table_a", "table_b", "table_c", "thresholds"}) {
    if (!doc.contains(key)) throw ConfigError(std::string("REBA config lacks '") + key + "'");
  }

  RebaConfig cfg;
  const auto& a = doc["table_a"];
  expect_array(a, 5, "table_a");
  for (std::size_t i = 0; i < 5; ++i) {
    expect_array(a[i], 3, "table_a[" + std::to_string(i) + "]");
    for (std::size_t j = 0; j < 3; ++j) {
      cfg.tables.table_a[i][j] = read_row<4>(a[i][j], "table_a[" + std::to_string(i) + "][" + std::to_string(j) + "]");
    }
  }
  const auto& b = doc["table_b"];
  expect_array(b, 6, "table_b");
  for (std::size_t i = 0; i < 6; ++i) {
    expect_array(b[i], 2, "table_b[" + std::to_string(i) + "]");
    for (std::size_t j = 0; j < 2; ++j) {
      cfg.tables.table_b[i][j] = read_row<3>(b[i][j], "table_b[" + std::to_string(i) + "][" + std::to_string(j) + "]");
    }
  }
  const auto& c = doc["table_c"];
  expect_array(c, 12, "table_c");
  for (std::size_t i = 0; i < 12; ++i) cfg.tables.table_c[i] = read_row<12>(c[i], "table_c[" + std::to_string(i) + "]");
  cfg.tables.validate();

  const auto& th = doc["thresholds"];
  if (!th.is_object()) throw ConfigError("'thresholds' must map region names to band lists");
  for (const auto& [name, list] : th.items()) {
    const Region r = region_from_name(name);
    if (!list.is_array()) throw ConfigError("thresholds." + name + " must be an array");
    std::vector<ScoreBand> bands;
    for (const auto& entry : list) {
      if (!entry.is_array() || entry.size() != 3 || !entry[0].is_number() || !entry[1].is_number() ||
          !entry[2].is_number_integer()) {
        throw ConfigError("thresholds." + name + " entries must be [lower, upper, score]");
      }
      bands.push_back({entry[0].get<double>(), entry[1].get<double>(), entry[2].get<int>()});
    }
    cfg.thresholds.bands[r] = std::move(bands);
  }
  cfg.thresholds.validate();
  return cfg;
}

RebaConfig load_reba_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open REBA config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_reba_config(buf.str());
}

std::string reba_config_to_json(const RebaConfig& cfg) {
  ordered_json doc;
  doc["table_a"] = cfg.tables.table_a;
  doc["table_b"] = cfg.tables.table_b;
  doc["table_c"] = cfg.tables.table_c;
  ordered_json th = ordered_json::object();
  for (const Region r : kAllRegions) {
    ordered_json list = ordered_json::array();
    const auto it = cfg.thresholds.bands.find(r);
    if (it != cfg.thresholds.bands.end()) {
      for (const auto& band : it->second) list.push_back({band.lower, band.upper, band.score});
    }
    th[std::string(region_name(r))] = std::move(list);
  }
  doc["thresholds"] = std::move(th);
  return doc.dump(2) + "\n";
}

int score_region(double degrees, Region region, const ScoreThresholds& thresholds) {
  if (!(degrees >= 0.0 && degrees <= 180.0)) {
    throw DomainError(std::string(region_name(region)) + " angle " + std::to_string(degrees) + " outside [0,180]");
  }
  const auto it = thresholds.bands.find(region);
  if (it == thresholds.bands.end()) throw ConfigError("no angle bands for " + std::string(region_name(region)));
  const auto& bands = it->second;
  for (std::size_t i = 0; i < bands.size(); ++i) {
    const bool last = i + 1 == bands.size();
    if (degrees >= bands[i].lower && (degrees < bands[i].upper || (last && degrees <= bands[i].upper))) {
      return bands[i].score;
    }
  }
  throw ConfigError("no " + std::string(region_name(region)) + " band contains " + std::to_string(degrees) +
                    " degrees");
}

int group_a(int s_trunk, int s_neck, int s_legs, const RebaTables& t) {
  check_index(s_trunk, 5, "trunk");
  check_index(s_neck, 3, "neck");
  check_index(s_legs, 4, "legs");
  return t.table_a[s_trunk - 1][s_neck - 1][s_legs - 1];
}

int group_b(int s_upper, int s_lower, int s_wrist, const RebaTables& t) {
  check_index(s_upper, 6, "upper arm");
  check_index(s_lower, 2, "lower arm");
  check_index(s_wrist, 3, "wrist");
  return t.table_b[s_upper - 1][s_lower - 1][s_wrist - 1];
}

int group_c(int g_a, int g_b, const RebaTables& t) {
  check_index(g_a, 12, "group A");
  check_index(g_b, 12, "group B");
  return t.table_c[g_a - 1][g_b - 1];
}

RebaResult assess(const Skeleton& s, const GeometryConfig& cfg, const ScoreThresholds& thresholds,
                  const RebaTables& tables) {
  GeometryConfig scored = cfg;
  scored.ranker = [&thresholds](Region r, double deg) { return static_cast<double>(score_region(deg, r, thresholds)); };

  RebaResult out;
  out.id = s.id;
  out.angles = region_angles(s, scored);
  const auto& a = out.angles;
  out.scores.trunk = score_region(a.trunk, Region::trunk, thresholds);
  out.scores.neck = score_region(a.neck, Region::neck, thresholds);
  out.scores.legs = score_region(a.legs.worst, Region::legs, thresholds);
  out.scores.upper_arm = score_region(a.upper_arm.worst, Region::upper_arm, thresholds);
  out.scores.lower_arm = score_region(a.lower_arm.worst, Region::lower_arm, thresholds);
  out.scores.wrist = score_region(a.wrist.worst, Region::wrist, thresholds);

  out.g_a = group_a(out.scores.trunk, out.scores.neck, out.scores.legs, tables);
  out.g_b = group_b(out.scores.upper_arm, out.scores.lower_arm, out.scores.wrist, tables);
  out.s_reba = group_c(out.g_a, out.g_b, tables);
  out.class_label = risk_class(out.s_reba);
  return out;
}

std::string reba_result_to_json(const RebaResult& r) {
  ordered_json j;
  j["id"] = r.id;
  j["scores"] = {{"neck", r.scores.neck},           {"trunk", r.scores.trunk},
                 {"legs", r.scores.legs},           {"upper_arm", r.scores.upper_arm},
                 {"lower_arm", r.scores.lower_arm}, {"wrist", r.scores.wrist}};
  j["gA"] = r.g_a;
  j["gB"] = r.g_b;
  j["reba"] = r.s_reba;
  j["class"] = r.class_label;
  return j.dump();
}

std::string AnnotationSummary::to_json() const {
  ordered_json j;
  j["total"] = total;
  j["accepted"] = accepted;
  j["rejected"] = rejects.size();
  ordered_json hist = ordered_json::object();
  for (int c = 1; c <= kNumRiskClasses; ++c) hist[std::to_string(c)] = histogram[c - 1];
  j["histogram"] = std::move(hist);
  ordered_json rej = ordered_json::array();
  for (const auto& r : rejects) rej.push_back({{"id", r.id}, {"reason", r.reason}});
  j["rejects"] = std::move(rej);
  return j.dump();
}

AnnotationSummary annotate_skeletons(const std::vector<Skeleton>& skeletons, const RebaConfig& cfg,
                                     const AnnotateOptions& options, std::vector<std::string>& lines) {
  struct Outcome {
    std::optional<RebaResult> result;
    std::string reason;
  };
  std::vector<Outcome> outcomes(skeletons.size());
  const auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      try {
        const Skeleton filtered = filter_visibility(skeletons[i], options.visibility_threshold);
        outcomes[i].result = assess(filtered, options.geometry, cfg.thresholds, cfg.tables);
      } catch (const MissingLandmarkError& e) {
        outcomes[i].reason = e.what();
      } catch (const DomainError& e) {
        outcomes[i].reason = e.what();
      }
    }
  };

  const std::size_t workers = std::clamp<std::size_t>(options.threads, 1, std::max<std::size_t>(1, skeletons.size()));
  if (workers == 1) {
    work(0, skeletons.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (skeletons.size() + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = std::min(skeletons.size(), w * chunk);
      const std::size_t end = std::min(skeletons.size(), begin + chunk);
      pool.emplace_back(work, begin, end);
    }
    for (auto& t : pool) t.join();
  }

  AnnotationSummary summary;
  summary.total = skeletons.size();
  lines.clear();
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    if (outcomes[i].result) {
      ++summary.accepted;
      ++summary.histogram[outcomes[i].result->class_label - 1];
      lines.push_back(reba_result_to_json(*outcomes[i].result));
    } else {
      summary.rejects.push_back({skeletons[i].id, outcomes[i].reason});
    }
  }
  return summary;
}

AnnotationSummary annotate_dataset(const std::filesystem::path& input, const std::filesystem::path& output,
                                   const RebaConfig& cfg, const AnnotateOptions& options) {
  const auto skeletons = parse_landmark_file(input, format_from_path(input));
  std::vector<std::string> lines;
  auto summary = annotate_skeletons(skeletons, cfg, options, lines);
  std::ofstream out(output, std::ios::binary);
  if (!out) throw IoError("cannot write label file " + output.string());
  for (const auto& line : lines) out << line << '\n';
  if (!out) throw IoError("write failed for " + output.string());
  return summary;
}

}  // namespace ergorisk
