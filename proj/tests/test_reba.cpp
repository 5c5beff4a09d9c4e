#include <doctest.h>

#include <fstream>

#include "ergorisk/errors.hpp"
#include "ergorisk/reba.hpp"
#include "ergorisk/synth.hpp"
#include "support.hpp"

using namespace ergorisk;

namespace {

// Published REBA lookup tables, typed in independently of the library.
// Table A: [trunk][neck][legs]; Table B: [upper arm][lower arm][wrist];
// Table C: [score A][score B].
constexpr int kTableA[5][3][4] = {
    {{1, 2, 3, 4}, {1, 2, 3, 4}, {3, 3, 5, 6}}, {{2, 3, 4, 5}, {3, 4, 5, 6}, {4, 5, 6, 7}},
    {{2, 4, 5, 6}, {4, 5, 6, 7}, {5, 6, 7, 8}}, {{3, 5, 6, 7}, {5, 6, 7, 8}, {6, 7, 8, 9}},
    {{4, 6, 7, 8}, {6, 7, 8, 9}, {7, 8, 9, 9}},
};
constexpr int kTableB[6][2][3] = {
    {{1, 2, 2}, {1, 2, 3}}, {{1, 2, 3}, {2, 3, 4}}, {{3, 4, 5}, {4, 5, 5}},
    {{4, 5, 5}, {5, 6, 7}}, {{6, 7, 8}, {7, 8, 8}}, {{7, 8, 8}, {8, 9, 9}},
};
constexpr int kTableC[12][12] = {
    {1, 1, 1, 2, 3, 3, 4, 5, 6, 7, 7, 7},          {1, 2, 2, 3, 4, 4, 5, 6, 6, 7, 7, 8},
    {2, 3, 3, 3, 4, 5, 6, 7, 7, 8, 8, 8},          {3, 4, 4, 4, 5, 6, 7, 8, 8, 9, 9, 9},
    {4, 4, 4, 5, 6, 7, 8, 8, 9, 9, 9, 9},          {6, 6, 6, 7, 8, 8, 9, 9, 10, 10, 10, 10},
    {7, 7, 7, 8, 9, 9, 9, 10, 10, 11, 11, 11},     {8, 8, 8, 9, 10, 10, 10, 10, 10, 11, 11, 11},
    {9, 9, 9, 10, 10, 10, 11, 11, 11, 12, 12, 12}, {10, 10, 10, 11, 11, 11, 11, 12, 12, 12, 12, 12},
    {11, 11, 11, 11, 12, 12, 12, 12, 12, 12, 12, 12}, {12, 12, 12, 12, 12, 12, 12, 12, 12, 12, 12, 12},
};

RebaTables fixture_tables() {
  RebaTables t = default_reba_config().tables;
  for (int i = 1; i <= 5; ++i)
    for (int j = 1; j <= 3; ++j)
      for (int k = 1; k <= 4; ++k) t.table_a[i - 1][j - 1][k - 1] = std::min(i + j + k - 2, 9);
  for (int i = 1; i <= 6; ++i)
    for (int j = 1; j <= 2; ++j)
      for (int k = 1; k <= 3; ++k) t.table_b[i - 1][j - 1][k - 1] = std::min(i + j + k - 2, 9);
  for (int i = 1; i <= 12; ++i)
    for (int j = 1; j <= 12; ++j) t.table_c[i - 1][j - 1] = std::min(i + j - 1, 12);
  return t;
}

std::string jsonl_of(const std::vector<Skeleton>& all) {
  std::string out;
  for (const auto& s : all) out += to_jsonl(s) + "\n";
  return out;
}

}  // namespace

TEST_CASE("default tables equal the published REBA tables") {
  const RebaTables t = default_reba_config().tables;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 4; ++k) CHECK(t.table_a[i][j][k] == kTableA[i][j][k]);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 3; ++k) CHECK(t.table_b[i][j][k] == kTableB[i][j][k]);
  for (int i = 0; i < 12; ++i)
    for (int j = 0; j < 12; ++j) CHECK(t.table_c[i][j] == kTableC[i][j]);
}

TEST_CASE("the shipped tables file equals the built-in defaults") {
  const RebaConfig shipped = load_reba_config(std::string(ERGORISK_DATA_DIR) + "/reba_tables.json");
  const RebaConfig defaults = default_reba_config();
  CHECK(shipped.tables == defaults.tables);
  CHECK(shipped.thresholds == defaults.thresholds);
  CHECK(parse_reba_config(reba_config_to_json(defaults)).tables == defaults.tables);
}

TEST_CASE("band lookup") {
  const ScoreThresholds th = default_reba_config().thresholds;
  CHECK(score_region(0.0, Region::trunk, th) == 1);
  CHECK(score_region(4.999, Region::trunk, th) == 1);
  CHECK(score_region(5.0, Region::trunk, th) == 2);
  CHECK(score_region(19.999, Region::trunk, th) == 2);
  CHECK(score_region(20.0, Region::trunk, th) == 3);
  CHECK(score_region(60.0, Region::trunk, th) == 4);
  CHECK(score_region(180.0, Region::trunk, th) == 4);
  CHECK_THROWS_AS(score_region(-0.5, Region::trunk, th), DomainError);
  CHECK_THROWS_AS(score_region(180.5, Region::trunk, th), DomainError);

  ScoreThresholds single = th;
  single.bands[Region::neck] = {{0.0, 180.0, 1}};
  for (double d : {0.0, 33.3, 90.0, 180.0}) CHECK(score_region(d, Region::neck, single) == 1);
}

TEST_CASE("band configs with gaps are rejected") {
  ScoreThresholds th = default_reba_config().thresholds;
  th.bands[Region::trunk] = {{0.0, 5.0, 1}, {6.0, 180.0, 2}};
  CHECK_THROWS_AS(th.validate(), ConfigError);
}

TEST_CASE("group lookups on the published tables") {
  const RebaTables t = default_reba_config().tables;
  CHECK(group_a(1, 1, 1, t) == 1);
  CHECK(group_b(1, 1, 1, t) == 1);
  CHECK(group_c(1, 1, t) == 1);
  CHECK_THROWS_AS(group_a(6, 1, 1, t), DomainError);
  CHECK_THROWS_AS(group_b(1, 3, 1, t), DomainError);
  CHECK_THROWS_AS(group_c(0, 1, t), DomainError);
}

TEST_CASE("group lookups on arithmetic fixture tables") {
  const RebaTables t = fixture_tables();
  CHECK(group_a(2, 1, 1, t) == 2);
  CHECK(group_a(5, 3, 4, t) == 9);
  CHECK(group_b(3, 2, 1, t) == 4);
  CHECK(group_b(6, 2, 3, t) == 9);
  CHECK(group_c(4, 5, t) == 8);
  CHECK(group_c(12, 12, t) == 12);
}

TEST_CASE("risk class clamps at 8") {
  for (int s = 1; s <= 7; ++s) CHECK(risk_class(s) == s);
  for (int s = 8; s <= 12; ++s) CHECK(risk_class(s) == 8);
}

TEST_CASE("the upright skeleton is class 1") {
  const RebaResult r = assess(testing::upright_skeleton());
  CHECK(r.scores.trunk == 1);
  CHECK(r.scores.neck == 1);
  CHECK(r.scores.legs == 1);
  CHECK(r.scores.upper_arm == 1);
  CHECK(r.scores.wrist == 1);
  CHECK(r.g_a == 1);
  CHECK(r.s_reba == 1);
  CHECK(r.class_label == 1);
  const std::string json = reba_result_to_json(r);
  CHECK(json.ends_with("\"class\":1}"));
}

TEST_CASE("a skeleton missing both hips is rejected") {
  Skeleton s = testing::upright_skeleton();
  s.landmarks[23].reset();
  s.landmarks[24].reset();
  CHECK_THROWS_AS(assess(s), MissingLandmarkError);
}

TEST_CASE("side aggregation scores the riskier side") {
  Skeleton s = testing::upright_skeleton();
  // Raise the right arm horizontally: shoulder (0.60,0.20).
  s.landmarks[14] = Landmark{0.75, 0.20, 1.0};
  s.landmarks[16] = Landmark{0.88, 0.20, 1.0};
  s.landmarks[20] = Landmark{0.92, 0.20, 1.0};
  const RebaResult r = assess(s);
  CHECK(r.angles.upper_arm.worst_side == Side::right);
  CHECK(r.scores.upper_arm == 4);
}

TEST_CASE("annotation") {
  const RebaConfig cfg = default_reba_config();
  testing::TempDir dir("reba");

  SUBCASE("empty input gives empty output and zero counts") {
    testing::spit(dir / "empty.jsonl", "");
    const auto summary = annotate_dataset(dir / "empty.jsonl", dir / "out.jsonl", cfg);
    CHECK(summary.total == 0);
    CHECK(summary.accepted == 0);
    CHECK(testing::slurp(dir / "out.jsonl").empty());
  }

  SUBCASE("ten upright skeletons all land in class 1") {
    std::vector<Skeleton> all;
    for (int i = 0; i < 10; ++i) all.push_back(testing::upright_skeleton("u" + std::to_string(i)));
    testing::spit(dir / "in.jsonl", jsonl_of(all));
    const auto summary = annotate_dataset(dir / "in.jsonl", dir / "out.jsonl", cfg);
    CHECK(summary.accepted == 10);
    CHECK(summary.histogram[0] == 10);
    for (std::size_t c = 1; c < summary.histogram.size(); ++c) CHECK(summary.histogram[c] == 0);
  }

  SUBCASE("one malformed line fails the whole file") {
    std::vector<Skeleton> all = {testing::upright_skeleton("a"), testing::upright_skeleton("b")};
    testing::spit(dir / "in.jsonl", to_jsonl(all[0]) + "\n{not json\n" + to_jsonl(all[1]) + "\n");
    CHECK_THROWS_AS(annotate_dataset(dir / "in.jsonl", dir / "out.jsonl", cfg), ParseError);
    CHECK_FALSE(std::filesystem::exists(dir / "out.jsonl"));
  }

  SUBCASE("samples with missing landmarks are listed as rejects") {
    Skeleton bad = testing::upright_skeleton("bad");
    bad.landmarks[15]->v = 0.1;
    testing::spit(dir / "in.jsonl", jsonl_of({testing::upright_skeleton("good"), bad}));
    const auto summary = annotate_dataset(dir / "in.jsonl", dir / "out.jsonl", cfg);
    CHECK(summary.total == 2);
    CHECK(summary.accepted == 1);
    REQUIRE(summary.rejects.size() == 1);
    CHECK(summary.rejects[0].id == "bad");
  }

  SUBCASE("output bytes do not depend on the thread count") {
    Rng rng(4);
    std::vector<Skeleton> all;
    for (int i = 0; i < 300; ++i) {
      all.push_back(synth::figure_to_skeleton(synth::sample_figure(rng), synth::sample_id(i)));
    }
    testing::spit(dir / "in.jsonl", jsonl_of(all));
    AnnotateOptions one;
    AnnotateOptions four;
    four.threads = 4;
    annotate_dataset(dir / "in.jsonl", dir / "a.jsonl", cfg, one);
    annotate_dataset(dir / "in.jsonl", dir / "b.jsonl", cfg, four);
    CHECK(testing::slurp(dir / "a.jsonl") == testing::slurp(dir / "b.jsonl"));
  }
}
