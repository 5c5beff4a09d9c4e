#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "ergorisk/errors.hpp"
#include "ergorisk/synth.hpp"
#include "support.hpp"

using namespace ergorisk;
using namespace ergorisk::synth;

namespace {

double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double dx = bx - ax, dy = by - ay;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(px - (ax + t * dx), py - (ay + t * dy));
}

bool same_spec(const FigureSpec& a, const FigureSpec& b) {
  return a.trunk == b.trunk && a.neck == b.neck && a.knee_flexion == b.knee_flexion && a.upper_arm == b.upper_arm &&
         a.elbow_flexion == b.elbow_flexion && a.wrist_deviation == b.wrist_deviation && a.torso == b.torso &&
         a.root_x == b.root_x && a.root_y == b.root_y && a.scale == b.scale;
}

}  // namespace

TEST_CASE("sampling is deterministic and inside the declared ranges") {
  Rng a(17), b(17);
  const AngleRanges r;
  for (int i = 0; i < 500; ++i) {
    const FigureSpec s = sample_figure(a);
    CHECK(same_spec(s, sample_figure(b)));
    CHECK(s.trunk >= 0.0);
    CHECK(s.trunk <= r.trunk_max);
    CHECK(s.neck >= 0.0);
    CHECK(s.neck <= r.neck_max);
    for (int side = 0; side < 2; ++side) {
      CHECK(s.knee_flexion[side] >= 0.0);
      CHECK(s.knee_flexion[side] <= r.knee_flexion_max);
      CHECK(s.upper_arm[side] >= 0.0);
      CHECK(s.upper_arm[side] <= r.upper_arm_max);
      CHECK(s.elbow_flexion[side] >= 0.0);
      CHECK(s.elbow_flexion[side] <= r.elbow_flexion_max);
      CHECK(s.wrist_deviation[side] >= 0.0);
      CHECK(s.wrist_deviation[side] <= r.wrist_deviation_max);
    }
  }
}

TEST_CASE("ten thousand samples cover every risk class") {
  Rng rng(2024);
  const RebaConfig cfg = default_reba_config();
  std::set<int> seen;
  for (int i = 0; i < 10000; ++i) seen.insert(assess(figure_to_skeleton(sample_figure(rng)), cfg).class_label);
  CHECK(seen == std::set<int>{1, 2, 3, 4, 5, 6, 7, 8});
}

TEST_CASE("the neutral figure is upright") {
  const RegionAngles a = region_angles(figure_to_skeleton(neutral_figure()));
  CHECK(a.trunk <= 0.5);
  CHECK(a.neck <= 0.5);
  CHECK(a.legs.left <= 0.5);
  CHECK(a.legs.right <= 0.5);
  CHECK(a.lower_arm.left >= 179.5);
  CHECK(assess(figure_to_skeleton(neutral_figure())).class_label == 1);
}

TEST_CASE("measured angles match the requested angles") {
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const FigureSpec s = sample_figure(rng);
    const Skeleton sk = figure_to_skeleton(s);
    const RegionAngles a = region_angles(sk);
    CHECK(std::abs(a.trunk - s.trunk) <= 1.0);
    CHECK(std::abs(a.neck - s.neck) <= 1.0);
    CHECK(std::abs(a.legs.left - s.knee_flexion[0]) <= 1.0);
    CHECK(std::abs(a.legs.right - s.knee_flexion[1]) <= 1.0);
    CHECK(std::abs(a.upper_arm.left - s.upper_arm[0]) <= 1.0);
    CHECK(std::abs(a.upper_arm.right - s.upper_arm[1]) <= 1.0);
    CHECK(std::abs(a.lower_arm.left - (180.0 - s.elbow_flexion[0])) <= 1.0);
    CHECK(std::abs(a.lower_arm.right - (180.0 - s.elbow_flexion[1])) <= 1.0);
    CHECK(std::abs(a.wrist.left - s.wrist_deviation[0]) <= 1.0);
    CHECK(std::abs(a.wrist.right - s.wrist_deviation[1]) <= 1.0);
    CHECK(sk.present_count() == 17);
    for (const auto& lm : sk.landmarks) {
      if (!lm) continue;
      CHECK(lm->x >= 0.0);
      CHECK(lm->x <= 1.0);
      CHECK(lm->y >= 0.0);
      CHECK(lm->y <= 1.0);
      CHECK(lm->v == 1.0);
    }
  }
}

TEST_CASE("an empty spec is rejected") {
  CHECK_THROWS_AS(figure_to_skeleton(FigureSpec{}), ValueError);
  CHECK_THROWS_AS(render_stick_figure(FigureSpec{}, 64), ValueError);
}

TEST_CASE("rendering") {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const FigureSpec spec = sample_figure(rng);
    const std::size_t n = spec.canvas;
    const Image img = render_stick_figure(spec, n);
    CHECK(img == render_stick_figure(spec, n));
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c) {
        const auto v = img.at(0, r, c);
        CHECK((v == kInk || v == kBackground));
        CHECK(img.at(1, r, c) == v);
        CHECK(img.at(2, r, c) == v);
      }
    const Skeleton s = figure_to_skeleton(spec);
    for (const auto& [i, j] : skeleton_edges()) {
      const double ax = s.landmarks[i]->x * n, ay = s.landmarks[i]->y * n;
      const double bx = s.landmarks[j]->x * n, by = s.landmarks[j]->y * n;
      bool inked = false;
      for (std::size_t r = 0; r < n && !inked; ++r)
        for (std::size_t c = 0; c < n && !inked; ++c)
          inked = img.at(0, r, c) == kInk && segment_distance(c + 0.5, r + 0.5, ax, ay, bx, by) <= spec.stroke_radius;
      CHECK(inked);
    }
    for (const auto& lm : s.landmarks) {
      if (!lm) continue;
      const auto col = std::min(n - 1, static_cast<std::size_t>(lm->x * n));
      const auto row = std::min(n - 1, static_cast<std::size_t>(lm->y * n));
      CHECK(img.at(0, row, col) == kInk);
    }
  }
}

TEST_CASE("PPM round-trip") {
  Rng rng(10);
  const Image img = render_stick_figure(sample_figure(rng, 32), 32);
  const std::string bytes = encode_ppm(img);
  CHECK(bytes.rfind("P6\n32 32\n255\n", 0) == 0);
  CHECK(decode_ppm(bytes) == img);
  CHECK_THROWS_AS(decode_ppm("P3\n1 1\n255\n"), ParseError);
  CHECK_THROWS_AS(decode_ppm(bytes.substr(0, bytes.size() - 3)), ParseError);
  const auto t = image_tensor<float>(img);
  CHECK(t.shape() == ad::Shape{3, 32, 32});
  for (const float v : t.data()) CHECK((v == 0.0f || v == 1.0f));
}

TEST_CASE("dataset generation") {
  testing::TempDir dir("synth");
  SUBCASE("n = 0 gives an empty manifest") {
    const Manifest m = gen_dataset(0, 1, dir / "empty");
    CHECK(m.entries.empty());
    CHECK(testing::slurp(dir / "empty" / "manifest.jsonl").empty());
  }
  SUBCASE("stored labels equal a fresh assessment and bytes repeat per seed") {
    GenOptions opts;
    opts.image_size = 32;
    opts.threads = 3;
    const Manifest m = gen_dataset(40, 7, dir / "a", default_reba_config(), opts);
    REQUIRE(m.entries.size() == 40);
    const auto skeletons = parse_landmark_file(dir / "a" / "skeletons.jsonl", PoseFormat::jsonl);
    REQUIRE(skeletons.size() == 40);
    std::size_t total = 0;
    for (std::size_t i = 0; i < 40; ++i) {
      CHECK(m.entries[i].id == sample_id(i));
      CHECK(skeletons[i].id == m.entries[i].id);
      const RebaResult r = assess(skeletons[i]);
      CHECK(r.s_reba == m.entries[i].reba);
      CHECK(r.class_label == m.entries[i].class_label);
      CHECK(read_ppm(dir / "a" / m.entries[i].image).size == 32);
    }
    for (const auto h : m.histogram) total += h;
    CHECK(total == 40);

    opts.threads = 1;
    gen_dataset(40, 7, dir / "b", default_reba_config(), opts);
    for (const char* f : {"manifest.jsonl", "skeletons.jsonl", "labels.jsonl", "summary.json"}) {
      CHECK(testing::slurp(dir / "a" / f) == testing::slurp(dir / "b" / f));
    }
    CHECK(testing::slurp(dir / "a" / "images" / "s000013.ppm") == testing::slurp(dir / "b" / "images" / "s000013.ppm"));
    const Manifest back = read_manifest(dir / "a" / "manifest.jsonl");
    CHECK(back.entries.size() == 40);
    CHECK(back.histogram == m.histogram);
  }
}
