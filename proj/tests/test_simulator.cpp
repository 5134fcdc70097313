#include <doctest.h>

#include <random>

#include "grca/io.hpp"
#include "grca/simulator.hpp"
#include "oracles.hpp"

using namespace grca;
using namespace grca::sim;

namespace {

SimConfig small_config() {
  SimConfig c;
  c.scene_count = 8;
  c.scenes_per_step = 4;
  c.steps = 4;
  c.eval_every = 2;
  c.warmup.steps = 10;
  return c;
}

}  // namespace

TEST_CASE("scenes are deterministic and consistent") {
  const SceneConfig cfg;
  const auto a = generate_scenes(3, 16, cfg);
  const auto b = generate_scenes(3, 16, cfg);
  REQUIRE(a.size() == 16);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Scene& s = a[i];
    CHECK(s.code == static_cast<int>(i));
    CHECK(s.box3d == b[i].box3d);
    CHECK_NOTHROW(s.camera.validate());
    const Projection p = project_corners(s.box3d, s.camera);
    REQUIRE(p.valid);
    CHECK(enclosing_box_2d(p.points) == s.box2d);
    CHECK(s.box2d.x_min >= 0);
    CHECK(s.box2d.y_max <= cfg.image_height);
    CHECK(s.kpts3d.points.size() == static_cast<std::size_t>(cfg.keypoints));
    CHECK(keypoint_containment(s.kpts3d, s.box3d) == 1.0);
    CHECK(keypoint_containment(s.kpts2d, s.box2d) == 1.0);
    CHECK(s.label >= 0);
    CHECK(s.label < kLabelCount);
  }
  CHECK(generate_scenes(4, 1, cfg)[0].box3d != a[0].box3d);
}

TEST_CASE("policy slot layout") {
  const ToyPolicy p(3, 16, 1000);
  CHECK(p.slot_count() == 1 + 4 + 6 + 32 + 48);
  CHECK(p.first_slot(Field::kBbox2d) == 1);
  CHECK(p.first_slot(Field::kBbox3d) == 5);
  CHECK(p.first_slot(Field::kKpts2d) == 11);
  CHECK(p.first_slot(Field::kKpts3d) == 43);
  CHECK(p.field_of_slot(42) == Field::kKpts2d);
  CHECK(p.field_of_slot(43) == Field::kKpts3d);
  CHECK(p.offset(1, 0) == p.offset(0, p.slot_count() - 1) + 1001);
  CHECK(p.probabilities(0, 1).sum() == doctest::Approx(1.0));
  CHECK(p.log_prob(0, 1, 7) == doctest::Approx(-std::log(1001.0)));
}

TEST_CASE("oracle policy scores perfectly up to quantization") {
  const auto scenes = generate_scenes(0, 16);
  const FieldRanges ranges = FieldRanges::image(512, 512);
  const ToyPolicy oracle = oracle_policy(scenes, ranges, 16);
  const Metrics m = evaluate(oracle, scenes, ranges);
  CHECK(m.parse_ok == 1.0);
  CHECK(m.iou_2d > 0.99);
  CHECK(m.iou_3d > 0.98);
  CHECK(m.kpa_2d == 1.0);
  CHECK(m.kpa_3d == 1.0);
  CHECK(m.rpc > 0.99);

  // A uniform policy's sampled outputs are far worse.
  const ToyPolicy uniform(16, 16, 1000);
  std::mt19937_64 rng(1);
  double kpa = 0, iou = 0;
  for (const Scene& s : scenes) {
    const SimRollout r = rollout_group(uniform, s, ranges, {4, 1.0, TokenizerMode::kBoundary, false}, rng);
    for (const auto& mem : r.group.members) {
      kpa += mem.rewards[Field::kKpts3d] / 64.0;
      iou += mem.rewards[Field::kBbox3d] / 64.0;
    }
  }
  CHECK(kpa < m.kpa_3d);
  CHECK(iou < m.iou_3d);
}

TEST_CASE("warm-up reduces the token loss") {
  const auto scenes = generate_scenes(0, 4);
  const FieldRanges ranges = FieldRanges::image(512, 512);
  ToyPolicy p(4, 16, 1000);
  const WarmupResult r = sft_warmup(p, scenes, ranges, {20, 1.5, 25.0, 25.0, 0});
  REQUIRE(r.loss.size() == 20);
  CHECK(r.loss.front() == doctest::Approx(std::log(1001.0)));
  CHECK(r.loss.back() < r.loss.front());
}

TEST_CASE("rollouts re-parse sampled text and link tokens to slots") {
  const auto scenes = generate_scenes(0, 2);
  const FieldRanges ranges = FieldRanges::image(512, 512);
  ToyPolicy p(2, 16, 1000);
  sft_warmup(p, scenes, ranges, {5, 1.5, 25.0, 25.0, 0});
  std::mt19937_64 rng(4);
  const SimRollout r = rollout_group(p, scenes[1], ranges, {8, 1.0, TokenizerMode::kBoundary, true}, rng);
  REQUIRE(r.group.members.size() == 8);
  for (std::size_t i = 0; i < 8; ++i) {
    const RolloutMember& m = r.group.members[i];
    const MemberSlots& ms = r.slots[i];
    for (const Field f : kGeometricFields) CHECK(m.parsed.ok(f));
    CHECK(ms.token_slot.size() == m.length());
    // Each slot appears on exactly one token, with the right role.
    std::vector<int> hits(static_cast<std::size_t>(p.slot_count()), 0);
    double total = 0;
    for (std::size_t t = 0; t < ms.token_slot.size(); ++t) {
      const int s = ms.token_slot[t];
      if (s < 0) {
        CHECK(m.trace.logp_new[t] == 0.0);
        continue;
      }
      ++hits[static_cast<std::size_t>(s)];
      total += m.trace.logp_new[t];
      if (s == 0) {
        CHECK(m.partition.roles[t] == TokenRole::kBackground);
      } else {
        CHECK(m.partition.roles[t] == role_of(p.field_of_slot(s)));
      }
    }
    for (const int h : hits) CHECK(h == 1);
    double expect = 0;
    for (int s = 0; s < p.slot_count(); ++s) expect += p.log_prob(1, s, ms.choices[static_cast<std::size_t>(s)]);
    CHECK(total == doctest::Approx(expect).epsilon(1e-12));
    CHECK(m.trace.logp_old == m.trace.logp_new);
    const ParsedOutput direct = output_from_choices(p, ms.choices);
    CHECK(direct.same_values(m.parsed));

    LogProbTrace again = m.trace;
    refresh_trace(p, 1, ms, again, 1.0, true);
    CHECK(again.logp_new == m.trace.logp_new);
    REQUIRE(again.scores);
    for (std::size_t t = 0; t < ms.token_slot.size(); ++t) {
      const auto& block = (*again.scores)[t];
      CHECK((block.values.size() == 0) == (ms.token_slot[t] < 0));
    }
  }
}

TEST_CASE("config validation names the field") {
  SimConfig c;
  c.lambda = 1.5;
  CHECK_THROWS_WITH_AS(c.validate(), "invalid config: lambda must be in [0, 1]", Error);
  c = SimConfig{};
  c.group_size = 1;
  CHECK_THROWS_AS(c.validate(), Error);
  c = SimConfig{};
  c.scenes_per_step = 100;
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK_NOTHROW(SimConfig{}.validate());
}

TEST_CASE("simulation is deterministic across thread counts") {
  SimConfig c = small_config();
  const std::string a = io::to_json(simulate(c)).dump();
  const std::string b = io::to_json(simulate(c)).dump();
  CHECK(a == b);
  c.threads = 3;
  const auto threaded = io::to_json(simulate(c));
  auto plain = nlohmann::json::parse(a);
  CHECK(threaded["curve"] == plain["curve"]);
  c.seed = 1;
  CHECK(io::to_json(simulate(c))["curve"] != plain["curve"]);
}

TEST_CASE("training report shape") {
  const TrainingReport r = simulate(small_config());
  REQUIRE(r.curve.size() == 3);
  CHECK(r.curve[0].step == 0);
  CHECK(r.curve[2].step == 4);
  CHECK(r.final_metrics.kpa_3d == r.curve.back().metrics.kpa_3d);
  const std::string csv = io::curves_csv(r);
  CHECK(csv.rfind("step,iou_2d,iou_3d,kpa_2d,kpa_3d,rpc,parse_ok,mean_reward,clip_fraction\n", 0) == 0);
}

TEST_CASE("variance study satisfies the decomposition") {
  SimConfig c = small_config();
  const VarianceStudy s = analyze_variance(c, 2, 200, 0);
  REQUIRE(s.fields.size() == 4);
  for (const auto& f : s.fields) {
    CHECK(f.report.n_samples == 200);
    CHECK(f.report.identity_residual <= 1e-9);
    CHECK(f.max_decomposition_error <= 1e-10);
  }
  CHECK_THROWS_AS(analyze_variance(c, 2, 1, 0), Error);
  CHECK_THROWS_AS(analyze_variance(c, 2, 10, 99), Error);
}

TEST_CASE("scene json round trip") {
  const auto scenes = generate_scenes(2, 3);
  for (const Scene& s : scenes) {
    const Scene t = io::scene_from_json(nlohmann::json::parse(io::to_json(s).dump()));
    CHECK(t.box3d == s.box3d);
    CHECK(t.box2d == s.box2d);
    CHECK(t.code == s.code);
    CHECK((t.camera.K - s.camera.K).norm() == 0.0);
  }
}
