#include <doctest.h>

#include <filesystem>
#include <random>

#include "grca/commands.hpp"
#include "grca/io.hpp"
#include "oracles.hpp"

using namespace grca;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("grca_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

sim::SimConfig tiny() {
  sim::SimConfig c;
  c.scene_count = 6;
  c.scenes_per_step = 3;
  c.steps = 2;
  c.warmup.steps = 5;
  return c;
}

}  // namespace

TEST_CASE("score ground truth against itself") {
  const fs::path dir = scratch("self");
  cli::SimulateOptions so{tiny(), dir, false};
  cli::cmd_simulate(so);
  for (const char* f : {"report.json", "curves.csv", "scenes.jsonl", "gt.jsonl", "calib.json", "ranges.json"}) {
    CHECK(fs::exists(dir / f));
  }
  const auto r = cli::cmd_score({dir / "gt.jsonl", dir / "gt.jsonl", dir / "calib.json", dir / "ranges.json"});
  CHECK(r.exit_code == 0);
  const json& agg = r.output["aggregate"];
  CHECK(agg["iou_2d"].get<double>() == 1.0);
  CHECK(agg["iou_3d"].get<double>() == 1.0);
  CHECK(agg["kpa_2d"].get<double>() == 1.0);
  CHECK(agg["kpa_3d"].get<double>() == 1.0);
  CHECK(agg["parse_ok"].get<double>() == 1.0);
  // The exported 2D box and the projected 3D box are quantized separately.
  CHECK(agg["rpc"].get<double>() > 0.99);
  CHECK(r.output["matched"] == 6);
}

TEST_CASE("score: malformed bbox3d zeroes its reward and rpc") {
  const fs::path dir = scratch("malformed");
  cli::cmd_simulate({tiny(), dir, false});
  auto lines = io::read_lines(dir / "gt.jsonl");
  json first = json::parse(lines[0]);
  first["bbox3d"] = {1, 2, 3};
  lines[0] = first.dump();
  std::string text;
  for (const auto& l : lines) text += l + "\n";
  io::write_text(dir / "pred.jsonl", text);
  const auto r = cli::cmd_score({dir / "pred.jsonl", dir / "gt.jsonl", dir / "calib.json", dir / "ranges.json"});
  const json& ex = r.output["examples"][0];
  CHECK(ex["rewards"]["bbox3d"].get<double>() == 0.0);
  CHECK(ex["rewards"]["rpc"].get<double>() == 0.0);
  CHECK(ex["status"]["bbox3d"] == "malformed");
  CHECK(ex["rewards"]["bbox2d"].get<double>() == 1.0);
}

TEST_CASE("score: raw text records and unmatched ids") {
  const fs::path dir = scratch("unmatched");
  cli::cmd_simulate({tiny(), dir, false});
  const auto lines = io::read_lines(dir / "gt.jsonl");
  std::string text;
  // Wrap the first record as raw text with prose around it.
  json first = json::parse(lines[0]);
  const std::string id = first["id"];
  first.erase("id");
  text += json{{"id", id}, {"text", "Answer: " + first.dump()}}.dump() + "\n";
  for (std::size_t i = 1; i < 4; ++i) text += lines[i] + "\n";
  io::write_text(dir / "pred.jsonl", text);
  const auto r = cli::cmd_score({dir / "pred.jsonl", dir / "gt.jsonl", dir / "calib.json", dir / "ranges.json"});
  CHECK(r.output["examples"][0]["rewards"]["bbox3d"].get<double>() == 1.0);
  CHECK(r.output["unmatched"]["gt_only"].size() == 2);
  CHECK(r.exit_code == cli::kUsageError);
}

TEST_CASE("score: empty predictions and missing calibration") {
  const fs::path dir = scratch("empty");
  cli::cmd_simulate({tiny(), dir, false});
  io::write_text(dir / "pred.jsonl", "\n");
  CHECK_THROWS_WITH_AS(cli::cmd_score({dir / "pred.jsonl", dir / "gt.jsonl", dir / "calib.json", std::nullopt}),
                       "no predictions", Error);
  CHECK_THROWS_AS(cli::cmd_score({dir / "gt.jsonl", dir / "gt.jsonl", std::nullopt, dir / "ranges.json"}), Error);
}

TEST_CASE("route: round trip against in-process routing") {
  const fs::path dir = scratch("route");
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  std::string text;
  GroupRollout group;
  for (int i = 0; i < 4; ++i) {
    const std::string out = serialize_canonical(testing::random_output(rng)).text;
    const auto view = reference_tokenizer(out, TokenizerMode::kBoundary);
    RolloutMember m;
    m.parsed = parse_structured_output(out);
    m.partition = char_to_token_spans(view, m.parsed);
    m.rewards = {{u(rng), u(rng), u(rng), u(rng)}, u(rng)};
    text += json{{"id", "a"},
                 {"member", i},
                 {"pieces", view.pieces()},
                 {"rewards",
                  {{"bbox2d", m.rewards.field[0]},
                   {"bbox3d", m.rewards.field[1]},
                   {"kpts2d", m.rewards.field[2]},
                   {"kpts3d", m.rewards.field[3]},
                   {"rpc", m.rewards.rpc}}}}
                .dump() +
            "\n";
    group.members.push_back(std::move(m));
  }
  io::write_text(dir / "rollouts.jsonl", text);
  const auto r = cli::cmd_route({dir / "rollouts.jsonl", {}, std::nullopt});
  const auto routed = route_advantages(group, AdvantageMode::kRouted);
  const auto broad = route_advantages(group, AdvantageMode::kBroadcast);
  const json& members = r.output["groups"][0]["members"];
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(members[i]["routed"].get<std::vector<double>>() == routed.per_token[i]);
    CHECK(members[i]["broadcast"].get<std::vector<double>>() == broad.per_token[i]);
  }
}

TEST_CASE("route: identical members and malformed input") {
  const fs::path dir = scratch("route_bad");
  const json rec = {{"id", 1}, {"member", 0}, {"pieces", {"{\"bbox2d\": [", "1, 2, 3, 4", "]}"}},
                    {"rewards", {{"bbox2d", 0.5}, {"bbox3d", 0}, {"kpts2d", 0}, {"kpts3d", 0}}}};
  json rec2 = rec;
  rec2["member"] = 1;
  io::write_text(dir / "same.jsonl", rec.dump() + "\n" + rec2.dump() + "\n");
  const auto r = cli::cmd_route({dir / "same.jsonl", {}, std::nullopt});
  for (const auto& m : r.output["groups"][0]["members"]) {
    for (const double v : m["routed"].get<std::vector<double>>()) CHECK(v == 0.0);
  }
  io::write_text(dir / "bad.jsonl", rec.dump() + "\n{\"id\": 1, \"member\": 1}\n");
  CHECK_THROWS_WITH_AS(cli::cmd_route({dir / "bad.jsonl", {}, std::nullopt}),
                       doctest::Contains("line 2:"), Error);
}

TEST_CASE("simulate: invalid config and determinism") {
  sim::SimConfig c = tiny();
  c.lambda = 1.5;
  CHECK_THROWS_AS(cli::cmd_simulate({c, std::nullopt, false}), Error);

  const fs::path a = scratch("det_a"), b = scratch("det_b");
  c = tiny();
  c.seed = 7;
  cli::cmd_simulate({c, a, true});
  cli::cmd_simulate({c, b, true});
  for (const char* f : {"report.json", "curves.csv", "scenes.jsonl", "gt.jsonl", "calib.json"}) {
    CHECK(io::read_text(a / f) == io::read_text(b / f));
  }
  const json report = json::parse(io::read_text(a / "report.json"));
  CHECK(report["config"]["seed"] == 7);
  CHECK(report["config"]["lambda"] == 0.15);
}

TEST_CASE("analyze-variance writes the identity residual") {
  const fs::path dir = scratch("variance");
  cli::VarianceOptions v;
  v.config = tiny();
  v.mid_training_steps = 1;
  v.rollouts = 100;
  v.out = dir;
  const auto r = cli::cmd_analyze_variance(v);
  const json j = json::parse(io::read_text(dir / "variance.json"));
  for (const auto& [name, f] : j["fields"].items()) CHECK(f["identity_residual"].get<double>() <= 1e-9);
  CHECK(j["config"]["group_size"] == 8);
  CHECK(r.exit_code == 0);
}
