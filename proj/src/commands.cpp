#include "grca/commands.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "grca/io.hpp"

namespace grca::cli {

using nlohmann::json;

namespace {

std::string id_of(const json& j) {
  if (!j.is_object() || !j.contains("id")) throw Error("missing \"id\"");
  const json& id = j["id"];
  if (id.is_string()) return id.get<std::string>();
  if (id.is_number_integer()) return std::to_string(id.get<long long>());
  throw Error("\"id\" must be a string or integer");
}

// A record either carries the raw response under "text" or is itself the
// structured output (extra keys such as "id" are ignored by the parser).
std::string response_text(const json& j, const std::string& line) {
  if (j.contains("text") && j["text"].is_string()) return j["text"].get<std::string>();
  return line;
}

json status_json(const ParsedOutput& p) {
  json s = json::object();
  s["answer"] = std::string(status_name(p.answer_status));
  s["description"] = std::string(status_name(p.description_status));
  for (const Field f : kGeometricFields) {
    s[std::string(field_name(f))] = std::string(status_name(p.status_of(f)));
  }
  return s;
}

json rewards_json(const FieldRewards& r) {
  json j = json::object();
  for (const Field f : kGeometricFields) j[std::string(field_name(f))] = r[f];
  j["rpc"] = r.rpc;
  return j;
}

bool finite(const sim::Metrics& m) {
  return std::isfinite(m.iou_2d) && std::isfinite(m.iou_3d) && std::isfinite(m.kpa_2d) &&
         std::isfinite(m.kpa_3d) && std::isfinite(m.rpc);
}

}  // namespace

CommandResult cmd_score(const ScoreOptions& options) {
  const FieldRanges ranges = options.ranges ? io::read_ranges(*options.ranges) : FieldRanges{};
  const int bins = ranges.x2d.bin_count;
  std::optional<io::CalibrationSet> calib;
  if (options.calib) calib = io::read_calibrations(*options.calib);

  std::map<std::string, GroundTruth> gt;
  std::vector<std::string> gt_order;
  {
    const auto lines = io::read_lines(options.gt);
    for (std::size_t n = 0; n < lines.size(); ++n) {
      if (lines[n].find_first_not_of(" \t") == std::string::npos) continue;
      const std::string where = "gt line " + std::to_string(n + 1) + ": ";
      json j;
      try {
        j = json::parse(lines[n]);
      } catch (const json::exception& e) {
        throw Error(where + e.what());
      }
      std::string id;
      try {
        id = id_of(j);
      } catch (const Error& e) {
        throw Error(where + e.what());
      }
      const ParsedOutput parsed = parse_structured_output(response_text(j, lines[n]), bins);
      const GeometricValues g = dequantize_fields(parsed, ranges);
      if (!g.box2d || !g.box3d) throw Error(where + "ground truth boxes must be well-formed");
      if (!gt.emplace(id, GroundTruth{*g.box2d, *g.box3d}).second) {
        throw Error(where + "duplicate id '" + id + "'");
      }
      gt_order.push_back(id);
    }
  }

  json examples = json::array();
  json invalid = json::array();
  std::set<std::string> seen;
  std::vector<std::string> pred_only;
  sim::Metrics sum;
  std::size_t matched = 0;
  std::size_t records = 0;

  const auto lines = io::read_lines(options.pred);
  for (std::size_t n = 0; n < lines.size(); ++n) {
    if (lines[n].find_first_not_of(" \t") == std::string::npos) continue;
    ++records;
    json j;
    std::string id;
    try {
      j = json::parse(lines[n]);
      id = id_of(j);
    } catch (const std::exception& e) {
      invalid.push_back({{"line", n + 1}, {"error", e.what()}});
      continue;
    }
    if (!seen.insert(id).second) {
      invalid.push_back({{"line", n + 1}, {"error", "duplicate id '" + id + "'"}});
      continue;
    }
    const auto it = gt.find(id);
    if (it == gt.end()) {
      pred_only.push_back(id);
      continue;
    }
    const CameraCalibration* cal = calib ? calib->find(id) : nullptr;
    if (cal == nullptr) throw Error("calibration required (id '" + id + "')");

    const ParsedOutput parsed = parse_structured_output(response_text(j, lines[n]), bins);
    const FieldRewards r = compute_field_rewards(parsed, it->second, cal, ranges);
    const GeometricValues g = dequantize_fields(parsed, ranges);
    json swapped = json::array();
    for (const Field f : kGeometricFields) {
      if (g.swapped[index(f)]) swapped.push_back(std::string(field_name(f)));
    }
    examples.push_back({{"id", id},
                        {"line", n + 1},
                        {"rewards", rewards_json(r)},
                        {"status", status_json(parsed)},
                        {"swapped", std::move(swapped)}});
    sum.iou_2d += r[Field::kBbox2d];
    sum.iou_3d += r[Field::kBbox3d];
    sum.kpa_2d += r[Field::kKpts2d];
    sum.kpa_3d += r[Field::kKpts3d];
    sum.rpc += r.rpc;
    sum.parse_ok += std::all_of(parsed.status.begin(), parsed.status.end(),
                                [](FieldStatus s) { return s == FieldStatus::kOk; })
                        ? 1.0
                        : 0.0;
    ++matched;
  }
  if (records == 0) throw Error("no predictions");

  std::vector<std::string> gt_only;
  for (const auto& id : gt_order) {
    if (!seen.contains(id)) gt_only.push_back(id);
  }

  if (matched > 0) {
    const double n = static_cast<double>(matched);
    sum.iou_2d /= n;
    sum.iou_3d /= n;
    sum.kpa_2d /= n;
    sum.kpa_3d /= n;
    sum.rpc /= n;
    sum.parse_ok /= n;
  }
  const std::size_t universe = gt_order.size() + pred_only.size();
  const double unmatched_fraction =
      universe ? static_cast<double>(pred_only.size() + gt_only.size()) / universe : 0.0;

  CommandResult result;
  result.output = {{"aggregate", io::to_json(sum)},
                   {"matched", matched},
                   {"unmatched", {{"pred_only", pred_only}, {"gt_only", gt_only}}},
                   {"unmatched_fraction", unmatched_fraction},
                   {"invalid", std::move(invalid)},
                   {"examples", std::move(examples)},
                   {"ranges", io::to_json(ranges)}};
  if (unmatched_fraction > 0.10) result.exit_code = kUsageError;
  return result;
}

CommandResult cmd_route(const RouteOptions& options) {
  const FieldRanges ranges = options.ranges ? io::read_ranges(*options.ranges) : FieldRanges{};
  const int bins = ranges.x2d.bin_count;

  struct Pending {
    int member;
    RolloutMember value;
  };
  std::vector<std::string> order;
  std::map<std::string, std::vector<Pending>> pending;

  const auto lines = io::read_lines(options.rollouts);
  for (std::size_t n = 0; n < lines.size(); ++n) {
    if (lines[n].find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(n + 1) + ": ";
    try {
      const json j = json::parse(lines[n]);
      const std::string id = id_of(j);
      if (!j.contains("member") || !j["member"].is_number_integer()) {
        throw Error("missing integer \"member\"");
      }
      if (!j.contains("pieces") || !j["pieces"].is_array()) throw Error("missing \"pieces\" array");
      std::vector<std::string> pieces;
      for (const auto& p : j["pieces"]) {
        if (!p.is_string()) throw Error("token pieces must be strings");
        pieces.push_back(p.get<std::string>());
      }
      if (!j.contains("rewards") || !j["rewards"].is_object()) {
        throw Error("missing \"rewards\" object");
      }
      const json& rw = j["rewards"];
      RolloutMember m;
      for (const Field f : kGeometricFields) {
        const std::string key(field_name(f));
        if (!rw.contains(key) || !rw[key].is_number()) throw Error("missing reward '" + key + "'");
        m.rewards.field[index(f)] = rw[key].get<double>();
      }
      m.rewards.rpc = rw.value("rpc", 0.0);

      const TokenizerView view(std::move(pieces));
      m.parsed = parse_structured_output(view.text(), bins);
      m.partition = char_to_token_spans(view, m.parsed);
      if (!pending.contains(id)) order.push_back(id);
      pending[id].push_back({j["member"].get<int>(), std::move(m)});
    } catch (const json::exception& e) {
      throw Error(where + e.what());
    } catch (const Error& e) {
      throw Error(where + e.what());
    }
  }
  if (order.empty()) throw Error("no rollouts");

  json groups = json::array();
  for (const auto& id : order) {
    auto& members = pending[id];
    std::stable_sort(members.begin(), members.end(),
                     [](const Pending& a, const Pending& b) { return a.member < b.member; });
    GroupRollout group;
    group.input_id = id;
    for (auto& m : members) group.members.push_back(std::move(m.value));
    if (group.members.size() < 2) throw Error("group '" + id + "' too small");

    const RoutedAdvantages routed = route_advantages(group, AdvantageMode::kRouted, options.routing);
    const RoutedAdvantages broad = route_advantages(group, AdvantageMode::kBroadcast, options.routing);
    json out_members = json::array();
    for (std::size_t i = 0; i < group.members.size(); ++i) {
      json field_adv = json::object();
      for (const Field f : kGeometricFields) {
        field_adv[std::string(field_name(f))] = routed.field_adv[i][index(f)];
      }
      out_members.push_back({{"member", members[i].member},
                             {"tokens", group.members[i].length()},
                             {"status", status_json(group.members[i].parsed)},
                             {"field_advantages", std::move(field_adv)},
                             {"rpc_advantage", routed.rpc_adv[i]},
                             {"background_advantage", routed.background_adv[i]},
                             {"broadcast_advantage", broad.broadcast_adv[i]},
                             {"routed", routed.per_token[i]},
                             {"broadcast", broad.per_token[i]}});
    }
    groups.push_back({{"id", id}, {"members", std::move(out_members)}});
  }

  CommandResult result;
  result.output = {{"config",
                    {{"lambda", options.routing.lambda},
                     {"std_eps", options.routing.std_eps},
                     {"ranges", io::to_json(ranges)}}},
                   {"groups", std::move(groups)}};
  return result;
}

CommandResult cmd_simulate(const SimulateOptions& options) {
  options.config.validate();
  const sim::TrainingReport report = sim::simulate(options.config);

  CommandResult result;
  result.output = io::to_json(report);

  if (options.out) {
    const auto& dir = *options.out;
    io::write_text(dir / "report.json", result.output.dump(2) + "\n");
    io::write_text(dir / "curves.csv", io::curves_csv(report));

    const FieldRanges ranges = options.config.ranges();
    const auto scenes =
        sim::generate_scenes(options.config.seed, options.config.scene_count, options.config.scene);
    std::string scenes_jsonl, gt_jsonl;
    json calib = json::object();
    for (const auto& s : scenes) {
      const std::string id = "scene-" + std::to_string(s.code);
      scenes_jsonl += io::to_json(s).dump() + "\n";
      gt_jsonl += io::output_to_json(sim::target_output(s, ranges), id).dump() + "\n";
      calib[id] = io::to_json(s.camera);
    }
    io::write_text(dir / "scenes.jsonl", scenes_jsonl);
    io::write_text(dir / "gt.jsonl", gt_jsonl);
    io::write_text(dir / "calib.json", calib.dump(2) + "\n");
    io::write_text(dir / "ranges.json", io::to_json(ranges).dump(2) + "\n");
  }

  if (options.check) {
    const bool ok = finite(report.final_metrics) &&
                    report.final_metrics.kpa_2d >= report.warm_start.kpa_2d - 0.02;
    result.output["check"] = {{"passed", ok},
                              {"rule", "final metrics finite; KPA-2D within 0.02 of warm start"}};
    if (!ok) result.exit_code = kCheckFailed;
  }
  return result;
}

CommandResult cmd_analyze_variance(const VarianceOptions& options) {
  options.config.validate();
  const sim::VarianceStudy study = sim::analyze_variance(options.config, options.mid_training_steps,
                                                         options.rollouts, options.scene);
  CommandResult result;
  result.output = io::to_json(study);

  if (options.check) {
    bool ok = true;
    for (const auto& f : study.fields) {
      ok = ok && f.report.identity_residual <= 1e-9 && f.max_decomposition_error <= 1e-10 &&
           f.report.broadcast_exceeds_routed();
    }
    result.output["check"] = {
        {"passed", ok},
        {"rule", "identity_residual <= 1e-9, per-sample decomposition <= 1e-10, "
                 "var_broadcast > var_routed for every field"}};
    if (!ok) result.exit_code = kCheckFailed;
  }
  if (options.out) io::write_text(*options.out / "variance.json", result.output.dump(2) + "\n");
  return result;
}

}  // namespace grca::cli
