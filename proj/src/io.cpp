#include "grca/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace grca::io {

namespace {

Eigen::Matrix3d matrix_from(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_array() || j[key].size() != 9) {
    throw Error(std::string("calibration: '") + key + "' must hold 9 numbers");
  }
  Eigen::Matrix3d m;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) m(r, c) = j[key][static_cast<std::size_t>(3 * r + c)].get<double>();
  }
  return m;
}

json matrix_to(const Eigen::Matrix3d& m) {
  json out = json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) out.push_back(m(r, c));
  }
  return out;
}

QuantRange range_from(const json& j, int bins) {
  if (!j.is_array() || j.size() != 2) throw Error("ranges: each axis must be [lo, hi]");
  return {j[0].get<double>(), j[1].get<double>(), bins};
}

}  // namespace

CameraCalibration calibration_from_json(const json& j) {
  CameraCalibration cal;
  cal.K = matrix_from(j, "K");
  cal.R = matrix_from(j, "R");
  if (!j.contains("t") || !j["t"].is_array() || j["t"].size() != 3) {
    throw Error("calibration: 't' must hold 3 numbers");
  }
  for (int k = 0; k < 3; ++k) cal.t[k] = j["t"][static_cast<std::size_t>(k)].get<double>();
  cal.validate();
  return cal;
}

json to_json(const CameraCalibration& cal) {
  return {{"K", matrix_to(cal.K)}, {"R", matrix_to(cal.R)}, {"t", {cal.t.x(), cal.t.y(), cal.t.z()}}};
}

const CameraCalibration* CalibrationSet::find(const std::string& id) const {
  if (const auto it = by_id.find(id); it != by_id.end()) return &it->second;
  return shared ? &*shared : nullptr;
}

CalibrationSet read_calibrations(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw Error("calibration file " + path.string() + ": " + e.what());
  }
  CalibrationSet set;
  if (!j.is_object()) throw Error("calibration file must hold a JSON object");
  if (j.contains("K")) {
    set.shared = calibration_from_json(j);
    return set;
  }
  for (const auto& [id, value] : j.items()) set.by_id.emplace(id, calibration_from_json(value));
  return set;
}

FieldRanges ranges_from_json(const json& j, FieldRanges base) {
  const int bins = j.value("bins", base.x2d.bin_count);
  FieldRanges r = base;
  for (QuantRange* q : {&r.x2d, &r.y2d, &r.x3d, &r.y3d, &r.z3d}) q->bin_count = bins;
  if (j.contains("x2d")) r.x2d = range_from(j["x2d"], bins);
  if (j.contains("y2d")) r.y2d = range_from(j["y2d"], bins);
  if (j.contains("x3d")) r.x3d = range_from(j["x3d"], bins);
  if (j.contains("y3d")) r.y3d = range_from(j["y3d"], bins);
  if (j.contains("z3d")) r.z3d = range_from(j["z3d"], bins);
  r.validate();
  return r;
}

json to_json(const FieldRanges& r) {
  return {{"bins", r.x2d.bin_count},
          {"x2d", {r.x2d.lo, r.x2d.hi}},
          {"y2d", {r.y2d.lo, r.y2d.hi}},
          {"x3d", {r.x3d.lo, r.x3d.hi}},
          {"y3d", {r.y3d.lo, r.y3d.hi}},
          {"z3d", {r.z3d.lo, r.z3d.hi}}};
}

FieldRanges read_ranges(const std::filesystem::path& path, FieldRanges base) {
  try {
    return ranges_from_json(json::parse(read_text(path)), base);
  } catch (const json::exception& e) {
    throw Error("ranges file " + path.string() + ": " + e.what());
  }
}

json output_to_json(const ParsedOutput& p, const std::string& id) {
  json j = json::object();
  j["id"] = id;
  j["answer"] = p.answer;
  j["description"] = p.description;
  j["bbox2d"] = p.bbox2d;
  j["bbox3d"] = p.bbox3d;
  j["kpts2d"] = p.kpts2d;
  j["kpts3d"] = p.kpts3d;
  return j;
}

json to_json(const sim::Metrics& m) {
  return {{"iou_2d", m.iou_2d}, {"iou_3d", m.iou_3d}, {"kpa_2d", m.kpa_2d},
          {"kpa_3d", m.kpa_3d}, {"rpc", m.rpc},       {"parse_ok", m.parse_ok}};
}

json to_json(const sim::SimConfig& c) {
  const auto& s = c.scene;
  const auto& w = c.warmup;
  return {
      {"seed", c.seed},
      {"scenes", c.scene_count},
      {"mode", std::string(mode_name(c.mode))},
      {"lambda", c.lambda},
      {"group_size", c.group_size},
      {"clip_eps", c.clip_eps},
      {"std_eps", c.std_eps},
      {"steps", c.steps},
      {"scenes_per_step", c.scenes_per_step},
      {"inner_epochs", c.inner_epochs},
      {"lr", c.lr},
      {"temperature", c.temperature},
      {"eval_every", c.eval_every},
      {"threads", c.threads},
      {"warmup",
       {{"steps", w.steps}, {"lr", w.lr}, {"annotation_noise", w.annotation_noise},
        {"jitter", w.jitter}}},
      {"scene",
       {{"keypoints", s.keypoints},
        {"image_width", s.image_width},
        {"image_height", s.image_height},
        {"focal", s.focal},
        {"min_half_extent", s.min_half_extent},
        {"max_half_extent", s.max_half_extent},
        {"center_spread", s.center_spread},
        {"min_distance", s.min_distance},
        {"max_distance", s.max_distance},
        {"min_elevation", s.min_elevation},
        {"max_elevation", s.max_elevation}}},
      {"ranges", to_json(c.ranges())},
  };
}

json to_json(const sim::TrainingReport& r) {
  json curve = json::array();
  for (const auto& p : r.curve) {
    json row = to_json(p.metrics);
    row["step"] = p.step;
    row["mean_reward"] = p.mean_reward;
    row["clip_fraction"] = p.clip_fraction;
    curve.push_back(std::move(row));
  }
  // Wall-clock time is left out so that reports are byte-reproducible.
  return {{"config", to_json(r.config)},
          {"warm_start", to_json(r.warm_start)},
          {"final", to_json(r.final_metrics)},
          {"curve", std::move(curve)}};
}

json to_json(const VarianceReport& r) {
  return {{"var_broadcast", r.var_broadcast},
          {"var_routed", r.var_routed},
          {"var_residual", r.var_residual},
          {"scov", r.scov},
          {"identity_residual", r.identity_residual},
          {"n_samples", r.n_samples},
          {"broadcast_exceeds_routed", r.broadcast_exceeds_routed()},
          {"scov_nonnegative", r.scov_nonnegative()},
          {"mean_residual_norm", r.mean_residual_norm},
          {"mean_residual_stderr", r.mean_residual_stderr}};
}

json to_json(const sim::VarianceStudy& s) {
  json fields = json::object();
  for (const auto& f : s.fields) {
    json entry = to_json(f.report);
    entry["max_decomposition_error"] = f.max_decomposition_error;
    fields[std::string(field_name(f.field))] = std::move(entry);
  }
  return {{"config", to_json(s.config)},
          {"scene", s.scene},
          {"rollouts", s.rollouts},
          {"mid_training_steps", s.mid_training_steps},
          {"fields", std::move(fields)}};
}

json to_json(const sim::Scene& s) {
  json k3 = json::array(), k2 = json::array();
  for (const auto& p : s.kpts3d.points) k3.push_back({p.x(), p.y(), p.z()});
  for (const auto& p : s.kpts2d.points) k2.push_back({p.x(), p.y()});
  return {{"code", s.code},
          {"label", s.label},
          {"box3d", {s.box3d.x_min, s.box3d.y_min, s.box3d.z_min, s.box3d.x_max, s.box3d.y_max,
                     s.box3d.z_max}},
          {"box2d", {s.box2d.x_min, s.box2d.y_min, s.box2d.x_max, s.box2d.y_max}},
          {"kpts3d", std::move(k3)},
          {"kpts2d", std::move(k2)},
          {"camera", to_json(s.camera)}};
}

sim::Scene scene_from_json(const json& j) {
  sim::Scene s;
  s.code = j.at("code").get<int>();
  s.label = j.at("label").get<int>();
  const auto b3 = j.at("box3d").get<std::vector<double>>();
  const auto b2 = j.at("box2d").get<std::vector<double>>();
  if (b3.size() != 6 || b2.size() != 4) throw Error("scene: bad box arity");
  s.box3d = {b3[0], b3[1], b3[2], b3[3], b3[4], b3[5]};
  s.box2d = {b2[0], b2[1], b2[2], b2[3]};
  for (const auto& p : j.at("kpts3d")) s.kpts3d.points.emplace_back(p[0], p[1], p[2]);
  for (const auto& p : j.at("kpts2d")) s.kpts2d.points.emplace_back(p[0], p[1]);
  s.camera = calibration_from_json(j.at("camera"));
  return s;
}

std::string curves_csv(const sim::TrainingReport& r) {
  std::string out = "step,iou_2d,iou_3d,kpa_2d,kpa_3d,rpc,parse_ok,mean_reward,clip_fraction\n";
  char buf[256];
  for (const auto& p : r.curve) {
    const auto& m = p.metrics;
    std::snprintf(buf, sizeof buf, "%d,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f\n", p.step, m.iou_2d,
                  m.iou_3d, m.kpa_2d, m.kpa_3d, m.rpc, m.parse_ok, p.mean_reward, p.clip_fraction);
    out += buf;
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

}  // namespace grca::io
