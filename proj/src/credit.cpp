#include "grca/credit.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace grca {

double FieldRewards::mean_field() const {
  return std::accumulate(field.begin(), field.end(), 0.0) / static_cast<double>(kNumFields);
}

double reprojection_consistency(const Box2D& box2d, const Box3D& box3d,
                                const CameraCalibration& cal) {
  const Projection proj = project_corners(box3d, cal);
  if (!proj.valid) return 0.0;
  return iou_2d(box2d, enclosing_box_2d(proj.points));
}

FieldRewards compute_field_rewards(const ParsedOutput& pred, const GroundTruth& gt,
                                   const CameraCalibration* cal, const FieldRanges& ranges,
                                   RewardOptions options) {
  if (options.with_rpc && cal == nullptr) throw Error("calibration required");

  const GeometricValues g = dequantize_fields(pred, ranges);
  FieldRewards r;
  if (g.box2d) r.field[index(Field::kBbox2d)] = iou_2d(*g.box2d, gt.box2d);
  if (g.box3d) r.field[index(Field::kBbox3d)] = iou_3d(*g.box3d, gt.box3d);
  if (g.kpts2d) r.field[index(Field::kKpts2d)] = keypoint_containment(*g.kpts2d, gt.box2d);
  if (g.kpts3d) r.field[index(Field::kKpts3d)] = keypoint_containment(*g.kpts3d, gt.box3d);
  if (options.with_rpc && g.box2d && g.box3d) {
    r.rpc = reprojection_consistency(*g.box2d, *g.box3d, *cal);
  }
  return r;
}

std::vector<double> standardize_group(std::span<const double> values, double eps) {
  if (values.empty()) return {};
  // A tied group has no signal; the summed mean could otherwise drift by an ulp.
  if (std::adjacent_find(values.begin(), values.end(), std::not_equal_to<>()) == values.end()) {
    return std::vector<double>(values.size(), 0.0);
  }
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (const double v : values) ss += (v - mean) * (v - mean);
  const double denom = std::sqrt(ss / n) + eps;
  std::vector<double> out(values.size());
  std::transform(values.begin(), values.end(), out.begin(),
                 [&](double v) { return (v - mean) / denom; });
  return out;
}

double background_advantage(std::span<const double> field_advs, double rpc_adv, double lambda) {
  const double mean = field_advs.empty()
                          ? 0.0
                          : std::accumulate(field_advs.begin(), field_advs.end(), 0.0) /
                                static_cast<double>(field_advs.size());
  return (1.0 - lambda) * mean + lambda * rpc_adv;
}

std::string_view mode_name(AdvantageMode m) {
  return m == AdvantageMode::kRouted ? "routed" : "broadcast";
}

AdvantageMode parse_mode(std::string_view s) {
  if (s == "routed") return AdvantageMode::kRouted;
  if (s == "broadcast") return AdvantageMode::kBroadcast;
  throw Error("unknown mode '" + std::string(s) + "'");
}

RoutedAdvantages route_advantages(const GroupRollout& group, AdvantageMode mode,
                                  RoutingOptions options) {
  const std::size_t G = group.members.size();
  if (G < 2) throw Error("group too small");

  RoutedAdvantages out;
  out.mode = mode;
  out.field_adv.assign(G, {});
  out.rpc_adv.assign(G, 0.0);
  out.background_adv.assign(G, 0.0);
  out.broadcast_adv.assign(G, 0.0);
  out.per_token.resize(G);

  // Non-ok fields carry zero reward regardless of what the caller supplied.
  auto reward = [&](std::size_t i, Field f) {
    const RolloutMember& m = group.members[i];
    return m.parsed.ok(f) ? m.rewards[f] : 0.0;
  };

  std::vector<double> column(G);
  for (const Field f : kGeometricFields) {
    for (std::size_t i = 0; i < G; ++i) column[i] = reward(i, f);
    const auto adv = standardize_group(column, options.std_eps);
    for (std::size_t i = 0; i < G; ++i) out.field_adv[i][index(f)] = adv[i];
  }
  for (std::size_t i = 0; i < G; ++i) {
    const ParsedOutput& parsed = group.members[i].parsed;
    column[i] = parsed.ok(Field::kBbox2d) && parsed.ok(Field::kBbox3d)
                    ? group.members[i].rewards.rpc
                    : 0.0;
  }
  out.rpc_adv = standardize_group(column, options.std_eps);

  for (std::size_t i = 0; i < G; ++i) {
    double sum = 0.0;
    for (const Field f : kGeometricFields) sum += reward(i, f);
    column[i] = sum / static_cast<double>(kNumFields);
  }
  out.broadcast_adv = standardize_group(column, options.std_eps);

  for (std::size_t i = 0; i < G; ++i) {
    out.background_adv[i] =
        background_advantage(out.field_adv[i], out.rpc_adv[i], options.lambda);
    const auto& roles = group.members[i].partition.roles;
    auto& tokens = out.per_token[i];
    tokens.resize(roles.size());
    for (std::size_t t = 0; t < roles.size(); ++t) {
      if (mode == AdvantageMode::kBroadcast) {
        tokens[t] = out.broadcast_adv[i];
      } else if (roles[t] == TokenRole::kBackground) {
        tokens[t] = out.background_adv[i];
      } else {
        tokens[t] = out.field_adv[i][static_cast<std::size_t>(roles[t])];
      }
    }
  }
  return out;
}

}  // namespace grca
