#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "grca/geometry.hpp"
#include "grca/schema.hpp"
#include "grca/spans.hpp"
#include "grca/trace.hpp"

namespace grca {

struct FieldRewards {
  std::array<double, kNumFields> field{};
  double rpc = 0.0;

  double operator[](Field f) const { return field[index(f)]; }
  double mean_field() const;
};

/// Ground-truth boxes; the keypoint fields are scored for containment in
/// the box of matching dimensionality.
struct GroundTruth {
  Box2D box2d;
  Box3D box3d;
};

struct RewardOptions {
  bool with_rpc = true;
};

/// Field rewards (IoU for boxes, containment for keypoints) plus the
/// reprojection-consistency reward. Non-ok fields score exactly 0; rpc is 0
/// when either box failed or the projection is invalid. Throws Error
/// "calibration required" when rpc is requested without a calibration.
FieldRewards compute_field_rewards(const ParsedOutput& pred, const GroundTruth& gt,
                                   const CameraCalibration* cal, const FieldRanges& ranges,
                                   RewardOptions options = {});

/// Reprojection consistency of already-dequantized boxes.
double reprojection_consistency(const Box2D& box2d, const Box3D& box3d,
                                const CameraCalibration& cal);

inline constexpr double kDefaultStdEps = 1e-4;
inline constexpr double kDefaultLambda = 0.15;

/// (v_i - mean) / (population_std + eps).
std::vector<double> standardize_group(std::span<const double> values, double eps = kDefaultStdEps);

/// (1 - lambda) * mean(field_advs) + lambda * rpc_adv.
double background_advantage(std::span<const double> field_advs, double rpc_adv, double lambda);

struct RolloutMember {
  ParsedOutput parsed;
  TokenSpanPartition partition;
  FieldRewards rewards;
  LogProbTrace trace;

  std::size_t length() const { return partition.size(); }
};

struct GroupRollout {
  std::string input_id;
  std::vector<RolloutMember> members;
};

enum class AdvantageMode { kRouted, kBroadcast };
std::string_view mode_name(AdvantageMode m);
AdvantageMode parse_mode(std::string_view s);

struct RoutedAdvantages {
  AdvantageMode mode = AdvantageMode::kRouted;
  std::vector<std::vector<double>> per_token;  // [member][token]

  // Intermediate per-member quantities, kept for inspection and analysis.
  std::vector<std::array<double, kNumFields>> field_adv;
  std::vector<double> rpc_adv;
  std::vector<double> background_adv;
  std::vector<double> broadcast_adv;
};

struct RoutingOptions {
  double lambda = kDefaultLambda;
  double std_eps = kDefaultStdEps;
};

/// Standardizes each field reward and rpc across the group and assigns
/// token advantages: field tokens get their field's advantage, background
/// tokens the lambda-mixed background advantage. Broadcast mode instead
/// replicates the standardized mean field reward over every token.
/// Throws Error "group too small" for fewer than two members.
RoutedAdvantages route_advantages(const GroupRollout& group, AdvantageMode mode,
                                  RoutingOptions options = {});

}  // namespace grca
