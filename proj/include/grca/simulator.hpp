#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "grca/credit.hpp"
#include "grca/geometry.hpp"
#include "grca/objective.hpp"
#include "grca/schema.hpp"
#include "grca/spans.hpp"

namespace grca::sim {

/// Desk-scale stand-in for a calibrated input: a small integer observation
/// code plus everything needed to score outputs for it.
struct Scene {
  int code = 0;
  Box3D box3d;
  CameraCalibration camera;
  Box2D box2d;  // enclosing box of the projected box3d corners, in pixels
  KeypointSet3D kpts3d;
  KeypointSet2D kpts2d;
  int label = 0;

  GroundTruth ground_truth() const { return {box2d, box3d}; }
};

struct SceneConfig {
  int keypoints = 16;
  double image_width = 512.0;
  double image_height = 512.0;
  double focal = 420.0;
  double min_half_extent = 0.15;
  double max_half_extent = 0.45;
  double center_spread = 0.45;
  double min_distance = 2.6;
  double max_distance = 3.4;
  double min_elevation = 0.2;  // radians
  double max_elevation = 0.6;
};

inline constexpr int kLabelCount = 8;
std::string_view label_name(int label);
std::string description_for(int label);

/// Deterministic in (seed, count, config). Throws Error when a scene cannot
/// be placed in front of the camera and inside the image within 100 tries.
std::vector<Scene> generate_scenes(std::uint64_t seed, int count, const SceneConfig& config = {});

/// Quantized ground truth as a complete six-field output.
ParsedOutput target_output(const Scene& scene, const FieldRanges& ranges);

/// Independent categorical per output slot and scene code: slot 0 is the
/// answer label; slots 1.. are the coordinate bins in canonical order
/// (bbox2d, bbox3d, kpts2d, kpts3d). All other text is a fixed template.
class ToyPolicy {
 public:
  ToyPolicy(int scene_codes, int keypoints, int bin_count);

  int scene_codes() const { return scene_codes_; }
  int keypoints() const { return keypoints_; }
  int bin_count() const { return bin_count_; }
  int slot_count() const { return 1 + coordinate_slots(); }
  int coordinate_slots() const { return 10 + 5 * keypoints_; }
  int slot_size(int slot) const { return slot == 0 ? kLabelCount : bin_count_ + 1; }
  std::size_t offset(int code, int slot) const;
  std::size_t parameter_count() const { return static_cast<std::size_t>(params_.size()); }

  Eigen::VectorXd& parameters() { return params_; }
  const Eigen::VectorXd& parameters() const { return params_; }
  Eigen::Map<Eigen::VectorXd> logits(int code, int slot);
  Eigen::Map<const Eigen::VectorXd> logits(int code, int slot) const;

  Eigen::VectorXd probabilities(int code, int slot, double temperature = 1.0) const;
  double log_prob(int code, int slot, int choice, double temperature = 1.0) const;
  int greedy(int code, int slot) const;

  /// Field owning coordinate slot s (s >= 1).
  Field field_of_slot(int slot) const;
  /// First slot of a field.
  int first_slot(Field f) const;

 private:
  int scene_codes_;
  int keypoints_;
  int bin_count_;
  std::size_t per_scene_;
  Eigen::VectorXd params_;
};

/// Slot choices -> complete ParsedOutput (answer, template description, bins).
ParsedOutput output_from_choices(const ToyPolicy& policy, std::span<const int> choices);

struct WarmupConfig {
  int steps = 60;
  double lr = 1.5;
  /// Fixed per-scene annotation error, in bins (standard deviation).
  double annotation_noise = 0.0;
  /// Fresh per-step target jitter, in bins (standard deviation).
  double jitter = 0.0;
  std::uint64_t seed = 0;
};

struct WarmupResult {
  /// Mean negative log-likelihood per coordinate slot before each step.
  std::vector<double> loss;
};

/// Gradient descent on token cross-entropy of canonical target sequences.
WarmupResult sft_warmup(ToyPolicy& policy, std::span<const Scene> scenes,
                        const FieldRanges& ranges, const WarmupConfig& config);

/// Token-level bookkeeping that links a sampled member back to policy slots.
struct MemberSlots {
  std::vector<int> choices;     // per slot
  std::vector<int> token_slot;  // per token, -1 for template tokens
};

struct SimRollout {
  GroupRollout group;
  std::vector<MemberSlots> slots;
};

struct RolloutConfig {
  int group_size = 8;
  double temperature = 1.0;
  TokenizerMode tokenizer = TokenizerMode::kBoundary;
  bool with_scores = false;
};

/// Samples a group, serializes each member, and scores the re-parsed text.
SimRollout rollout_group(const ToyPolicy& policy, const Scene& scene, const FieldRanges& ranges,
                         const RolloutConfig& config, std::mt19937_64& rng);

/// Fills logp_new (and scores when requested) from the policy's current state.
void refresh_trace(const ToyPolicy& policy, int code, const MemberSlots& slots,
                   LogProbTrace& trace, double temperature, bool with_scores);

struct Metrics {
  double iou_2d = 0;
  double iou_3d = 0;
  double kpa_2d = 0;
  double kpa_3d = 0;
  double rpc = 0;
  double parse_ok = 0;  // fraction of scenes with all four fields ok
};

/// Greedy-decoded metrics averaged over scenes.
Metrics evaluate(const ToyPolicy& policy, std::span<const Scene> scenes, const FieldRanges& ranges);

/// Policy that puts (numerically) all mass on the quantized ground truth.
ToyPolicy oracle_policy(std::span<const Scene> scenes, const FieldRanges& ranges, int keypoints);

struct SimConfig {
  std::uint64_t seed = 0;
  int scene_count = 64;
  SceneConfig scene;
  WarmupConfig warmup{60, 1.5, 25.0, 25.0, 0};
  AdvantageMode mode = AdvantageMode::kRouted;
  double lambda = kDefaultLambda;
  int group_size = 8;
  double clip_eps = kDefaultClipEps;
  double std_eps = kDefaultStdEps;
  int steps = 150;
  int scenes_per_step = 16;
  int inner_epochs = 2;
  double lr = 1250.0;  // per input: the step is scaled by scenes_per_step
  double temperature = 1.0;
  int eval_every = 10;
  int threads = 1;

  FieldRanges ranges() const;
  /// Throws Error naming the first invalid field.
  void validate() const;
};

struct StepMetrics {
  int step = 0;
  Metrics metrics;
  double mean_reward = 0;
  double clip_fraction = 0;
};

struct TrainingReport {
  SimConfig config;
  Metrics warm_start;
  Metrics final_metrics;
  std::vector<StepMetrics> curve;
  double wall_clock_seconds = 0;
};

struct SimState {
  std::vector<Scene> scenes;
  ToyPolicy policy;
};

/// Scenes plus a warm-started policy.
SimState prepare(const SimConfig& config);

/// Broadcast or routed post-training of an already warm-started policy.
TrainingReport train(const SimConfig& config, SimState& state);

/// prepare() followed by train().
TrainingReport simulate(const SimConfig& config);

struct FieldVarianceReport {
  Field field = Field::kBbox2d;
  VarianceReport report;
  double max_decomposition_error = 0;
};

struct VarianceStudy {
  SimConfig config;
  int scene = 0;
  int rollouts = 0;
  int mid_training_steps = 0;
  std::vector<FieldVarianceReport> fields;
};

/// Warm-starts, trains `mid_training_steps` routed steps, freezes the policy,
/// and measures broadcast vs routed span-gradient moments on one scene.
VarianceStudy analyze_variance(const SimConfig& config, int mid_training_steps, int rollouts,
                               int scene = 0);

/// Per-purpose RNG stream derived from the run seed.
std::mt19937_64 derive_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                           std::uint64_t c = 0);

}  // namespace grca::sim
