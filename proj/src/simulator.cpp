#include "grca/simulator.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <thread>

#include <Eigen/Geometry>

namespace grca::sim {

namespace {

constexpr std::array<std::string_view, kLabelCount> kLabels = {
    "chair", "table", "lamp", "car", "airplane", "sofa", "bottle", "monitor"};

// Stream tags for derive_rng; distinct purposes never share a stream.
enum : std::uint64_t {
  kTagScenes = 1,
  kTagAnnotation = 2,
  kTagJitter = 3,
  kTagSelect = 4,
  kTagRollout = 5,
  kTagVariance = 6,
};

template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  }
}

Eigen::VectorXd log_softmax(const Eigen::Ref<const Eigen::VectorXd>& logits, double temperature) {
  const Eigen::VectorXd z = logits / temperature;
  const double m = z.maxCoeff();
  const double lse = m + std::log((z.array() - m).exp().sum());
  return z.array() - lse;
}

// Log-probabilities for every slot of one scene code.
std::vector<Eigen::VectorXd> slot_log_probs(const ToyPolicy& policy, int code, double temperature) {
  std::vector<Eigen::VectorXd> out(static_cast<std::size_t>(policy.slot_count()));
  for (int s = 0; s < policy.slot_count(); ++s) {
    out[static_cast<std::size_t>(s)] = log_softmax(policy.logits(code, s), temperature);
  }
  return out;
}

void fill_trace(const std::vector<Eigen::VectorXd>& logp, const ToyPolicy& policy, int code,
                const MemberSlots& slots, LogProbTrace& trace, double temperature,
                bool with_scores) {
  const std::size_t L = slots.token_slot.size();
  trace.logp_new.assign(L, 0.0);
  if (with_scores) trace.scores.emplace(L);
  else trace.scores.reset();
  for (std::size_t t = 0; t < L; ++t) {
    const int s = slots.token_slot[t];
    if (s < 0) continue;
    const int y = slots.choices[static_cast<std::size_t>(s)];
    const Eigen::VectorXd& lp = logp[static_cast<std::size_t>(s)];
    trace.logp_new[t] = lp[y];
    if (with_scores) {
      ScoreBlock& block = (*trace.scores)[t];
      block.offset = policy.offset(code, s);
      block.values = -lp.array().exp() / temperature;
      block.values[y] += 1.0 / temperature;
    }
  }
}

// Maps every slot to the token holding the first character of its value.
std::vector<int> token_slots(const ToyPolicy& policy, const std::string& text,
                             const CanonicalText& canon, const TokenizerView& view) {
  std::vector<int> token_slot(view.size(), -1);
  auto claim = [&](std::size_t c, int slot) {
    const std::size_t t = view.token_at(c);
    if (token_slot[t] != -1) throw Error("two policy slots share one token");
    token_slot[t] = slot;
  };
  const std::string_view key = "\"answer\": \"";
  claim(text.find(key) + key.size(), 0);

  for (const Field f : kGeometricFields) {
    const CharSpan span = canon.spans[index(f)];
    int slot = policy.first_slot(f);
    for (std::size_t c = span.start; c < span.end; ++c) {
      const bool digit = text[c] >= '0' && text[c] <= '9';
      const bool run_start = digit && (c == 0 || !(text[c - 1] >= '0' && text[c - 1] <= '9'));
      if (run_start) claim(c, slot++);
    }
  }
  return token_slot;
}

Eigen::Vector3d sample_in_box(const Box3D& b, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.02, 0.98);
  return {b.x_min + u(rng) * (b.x_max - b.x_min), b.y_min + u(rng) * (b.y_max - b.y_min),
          b.z_min + u(rng) * (b.z_max - b.z_min)};
}

Eigen::Vector2d sample_in_box(const Box2D& b, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.02, 0.98);
  return {b.x_min + u(rng) * b.width(), b.y_min + u(rng) * b.height()};
}

CameraCalibration look_at(const Eigen::Vector3d& eye, const SceneConfig& cfg) {
  const Eigen::Vector3d forward = (-eye).normalized();
  const Eigen::Vector3d right = forward.cross(Eigen::Vector3d::UnitY()).normalized();
  const Eigen::Vector3d down = forward.cross(right);
  CameraCalibration cal;
  cal.R.row(0) = right.transpose();
  cal.R.row(1) = down.transpose();
  cal.R.row(2) = forward.transpose();
  cal.t = -cal.R * eye;
  cal.K << cfg.focal, 0.0, cfg.image_width / 2.0, 0.0, cfg.focal, cfg.image_height / 2.0, 0.0,
      0.0, 1.0;
  return cal;
}

}  // namespace

std::mt19937_64 derive_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b),
                    static_cast<std::uint32_t>(b >> 32), static_cast<std::uint32_t>(c)};
  return std::mt19937_64(seq);
}

std::string_view label_name(int label) { return kLabels.at(static_cast<std::size_t>(label)); }

std::string description_for(int label) {
  return "a " + std::string(label_name(label)) + " seen from a calibrated camera";
}

std::vector<Scene> generate_scenes(std::uint64_t seed, int count, const SceneConfig& cfg) {
  if (count < 1) throw Error("scene count must be >= 1");
  std::vector<Scene> scenes;
  scenes.reserve(static_cast<std::size_t>(count));
  for (int code = 0; code < count; ++code) {
    auto rng = derive_rng(seed, kTagScenes, static_cast<std::uint64_t>(code));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto between = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      Scene s;
      s.code = code;
      Eigen::Vector3d center, half;
      for (int k = 0; k < 3; ++k) {
        center[k] = between(-cfg.center_spread, cfg.center_spread);
        half[k] = between(cfg.min_half_extent, cfg.max_half_extent);
      }
      const Eigen::Vector3d lo = (center - half).cwiseMax(-0.95);
      const Eigen::Vector3d hi = (center + half).cwiseMin(0.95);
      s.box3d = {lo.x(), lo.y(), lo.z(), hi.x(), hi.y(), hi.z()};

      const double dist = between(cfg.min_distance, cfg.max_distance);
      const double azimuth = between(0.0, 2.0 * std::numbers::pi);
      const double elevation = between(cfg.min_elevation, cfg.max_elevation);
      const Eigen::Vector3d eye(dist * std::cos(elevation) * std::cos(azimuth),
                                -dist * std::sin(elevation),
                                dist * std::cos(elevation) * std::sin(azimuth));
      s.camera = look_at(eye, cfg);

      const Projection proj = project_corners(s.box3d, s.camera);
      if (!proj.valid) continue;
      s.box2d = enclosing_box_2d(proj.points);
      if (s.box2d.x_min < 0.0 || s.box2d.y_min < 0.0 || s.box2d.x_max > cfg.image_width ||
          s.box2d.y_max > cfg.image_height) {
        continue;
      }
      for (int k = 0; k < cfg.keypoints; ++k) {
        s.kpts3d.points.push_back(sample_in_box(s.box3d, rng));
        s.kpts2d.points.push_back(sample_in_box(s.box2d, rng));
      }
      s.label = static_cast<int>(rng() % kLabelCount);
      scenes.push_back(std::move(s));
      placed = true;
    }
    if (!placed) throw Error("could not place scene in front of the camera after 100 attempts");
  }
  return scenes;
}

ParsedOutput target_output(const Scene& scene, const FieldRanges& ranges) {
  ParsedOutput p = quantize_fields(scene.box2d, scene.box3d, scene.kpts2d, scene.kpts3d, ranges);
  p.answer = std::string(label_name(scene.label));
  p.description = description_for(scene.label);
  p.answer_status = FieldStatus::kOk;
  p.description_status = FieldStatus::kOk;
  return p;
}

// ---------------------------------------------------------------------------
// ToyPolicy

ToyPolicy::ToyPolicy(int scene_codes, int keypoints, int bin_count)
    : scene_codes_(scene_codes), keypoints_(keypoints), bin_count_(bin_count) {
  if (scene_codes < 1 || keypoints < 1 || bin_count < 1) throw Error("toy policy: bad shape");
  per_scene_ = static_cast<std::size_t>(kLabelCount) +
               static_cast<std::size_t>(coordinate_slots()) * static_cast<std::size_t>(bin_count + 1);
  params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(per_scene_ * scene_codes));
}

std::size_t ToyPolicy::offset(int code, int slot) const {
  const std::size_t base = per_scene_ * static_cast<std::size_t>(code);
  if (slot == 0) return base;
  return base + kLabelCount + static_cast<std::size_t>(slot - 1) * (bin_count_ + 1);
}

Eigen::Map<Eigen::VectorXd> ToyPolicy::logits(int code, int slot) {
  return {params_.data() + offset(code, slot), slot_size(slot)};
}

Eigen::Map<const Eigen::VectorXd> ToyPolicy::logits(int code, int slot) const {
  return {params_.data() + offset(code, slot), slot_size(slot)};
}

Eigen::VectorXd ToyPolicy::probabilities(int code, int slot, double temperature) const {
  return log_softmax(logits(code, slot), temperature).array().exp();
}

double ToyPolicy::log_prob(int code, int slot, int choice, double temperature) const {
  return log_softmax(logits(code, slot), temperature)[choice];
}

int ToyPolicy::greedy(int code, int slot) const {
  Eigen::Index best = 0;
  logits(code, slot).maxCoeff(&best);
  return static_cast<int>(best);
}

int ToyPolicy::first_slot(Field f) const {
  switch (f) {
    case Field::kBbox2d: return 1;
    case Field::kBbox3d: return 5;
    case Field::kKpts2d: return 11;
    case Field::kKpts3d: return 11 + 2 * keypoints_;
  }
  return 1;
}

Field ToyPolicy::field_of_slot(int slot) const {
  if (slot < 5) return Field::kBbox2d;
  if (slot < 11) return Field::kBbox3d;
  if (slot < first_slot(Field::kKpts3d)) return Field::kKpts2d;
  return Field::kKpts3d;
}

ParsedOutput output_from_choices(const ToyPolicy& policy, std::span<const int> c) {
  ParsedOutput p;
  p.answer = std::string(label_name(c[0]));
  p.description = description_for(c[0]);
  p.answer_status = FieldStatus::kOk;
  p.description_status = FieldStatus::kOk;
  for (int k = 0; k < 4; ++k) p.bbox2d[static_cast<std::size_t>(k)] = c[static_cast<std::size_t>(1 + k)];
  for (int k = 0; k < 6; ++k) p.bbox3d[static_cast<std::size_t>(k)] = c[static_cast<std::size_t>(5 + k)];
  const int K = policy.keypoints();
  std::size_t s = static_cast<std::size_t>(policy.first_slot(Field::kKpts2d));
  for (int k = 0; k < K; ++k, s += 2) p.kpts2d.push_back({c[s], c[s + 1]});
  for (int k = 0; k < K; ++k, s += 3) p.kpts3d.push_back({c[s], c[s + 1], c[s + 2]});
  p.status.fill(FieldStatus::kOk);
  return p;
}

namespace {

std::vector<int> target_choices(const ToyPolicy& policy, const ParsedOutput& target, int label) {
  std::vector<int> c;
  c.reserve(static_cast<std::size_t>(policy.slot_count()));
  c.push_back(label);
  c.insert(c.end(), target.bbox2d.begin(), target.bbox2d.end());
  c.insert(c.end(), target.bbox3d.begin(), target.bbox3d.end());
  for (const auto& k : target.kpts2d) c.insert(c.end(), k.begin(), k.end());
  for (const auto& k : target.kpts3d) c.insert(c.end(), k.begin(), k.end());
  return c;
}

}  // namespace

WarmupResult sft_warmup(ToyPolicy& policy, std::span<const Scene> scenes, const FieldRanges& ranges,
                        const WarmupConfig& config) {
  WarmupResult result;
  const int slots = policy.slot_count();
  const int bins = policy.bin_count();

  // Fixed annotation error per scene and slot.
  std::vector<std::vector<int>> annotated;
  for (const Scene& scene : scenes) {
    auto target = target_choices(policy, target_output(scene, ranges), scene.label);
    if (config.annotation_noise > 0.0) {
      auto rng = derive_rng(config.seed, kTagAnnotation, static_cast<std::uint64_t>(scene.code));
      std::normal_distribution<double> noise(0.0, config.annotation_noise);
      for (int s = 1; s < slots; ++s) {
        auto& b = target[static_cast<std::size_t>(s)];
        b = std::clamp(static_cast<int>(std::lround(b + noise(rng))), 0, bins);
      }
    }
    annotated.push_back(std::move(target));
  }

  for (int step = 0; step < config.steps; ++step) {
    double nll = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      const int code = scenes[i].code;
      std::vector<int> target = annotated[i];
      if (config.jitter > 0.0) {
        auto rng = derive_rng(config.seed, kTagJitter, static_cast<std::uint64_t>(step),
                              static_cast<std::uint64_t>(code));
        std::normal_distribution<double> noise(0.0, config.jitter);
        for (int s = 1; s < slots; ++s) {
          auto& b = target[static_cast<std::size_t>(s)];
          b = std::clamp(static_cast<int>(std::lround(b + noise(rng))), 0, bins);
        }
      }
      for (int s = 0; s < slots; ++s) {
        auto logits = policy.logits(code, s);
        const Eigen::VectorXd lp = log_softmax(logits, 1.0);
        const int y = target[static_cast<std::size_t>(s)];
        if (s > 0) {
          nll -= lp[y];
          ++count;
        }
        // d(-log p_y)/d logits = p - e_y
        logits -= config.lr * lp.array().exp().matrix();
        logits[y] += config.lr;
      }
    }
    result.loss.push_back(count ? nll / static_cast<double>(count) : 0.0);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Rollouts

void refresh_trace(const ToyPolicy& policy, int code, const MemberSlots& slots, LogProbTrace& trace,
                   double temperature, bool with_scores) {
  fill_trace(slot_log_probs(policy, code, temperature), policy, code, slots, trace, temperature,
             with_scores);
}

namespace {

SimRollout rollout_with(const std::vector<Eigen::VectorXd>& logp, const ToyPolicy& policy,
                        const Scene& scene, const FieldRanges& ranges, const RolloutConfig& config,
                        std::mt19937_64& rng) {
  SimRollout out;
  out.group.input_id = "scene-" + std::to_string(scene.code);
  const GroundTruth gt = scene.ground_truth();

  std::vector<std::discrete_distribution<int>> dists;
  dists.reserve(logp.size());
  for (const auto& lp : logp) {
    const Eigen::VectorXd p = lp.array().exp();
    dists.emplace_back(p.data(), p.data() + p.size());
  }

  for (int i = 0; i < config.group_size; ++i) {
    MemberSlots slots;
    slots.choices.resize(logp.size());
    for (std::size_t s = 0; s < logp.size(); ++s) slots.choices[s] = dists[s](rng);

    const CanonicalText canon = serialize_canonical(output_from_choices(policy, slots.choices));
    RolloutMember member;
    member.parsed = parse_structured_output(canon.text, policy.bin_count());
    const TokenizerView view = reference_tokenizer(canon.text, config.tokenizer);
    member.partition = char_to_token_spans(view, member.parsed);
    member.rewards = compute_field_rewards(member.parsed, gt, &scene.camera, ranges);
    slots.token_slot = token_slots(policy, canon.text, canon, view);
    fill_trace(logp, policy, scene.code, slots, member.trace, config.temperature,
               config.with_scores);
    member.trace.logp_old = member.trace.logp_new;

    out.group.members.push_back(std::move(member));
    out.slots.push_back(std::move(slots));
  }
  return out;
}

}  // namespace

SimRollout rollout_group(const ToyPolicy& policy, const Scene& scene, const FieldRanges& ranges,
                         const RolloutConfig& config, std::mt19937_64& rng) {
  return rollout_with(slot_log_probs(policy, scene.code, config.temperature), policy, scene, ranges,
                      config, rng);
}

// ---------------------------------------------------------------------------
// Evaluation

Metrics evaluate(const ToyPolicy& policy, std::span<const Scene> scenes, const FieldRanges& ranges) {
  Metrics m;
  if (scenes.empty()) return m;
  for (const Scene& scene : scenes) {
    std::vector<int> choices(static_cast<std::size_t>(policy.slot_count()));
    for (int s = 0; s < policy.slot_count(); ++s) {
      choices[static_cast<std::size_t>(s)] = policy.greedy(scene.code, s);
    }
    const CanonicalText canon = serialize_canonical(output_from_choices(policy, choices));
    const ParsedOutput parsed = parse_structured_output(canon.text, policy.bin_count());
    const FieldRewards r = compute_field_rewards(parsed, scene.ground_truth(), &scene.camera, ranges);
    m.iou_2d += r[Field::kBbox2d];
    m.iou_3d += r[Field::kBbox3d];
    m.kpa_2d += r[Field::kKpts2d];
    m.kpa_3d += r[Field::kKpts3d];
    m.rpc += r.rpc;
    m.parse_ok += std::all_of(parsed.status.begin(), parsed.status.end(),
                              [](FieldStatus s) { return s == FieldStatus::kOk; })
                      ? 1.0
                      : 0.0;
  }
  const double n = static_cast<double>(scenes.size());
  m.iou_2d /= n;
  m.iou_3d /= n;
  m.kpa_2d /= n;
  m.kpa_3d /= n;
  m.rpc /= n;
  m.parse_ok /= n;
  return m;
}

ToyPolicy oracle_policy(std::span<const Scene> scenes, const FieldRanges& ranges, int keypoints) {
  int codes = 0;
  for (const Scene& s : scenes) codes = std::max(codes, s.code + 1);
  ToyPolicy policy(codes, keypoints, ranges.x2d.bin_count);
  for (const Scene& scene : scenes) {
    const auto target = target_choices(policy, target_output(scene, ranges), scene.label);
    for (int s = 0; s < policy.slot_count(); ++s) {
      policy.logits(scene.code, s)[target[static_cast<std::size_t>(s)]] = 60.0;
    }
  }
  return policy;
}

// ---------------------------------------------------------------------------
// Training

FieldRanges SimConfig::ranges() const {
  return FieldRanges::image(scene.image_width, scene.image_height);
}

void SimConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(std::string("invalid config: ") + what);
  };
  require(lambda >= 0.0 && lambda <= 1.0, "lambda must be in [0, 1]");
  require(group_size >= 2, "group_size must be >= 2");
  require(clip_eps > 0.0, "clip_eps must be > 0");
  require(std_eps > 0.0, "std_eps must be > 0");
  require(scene_count >= 1, "scenes must be >= 1");
  require(steps >= 0, "steps must be >= 0");
  require(scenes_per_step >= 1 && scenes_per_step <= scene_count,
          "scenes_per_step must be in [1, scenes]");
  require(inner_epochs >= 1, "inner_epochs must be >= 1");
  require(lr > 0.0, "lr must be > 0");
  require(temperature > 0.0, "temperature must be > 0");
  require(eval_every >= 1, "eval_every must be >= 1");
  require(threads >= 1, "threads must be >= 1");
  require(warmup.steps >= 0, "warmup steps must be >= 0");
  require(warmup.lr > 0.0, "warmup lr must be > 0");
  require(warmup.annotation_noise >= 0.0 && warmup.jitter >= 0.0, "warmup noise must be >= 0");
  require(scene.keypoints >= 1, "keypoints must be >= 1");
  ranges().validate();
}

SimState prepare(const SimConfig& config) {
  config.validate();
  SimState state{generate_scenes(config.seed, config.scene_count, config.scene),
                 ToyPolicy(config.scene_count, config.scene.keypoints, 1000)};
  WarmupConfig warm = config.warmup;
  warm.seed = config.seed;
  sft_warmup(state.policy, state.scenes, config.ranges(), warm);
  return state;
}

TrainingReport train(const SimConfig& config, SimState& state) {
  config.validate();
  const auto started = std::chrono::steady_clock::now();
  const FieldRanges ranges = config.ranges();
  ToyPolicy& policy = state.policy;
  const auto& scenes = state.scenes;

  TrainingReport report;
  report.config = config;
  report.warm_start = evaluate(policy, scenes, ranges);
  report.curve.push_back({0, report.warm_start, 0.0, 0.0});

  const RolloutConfig rollout_cfg{config.group_size, config.temperature, TokenizerMode::kBoundary,
                                  false};
  const RoutingOptions routing{config.lambda, config.std_eps};
  const std::size_t k = static_cast<std::size_t>(config.scenes_per_step);

  std::vector<std::size_t> order(scenes.size());
  for (int step = 0; step < config.steps; ++step) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto select_rng = derive_rng(config.seed, kTagSelect, static_cast<std::uint64_t>(step));
    std::shuffle(order.begin(), order.end(), select_rng);

    std::vector<SimRollout> rollouts(k);
    std::vector<std::vector<Eigen::VectorXd>> logp(k);
    std::vector<GroupRollout> groups(k);
    std::vector<RoutedAdvantages> advs(k);
    parallel_for(k, config.threads, [&](std::size_t j) {
      const Scene& scene = scenes[order[j]];
      logp[j] = slot_log_probs(policy, scene.code, config.temperature);
      auto rng = derive_rng(config.seed, kTagRollout, static_cast<std::uint64_t>(step),
                            static_cast<std::uint64_t>(scene.code));
      rollouts[j] = rollout_with(logp[j], policy, scene, ranges, rollout_cfg, rng);
      advs[j] = route_advantages(rollouts[j].group, config.mode, routing);
    });
    for (std::size_t j = 0; j < k; ++j) groups[j] = std::move(rollouts[j].group);

    double clip_fraction = 0.0;
    for (int epoch = 0; epoch < config.inner_epochs; ++epoch) {
      if (epoch > 0) {
        parallel_for(k, config.threads, [&](std::size_t j) {
          const int code = scenes[order[j]].code;
          logp[j] = slot_log_probs(policy, code, config.temperature);
          for (std::size_t i = 0; i < groups[j].members.size(); ++i) {
            fill_trace(logp[j], policy, code, rollouts[j].slots[i], groups[j].members[i].trace,
                       config.temperature, false);
          }
        });
      }
      const SurrogateEvaluation eval = evaluate_surrogate(groups, advs, config.clip_eps);
      clip_fraction = eval.total_tokens
                          ? static_cast<double>(eval.clipped_tokens) / eval.total_tokens
                          : 0.0;

      // Exact ascent step: d logp(y)/d logits = (e_y - p) / T. Groups cover
      // distinct scene codes, so their parameter blocks never overlap. The
      // surrogate averages over all members; lr is a per-input step size.
      const double step_size = config.lr * static_cast<double>(k) / config.temperature;
      std::size_t flat = 0;
      for (std::size_t j = 0; j < k; ++j) {
        const int code = scenes[order[j]].code;
        std::vector<double> coeff(static_cast<std::size_t>(policy.slot_count()), 0.0);
        std::vector<Eigen::VectorXd> grad(static_cast<std::size_t>(policy.slot_count()));
        for (std::size_t i = 0; i < groups[j].members.size(); ++i, ++flat) {
          const MemberSlots& ms = rollouts[j].slots[i];
          const auto& d = eval.dlogp[flat];
          for (std::size_t t = 0; t < ms.token_slot.size(); ++t) {
            const int s = ms.token_slot[t];
            if (s < 0 || d[t] == 0.0) continue;
            auto& g = grad[static_cast<std::size_t>(s)];
            if (g.size() == 0) g = Eigen::VectorXd::Zero(policy.slot_size(s));
            g[ms.choices[static_cast<std::size_t>(s)]] += d[t];
            coeff[static_cast<std::size_t>(s)] += d[t];
          }
        }
        for (int s = 0; s < policy.slot_count(); ++s) {
          const auto& g = grad[static_cast<std::size_t>(s)];
          if (g.size() == 0) continue;
          const Eigen::VectorXd p = logp[j][static_cast<std::size_t>(s)].array().exp();
          policy.logits(code, s) += step_size * (g - coeff[static_cast<std::size_t>(s)] * p);
        }
      }
    }

    if ((step + 1) % config.eval_every == 0 || step + 1 == config.steps) {
      double reward = 0.0;
      std::size_t members = 0;
      for (const auto& g : groups) {
        for (const auto& m : g.members) {
          reward += m.rewards.mean_field();
          ++members;
        }
      }
      report.curve.push_back({step + 1, evaluate(policy, scenes, ranges),
                              members ? reward / static_cast<double>(members) : 0.0,
                              clip_fraction});
    }
  }
  report.final_metrics = config.steps > 0 ? report.curve.back().metrics : report.warm_start;
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

TrainingReport simulate(const SimConfig& config) {
  SimState state = prepare(config);
  return train(config, state);
}

// ---------------------------------------------------------------------------
// Variance study

VarianceStudy analyze_variance(const SimConfig& config, int mid_training_steps, int rollouts,
                               int scene) {
  config.validate();
  if (rollouts < 2) throw Error("invalid config: rollouts must be >= 2");
  if (mid_training_steps < 0) throw Error("invalid config: steps must be >= 0");
  if (scene < 0 || scene >= config.scene_count) throw Error("invalid config: scene out of range");

  SimConfig mid = config;
  mid.mode = AdvantageMode::kRouted;
  mid.steps = mid_training_steps;
  SimState state = prepare(mid);
  train(mid, state);

  VarianceStudy study;
  study.config = config;
  study.scene = scene;
  study.rollouts = rollouts;
  study.mid_training_steps = mid_training_steps;

  const FieldRanges ranges = config.ranges();
  const Scene& target = state.scenes[static_cast<std::size_t>(scene)];
  const auto logp = slot_log_probs(state.policy, target.code, config.temperature);
  const RolloutConfig rollout_cfg{config.group_size, config.temperature, TokenizerMode::kBoundary,
                                  true};
  const RoutingOptions routing{config.lambda, config.std_eps};

  std::array<VarianceAccumulator, kNumFields> acc;
  std::array<double, kNumFields> worst{};
  int drawn = 0;
  for (std::uint64_t g = 0; drawn < rollouts; ++g) {
    auto rng = derive_rng(config.seed, kTagVariance, g);
    const SimRollout r = rollout_with(logp, state.policy, target, ranges, rollout_cfg, rng);
    const RoutedAdvantages adv = route_advantages(r.group, AdvantageMode::kRouted, routing);
    for (std::size_t i = 0; i < r.group.members.size() && drawn < rollouts; ++i, ++drawn) {
      const RolloutMember& m = r.group.members[i];
      for (const Field f : kGeometricFields) {
        AnalysisSample sample{restricted_score(m.trace, m.partition.tokens(f)),
                              adv.broadcast_adv[i], adv.field_adv[i][index(f)]};
        worst[index(f)] = std::max(worst[index(f)], decomposition_error(sample));
        acc[index(f)].add(sample);
      }
    }
  }
  for (const Field f : kGeometricFields) {
    study.fields.push_back({f, acc[index(f)].report(), worst[index(f)]});
  }
  return study;
}

}  // namespace grca::sim
