#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "grca/credit.hpp"
#include "grca/schema.hpp"
#include "grca/simulator.hpp"

namespace grca::cli {

enum ExitCode : int { kSuccess = 0, kUsageError = 1, kCheckFailed = 2 };

/// What a command produced: its JSON document and process exit code.
struct CommandResult {
  int exit_code = kSuccess;
  nlohmann::json output;
};

struct ScoreOptions {
  std::filesystem::path pred;
  std::filesystem::path gt;
  std::optional<std::filesystem::path> calib;
  std::optional<std::filesystem::path> ranges;
};

/// Joins predictions to ground truth by "id" and reports per-example and
/// aggregate IoU_2D/3D, KPA-2D/3D and RPC. Throws Error for unreadable or
/// empty inputs; exits with kUsageError when more than 10% of ids are unmatched.
CommandResult cmd_score(const ScoreOptions& options);

struct RouteOptions {
  std::filesystem::path rollouts;
  RoutingOptions routing;
  std::optional<std::filesystem::path> ranges;
};

/// Reads grouped rollouts (token pieces + rewards) and emits per-token
/// advantages in both routed and broadcast modes.
CommandResult cmd_route(const RouteOptions& options);

struct SimulateOptions {
  sim::SimConfig config;
  std::optional<std::filesystem::path> out;
  bool check = false;
};

/// Runs warm-up plus post-training and writes report.json, curves.csv,
/// scenes.jsonl, gt.jsonl and calib.json under `out`.
CommandResult cmd_simulate(const SimulateOptions& options);

struct VarianceOptions {
  sim::SimConfig config;
  int mid_training_steps = 50;
  int rollouts = 10000;
  int scene = 0;
  std::optional<std::filesystem::path> out;
  bool check = false;
};

/// Writes variance.json under `out`.
CommandResult cmd_analyze_variance(const VarianceOptions& options);

}  // namespace grca::cli
