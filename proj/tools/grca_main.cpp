#include <chrono>
#include <iostream>

#include <CLI11.hpp>

#include "grca/commands.hpp"

namespace {

using grca::cli::CommandResult;

void add_config_options(CLI::App* app, grca::sim::SimConfig& c, std::string& mode) {
  app->add_option("--seed", c.seed, "RNG seed");
  app->add_option("--scenes", c.scene_count, "number of scenes");
  app->add_option("--steps", c.steps, "post-training steps");
  app->add_option("--mode", mode, "routed or broadcast")->check(CLI::IsMember({"routed", "broadcast"}));
  app->add_option("--lambda", c.lambda, "background mixing weight");
  app->add_option("--group-size", c.group_size, "rollouts per input");
  app->add_option("--clip-eps", c.clip_eps, "surrogate clip range");
  app->add_option("--std-eps", c.std_eps, "standardization epsilon");
  app->add_option("--scenes-per-step", c.scenes_per_step, "inputs per step");
  app->add_option("--inner-epochs", c.inner_epochs, "updates per batch");
  app->add_option("--lr", c.lr, "post-training learning rate");
  app->add_option("--temperature", c.temperature, "sampling temperature");
  app->add_option("--eval-every", c.eval_every, "evaluation interval");
  app->add_option("--warmup-steps", c.warmup.steps, "supervised warm-up steps");
  app->add_option("--threads", c.threads, "worker threads");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Geometric reward credit assignment"};
  app.require_subcommand(1);

  grca::cli::ScoreOptions score;
  std::string calib, ranges;
  auto* score_cmd = app.add_subcommand("score", "score predictions against ground truth");
  score_cmd->add_option("--pred", score.pred, "predictions JSONL")->required();
  score_cmd->add_option("--gt", score.gt, "ground truth JSONL")->required();
  score_cmd->add_option("--calib", calib, "calibration JSON");
  score_cmd->add_option("--ranges", ranges, "quantization ranges JSON");

  grca::cli::RouteOptions route;
  std::string route_ranges;
  auto* route_cmd = app.add_subcommand("route", "per-token advantages for grouped rollouts");
  route_cmd->add_option("--rollouts", route.rollouts, "rollouts JSONL")->required();
  route_cmd->add_option("--lambda", route.routing.lambda, "background mixing weight");
  route_cmd->add_option("--std-eps", route.routing.std_eps, "standardization epsilon");
  route_cmd->add_option("--ranges", route_ranges, "quantization ranges JSON");

  grca::cli::SimulateOptions simulate;
  std::string sim_mode = "routed", sim_out;
  auto* sim_cmd = app.add_subcommand("simulate", "warm-up plus post-training on the toy task");
  add_config_options(sim_cmd, simulate.config, sim_mode);
  sim_cmd->add_option("--out", sim_out, "output directory");
  sim_cmd->add_flag("--check", simulate.check, "exit 2 on regression");

  grca::cli::VarianceOptions variance;
  std::string var_mode = "routed", var_out;
  auto* var_cmd = app.add_subcommand("analyze-variance", "gradient variance decomposition");
  add_config_options(var_cmd, variance.config, var_mode);
  var_cmd->add_option("--mid-steps", variance.mid_training_steps, "training steps before sampling");
  var_cmd->add_option("--rollouts", variance.rollouts, "sampled rollouts");
  var_cmd->add_option("--scene", variance.scene, "scene index");
  var_cmd->add_option("--out", var_out, "output directory");
  var_cmd->add_flag("--check", variance.check, "exit 2 when the checks fail");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : grca::cli::kUsageError;
  }

  try {
    CommandResult result;
    const auto start = std::chrono::steady_clock::now();
    if (*score_cmd) {
      if (!calib.empty()) score.calib = calib;
      if (!ranges.empty()) score.ranges = ranges;
      result = grca::cli::cmd_score(score);
    } else if (*route_cmd) {
      if (!route_ranges.empty()) route.ranges = route_ranges;
      result = grca::cli::cmd_route(route);
    } else if (*sim_cmd) {
      simulate.config.mode = grca::parse_mode(sim_mode);
      if (!sim_out.empty()) simulate.out = sim_out;
      result = grca::cli::cmd_simulate(simulate);
    } else {
      variance.config.mode = grca::parse_mode(var_mode);
      if (!var_out.empty()) variance.out = var_out;
      result = grca::cli::cmd_analyze_variance(variance);
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << result.output.dump(2) << "\n";
    std::cerr << "wall clock: " << seconds << " s\n";
    return result.exit_code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return grca::cli::kUsageError;
  }
}
