// Command-line front end: train / eval / rollout / gradcheck / mapgen.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "grate/bench.hpp"
#include "grate/config.hpp"
#include "grate/gradcheck.hpp"
#include "grate/learn.hpp"
#include "grate/world.hpp"

namespace {

int cmd_train(const std::string& config_path, const std::string& out_dir,
              bool resume) {
  grate::TrainConfig cfg = grate::train_config_from_file(config_path);
  std::printf("training: %d episodes, %dx%d maps, run dir %s\n", cfg.episodes,
              cfg.map_width, cfg.map_height, out_dir.c_str());
  grate::train(cfg, out_dir, resume, {}, [](const grate::EpisodeMetrics& m) {
    if (m.episode % 25 == 0 || m.failed) {
      std::printf("ep %5lld  reward %9.2f  dist %7.2f m  steps %3d  %s\n",
                  static_cast<long long>(m.episode), m.reward, m.distance,
                  m.steps,
                  m.failed ? "FAILED" : (m.completed ? "done" : "capped"));
      std::fflush(stdout);
    }
  });
  std::printf("training finished; checkpoints and metrics.csv in %s\n",
              out_dir.c_str());
  return 0;
}

int cmd_eval(const std::string& planner, const std::string& seeds_path,
             const std::string& out_csv, const std::string& checkpoint,
             bool smooth, int width, int height, int threads) {
  grate::PlannerKind kind = grate::planner_from_string(planner);
  if (smooth) {
    if (kind == grate::PlannerKind::grate_raw)
      kind = grate::PlannerKind::grate_smoothed;
    else if (kind != grate::PlannerKind::grate_smoothed)
      throw std::invalid_argument("--smooth applies to the grate planners only");
  }
  const bool needs_ckpt = kind == grate::PlannerKind::grate_raw ||
                          kind == grate::PlannerKind::grate_smoothed;
  if (needs_ckpt && checkpoint.empty())
    throw std::invalid_argument("planner '" + planner +
                                "' requires --checkpoint");
  std::vector<uint64_t> seeds = grate::load_seeds(seeds_path);
  if (seeds.empty())
    throw std::runtime_error("no seeds found in " + seeds_path);

  grate::EvalConfig cfg;
  cfg.map_width = width;
  cfg.map_height = height;
  cfg.threads = threads;

  std::unique_ptr<grate::PolicyNet> policy;
  if (needs_ckpt)
    policy = std::make_unique<grate::PolicyNet>(
        grate::load_policy_checkpoint(checkpoint));

  grate::EvalReport rep =
      grate::run_eval(seeds, kind, cfg, policy ? policy.get() : nullptr);
  grate::write_report_csv(rep, out_csv);
  std::printf(
      "%s on %zu seeds: distance %.2f ± %.2f m, turn %.2f rad, steps %.1f, "
      "completion %.0f%%\n",
      grate::to_string(kind).c_str(), seeds.size(), rep.mean_distance,
      rep.std_distance, rep.mean_turn, rep.mean_steps,
      100.0 * rep.completion_rate);
  std::printf("report written to %s\n", out_csv.c_str());
  return 0;
}

int cmd_rollout(uint64_t seed, const std::string& planner,
                const std::string& trace_path, const std::string& checkpoint,
                int width, int height) {
  grate::PlannerKind kind = grate::planner_from_string(planner);
  const bool needs_net = kind == grate::PlannerKind::grate_raw ||
                         kind == grate::PlannerKind::grate_smoothed;
  std::unique_ptr<grate::PolicyNet> policy;
  std::string policy_note = "none";
  if (needs_net) {
    if (!checkpoint.empty()) {
      policy = std::make_unique<grate::PolicyNet>(
          grate::load_policy_checkpoint(checkpoint));
      policy_note = "checkpoint=" + checkpoint;
    } else {
      grate::NetConfig nc;
      policy = std::make_unique<grate::PolicyNet>(nc, seed);
      policy_note = "fresh-init seed=" + std::to_string(seed);
    }
  }
  grate::EvalConfig cfg;
  cfg.map_width = width;
  cfg.map_height = height;
  std::vector<std::string> trace, smooth_dbg, graphs;
  grate::EvalRow row = grate::run_episode(
      seed, kind, cfg, policy ? policy.get() : nullptr, &trace, &smooth_dbg,
      &graphs);

  std::ofstream f(trace_path);
  if (!f) throw std::runtime_error("cannot open trace file " + trace_path);
  f << "# grate-rollout-v1 seed=" << seed << " planner=" << planner
    << " policy=" << policy_note << "\n";
  f << "# columns: STEP index x y reward new_frontiers traveled\n";
  for (size_t i = 0; i < graphs.size(); ++i) {
    f << "GRAPH " << i + 1 << "\n" << graphs[i];
    if (i < trace.size()) f << "STEP " << trace[i] << "\n";
    if (i < smooth_dbg.size()) f << "SMOOTH " << smooth_dbg[i] << "\n";
  }
  f << "# result distance=" << row.distance << " steps=" << row.steps
    << " completed=" << (row.completed ? 1 : 0) << " turn_sum=" << row.turn_sum
    << "\n";
  std::printf("rollout seed %llu (%s): %.2f m in %d steps, %s\n",
              static_cast<unsigned long long>(seed), planner.c_str(),
              row.distance, row.steps,
              row.completed ? "completed" : "incomplete");
  std::printf("trace written to %s\n", trace_path.c_str());
  return 0;
}

int cmd_gradcheck() {
  std::vector<grate::GradCheckResult> results = grate::run_gradcheck();
  double worst = 0.0;
  for (const auto& r : results) {
    std::printf("%-20s max rel err %.3e\n", r.name.c_str(), r.max_rel_err);
    worst = std::max(worst, r.max_rel_err);
  }
  std::printf("worst: %.3e (tolerance 1e-4)\n", worst);
  return worst <= 1e-4 ? 0 : 1;
}

int cmd_mapgen(uint64_t seed, const std::string& out_path) {
  grate::GroundTruthMap map = grate::generate_dungeon(seed);
  grate::save_map(map, out_path);
  std::printf("map seed %llu (%dx%d, %.2f m cells) written to %s\n",
              static_cast<unsigned long long>(seed), map.width(), map.height(),
              map.cell_size(), out_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"graph-transformer exploration planner"};
  app.require_subcommand(1);

  // train
  std::string config_path, out_dir;
  bool resume = false;
  auto* train = app.add_subcommand("train", "train a policy");
  train->add_option("--config", config_path, "key=value config file")
      ->required()
      ->check(CLI::ExistingFile);
  train->add_option("--out", out_dir, "run directory")->required();
  train->add_flag("--resume", resume, "resume from the latest checkpoint");

  // eval
  std::string planner, seeds_path, out_csv, checkpoint;
  bool smooth = false;
  int width = 64, height = 64, threads = 4;
  auto* eval = app.add_subcommand("eval", "evaluate a planner over a seed suite");
  eval->add_option("--planner", planner,
                   "nearest|utility|grate-raw|grate-smoothed|random")
      ->required();
  eval->add_option("--seeds", seeds_path, "file with one seed per line")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--out", out_csv, "output CSV path")->required();
  eval->add_option("--checkpoint", checkpoint, "run-bundle checkpoint");
  eval->add_flag("--smooth", smooth, "apply waypoint smoothing");
  eval->add_option("--width", width, "map width, cells");
  eval->add_option("--height", height, "map height, cells");
  eval->add_option("--threads", threads, "parallel episodes");

  // rollout
  uint64_t seed = 1;
  std::string trace_path;
  auto* rollout = app.add_subcommand("rollout", "trace a single episode");
  rollout->add_option("--seed", seed, "map/episode seed")->required();
  rollout->add_option("--planner", planner,
                      "nearest|utility|grate-raw|grate-smoothed|random")
      ->required();
  rollout->add_option("--trace", trace_path, "trace output file")->required();
  rollout->add_option("--checkpoint", checkpoint, "run-bundle checkpoint");
  rollout->add_option("--width", width, "map width, cells");
  rollout->add_option("--height", height, "map height, cells");

  // gradcheck
  app.add_subcommand("gradcheck", "finite-difference gradient suite");

  // mapgen
  std::string map_out;
  auto* mapgen = app.add_subcommand("mapgen", "generate a ground-truth map");
  mapgen->add_option("--seed", seed, "generator seed")->required();
  mapgen->add_option("--out", map_out, "map output file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("train")) return cmd_train(config_path, out_dir, resume);
    if (app.got_subcommand("eval"))
      return cmd_eval(planner, seeds_path, out_csv, checkpoint, smooth, width,
                      height, threads);
    if (app.got_subcommand("rollout"))
      return cmd_rollout(seed, planner, trace_path, checkpoint, width, height);
    if (app.got_subcommand("gradcheck")) return cmd_gradcheck();
    if (app.got_subcommand("mapgen")) return cmd_mapgen(seed, map_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
