#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <queue>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "grate/graph.hpp"
#include "grate/learn.hpp"
#include "grate/net.hpp"
#include "grate/smooth.hpp"
#include "grate/world.hpp"

namespace grate {

enum class PlannerKind { nearest, utility, grate_raw, grate_smoothed, random_walk };

inline PlannerKind planner_from_string(const std::string& s) {
  if (s == "nearest") return PlannerKind::nearest;
  if (s == "utility") return PlannerKind::utility;
  if (s == "grate-raw") return PlannerKind::grate_raw;
  if (s == "grate-smoothed") return PlannerKind::grate_smoothed;
  if (s == "random") return PlannerKind::random_walk;
  throw std::invalid_argument("unknown planner '" + s +
                              "' (nearest|utility|grate-raw|grate-smoothed|random)");
}

inline std::string to_string(PlannerKind k) {
  switch (k) {
    case PlannerKind::nearest: return "nearest";
    case PlannerKind::utility: return "utility";
    case PlannerKind::grate_raw: return "grate-raw";
    case PlannerKind::grate_smoothed: return "grate-smoothed";
    case PlannerKind::random_walk: return "random";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Graph shortest paths (Euclidean edge lengths) from the current node.

struct ShortestPaths {
  std::vector<double> dist;  // infinity when unreachable
  std::vector<int> first_hop;  // neighbor-node id of the first move, -1 at source
};

inline ShortestPaths dijkstra_from_current(const BeliefGraph& g) {
  const int n = g.size();
  const int src = g.current_index;
  ShortestPaths sp;
  sp.dist.assign(static_cast<size_t>(n), std::numeric_limits<double>::infinity());
  sp.first_hop.assign(static_cast<size_t>(n), -1);
  using Item = std::pair<double, int>;  // (dist, node); ties pop lowest index
  std::priority_queue<Item, std::vector<Item>, std::greater<Item>> pq;
  sp.dist[static_cast<size_t>(src)] = 0.0;
  pq.push({0.0, src});
  std::vector<uint8_t> done(static_cast<size_t>(n), 0);
  while (!pq.empty()) {
    auto [d, u] = pq.top();
    pq.pop();
    if (done[static_cast<size_t>(u)]) continue;
    done[static_cast<size_t>(u)] = 1;
    for (int v : g.neighbors(u)) {
      const double w = dist(g.nodes[static_cast<size_t>(u)].pos(),
                            g.nodes[static_cast<size_t>(v)].pos());
      const double nd = d + w;
      if (nd < sp.dist[static_cast<size_t>(v)]) {
        sp.dist[static_cast<size_t>(v)] = nd;
        sp.first_hop[static_cast<size_t>(v)] =
            u == src ? v : sp.first_hop[static_cast<size_t>(u)];
        pq.push({nd, v});
      }
    }
  }
  return sp;
}

namespace detail {

inline int action_index_of(const BeliefGraph& g, int node) {
  const auto& nb = g.neighbors(g.current_index);
  auto it = std::lower_bound(nb.begin(), nb.end(), node);
  if (it == nb.end() || *it != node)
    throw std::logic_error("planner: first hop is not a neighbor of current");
  return static_cast<int>(it - nb.begin());
}

}  // namespace detail

/// Greedy frontier chase: first hop of the shortest path to the reachable
/// positive-utility node of minimum path distance (ties toward the lowest
/// node index). Returns -1 when no such node exists (exploration declared
/// complete from the planner's view).
inline int nearest_planner(const BeliefGraph& g) {
  ShortestPaths sp = dijkstra_from_current(g);
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (int i = 0; i < g.size(); ++i) {
    if (i == g.current_index) continue;
    if (g.nodes[static_cast<size_t>(i)].utility <= 0) continue;
    const double d = sp.dist[static_cast<size_t>(i)];
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  if (best < 0) return -1;
  return detail::action_index_of(g, sp.first_hop[static_cast<size_t>(best)]);
}

/// Cost-utility trade-off: target = argmax over positive-utility nodes of
/// u_i · exp(-lambda · pathdist(i)) (ties toward the lowest node index);
/// returns the first hop, or -1 when no positive-utility node is reachable.
inline int utility_planner(const BeliefGraph& g, double lambda = 0.25) {
  ShortestPaths sp = dijkstra_from_current(g);
  int best = -1;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < g.size(); ++i) {
    if (i == g.current_index) continue;
    const auto& nf = g.nodes[static_cast<size_t>(i)];
    if (nf.utility <= 0) continue;
    const double d = sp.dist[static_cast<size_t>(i)];
    if (!std::isfinite(d)) continue;
    const double score = nf.utility * std::exp(-lambda * d);
    if (score > best_score) {
      best_score = score;
      best = i;
    }
  }
  if (best < 0) return -1;
  return detail::action_index_of(g, sp.first_hop[static_cast<size_t>(best)]);
}

/// Uniform random neighbor.
inline int random_planner(const BeliefGraph& g, std::mt19937_64& rng) {
  const auto& nb = g.neighbors(g.current_index);
  if (nb.empty()) return -1;
  return static_cast<int>(
      std::uniform_int_distribution<size_t>(0, nb.size() - 1)(rng));
}

// ---------------------------------------------------------------------------
// Evaluation harness.

struct EvalConfig {
  int map_width = 64;
  int map_height = 64;
  double cell_size = 0.4;
  double sensor_range = 16.0;
  GraphConfig graph{};
  int episode_cap = 128;  // 512 for maps larger than 64x64
  double lambda = 0.25;
  double kf_sigma_a = 0.5;
  double kf_sigma_z = 1.6;
  int threads = 4;

  int effective_cap() const {
    return (map_width > 64 || map_height > 64) ? std::max(episode_cap, 512)
                                               : episode_cap;
  }
};

struct EvalRow {
  uint64_t seed = 0;
  std::string planner;
  double distance = 0.0;  // meters
  int steps = 0;
  bool completed = false;
  double turn_sum = 0.0;  // radians
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double mean_distance = 0.0;
  double std_distance = 0.0;
  double mean_turn = 0.0;
  double mean_steps = 0.0;
  double completion_rate = 0.0;

  void finalize() {
    if (rows.empty()) return;
    double s = 0, s2 = 0, t = 0, st = 0, c = 0;
    for (const auto& r : rows) {
      s += r.distance;
      s2 += r.distance * r.distance;
      t += r.turn_sum;
      st += r.steps;
      c += r.completed ? 1.0 : 0.0;
    }
    const double n = static_cast<double>(rows.size());
    mean_distance = s / n;
    std_distance = std::sqrt(std::max(0.0, s2 / n - mean_distance * mean_distance));
    mean_turn = t / n;
    mean_steps = st / n;
    completion_rate = c / n;
  }
};

/// Runs one greedy evaluation episode; trace rows (step, x, y, reward,
/// new_frontiers, traveled) are appended when `trace` is non-null, smoother
/// debug records when `smooth_debug` is non-null.
inline EvalRow run_episode(uint64_t seed, PlannerKind kind,
                           const EvalConfig& cfg, const PolicyNet* policy,
                           std::vector<std::string>* trace = nullptr,
                           std::vector<std::string>* smooth_debug = nullptr,
                           std::vector<std::string>* graph_dumps = nullptr) {
  if ((kind == PlannerKind::grate_raw || kind == PlannerKind::grate_smoothed) &&
      policy == nullptr)
    throw std::invalid_argument("run_episode: this planner needs a checkpoint");

  DungeonParams dp;
  dp.width = cfg.map_width;
  dp.height = cfg.map_height;
  dp.cell_size = cfg.cell_size;
  GroundTruthMap map = generate_dungeon(seed, dp);
  Vec2 start = map.center(pick_start_cell(map, seed));
  Environment env(map, start, cfg.sensor_range, cfg.effective_cap());
  GraphConfig gc = cfg.graph;
  gc.sensor_range = cfg.sensor_range;

  std::mt19937_64 rng(detail::mix_seed(seed, 0xe7a1ull));
  WaypointSmoother smoother(make_kf_config(cfg.kf_sigma_a, cfg.kf_sigma_z));
  smoother.reset(start);

  EvalRow row;
  row.seed = seed;
  row.planner = to_string(kind);

  Vec2 prev = start;
  Vec2 prev_dir{0, 0};
  bool have_dir = false;

  while (!env.done()) {
    BeliefGraph g = extract_graph(env.belief(), env.robot().visited,
                                  env.robot().position, gc);
    if (graph_dumps) {
      std::ostringstream os;
      dump_graph(g, os);
      graph_dumps->push_back(os.str());
    }
    const auto& nb = g.neighbors(g.current_index);
    if (nb.empty()) break;  // isolated robot node: failed episode

    int action = -1;
    switch (kind) {
      case PlannerKind::nearest:
        action = nearest_planner(g);
        break;
      case PlannerKind::utility:
        action = utility_planner(g, cfg.lambda);
        break;
      case PlannerKind::random_walk:
        action = random_planner(g, rng);
        break;
      case PlannerKind::grate_raw: {
        GraphObs obs = make_obs(g, map.width_m(), map.height_m());
        PolicyOutput pi = policy->forward(obs);
        action = detail::greedy_action(pi.probs);
        break;
      }
      case PlannerKind::grate_smoothed: {
        GraphObs obs = make_obs(g, map.width_m(), map.height_m());
        PolicyOutput pi = policy->forward(obs);
        std::vector<Vec2> cand;
        cand.reserve(pi.actions.size());
        for (int node : pi.actions) cand.push_back(obs.node_pos(node));
        auto sr = smoother.step(pi, cand);
        action = sr.action;
        if (smooth_debug) smooth_debug->push_back(smoother_debug_record(sr, pi));
        break;
      }
    }
    if (action < 0) break;  // planner declares exploration finished

    const int node = nb[static_cast<size_t>(action)];
    Vec2 tgt = g.nodes[static_cast<size_t>(node)].pos();
    StepResult sr = env.step(tgt);
    const Vec2 dir = tgt - prev;
    if (have_dir && norm(dir) > 0.0) row.turn_sum += turn_angle(prev_dir, dir);
    if (norm(dir) > 0.0) {
      prev_dir = dir;
      have_dir = true;
    }
    prev = tgt;
    if (trace) {
      std::ostringstream os;
      os << env.steps() << ' ' << tgt.x << ' ' << tgt.y << ' ' << sr.reward
         << ' ' << sr.new_frontiers << ' ' << env.robot().traveled;
      trace->push_back(os.str());
    }
  }
  row.distance = env.robot().traveled;
  row.steps = env.steps();
  row.completed = env.completed();
  return row;
}

/// Evaluates `kind` on every seed; parallel across seeds, merged in seed
/// order. Failed or capped episodes appear as incomplete rows.
inline EvalReport run_eval(const std::vector<uint64_t>& seeds, PlannerKind kind,
                           const EvalConfig& cfg,
                           const PolicyNet* policy = nullptr) {
  EvalReport report;
  report.rows.resize(seeds.size());
  const int threads = std::max(1, std::min<int>(cfg.threads,
                                                static_cast<int>(seeds.size())));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(threads));
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t]() {
      for (size_t i = static_cast<size_t>(t); i < seeds.size();
           i += static_cast<size_t>(threads))
        report.rows[i] = run_episode(seeds[i], kind, cfg, policy);
    });
  }
  for (auto& th : pool) th.join();
  report.finalize();
  return report;
}

// CSV schema v1: seed,planner,distance_m,steps,completed,turn_sum_rad
inline constexpr const char* kEvalCsvHeader = "# grate-eval-csv-v1";

inline void write_report_csv(const EvalReport& r, std::ostream& os) {
  os << kEvalCsvHeader << "\n";
  os << "seed,planner,distance_m,steps,completed,turn_sum_rad\n";
  char buf[160];
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%llu,%s,%.17g,%d,%d,%.17g",
                  static_cast<unsigned long long>(row.seed), row.planner.c_str(),
                  row.distance, row.steps, row.completed ? 1 : 0, row.turn_sum);
    os << buf << "\n";
  }
  os << "# mean_distance=" << r.mean_distance << " std_distance=" << r.std_distance
     << " mean_turn=" << r.mean_turn << " mean_steps=" << r.mean_steps
     << " completion_rate=" << r.completion_rate << "\n";
}

inline void write_report_csv(const EvalReport& r, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_report_csv: cannot open " + path);
  write_report_csv(r, f);
}

/// Seeds file: one integer per line; '#' comments allowed.
inline std::vector<uint64_t> load_seeds(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_seeds: cannot open " + path);
  std::vector<uint64_t> seeds;
  std::string line;
  while (std::getline(f, line)) {
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    uint64_t s;
    if (ls >> s) seeds.push_back(s);
  }
  return seeds;
}

}  // namespace grate
