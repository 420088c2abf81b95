#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "grate/bench.hpp"
#include "grate/graph.hpp"
#include "grate/net.hpp"
#include "grate/world.hpp"
#include "oracles.hpp"

using namespace grate;

namespace {

// ---------------------------------------------------------------------------
// Hand-built graphs.

BeliefGraph line3_east_frontier() {
  // 0 (west, explored) -- 1 (current) -- 2 (east, utility > 0)
  BeliefGraph g;
  g.k = 5;
  g.nodes.push_back({-2.0, 0.0, 0, 0});
  g.nodes.push_back({0.0, 0.0, 0, 1});
  g.nodes.push_back({2.0, 0.0, 4, 0});
  g.nbr = {{1}, {0, 2}, {1}};
  g.current_index = 1;
  return g;
}

BeliefGraph two_clusters(int u_west, int u_east) {
  // west chain: 0 -- 1 -- 2 at path distance 5 m
  // east chain: 0 -- 3 -- 4 at path distance 9 m
  BeliefGraph g;
  g.k = 5;
  g.nodes.push_back({0.0, 0.0, 0, 1});    // 0: current
  g.nodes.push_back({-2.5, 0.0, 0, 0});   // 1
  g.nodes.push_back({-5.0, 0.0, u_west, 0});  // 2: west target
  g.nodes.push_back({4.5, 0.0, 0, 0});    // 3
  g.nodes.push_back({9.0, 0.0, u_east, 0});   // 4: east target
  g.nbr = {{1, 3}, {0, 2}, {1}, {0, 4}, {3}};
  g.current_index = 0;
  return g;
}

// ---------------------------------------------------------------------------
// Independent shortest-path oracle on the dumped graph text.

struct PlainGraph {
  std::vector<double> x, y;
  std::vector<int> util;
  std::vector<std::vector<int>> nbr;
  int current = 0;
};

PlainGraph parse_dump(const std::string& text, int current) {
  std::istringstream is(text);
  int n = 0, k = 0;
  REQUIRE(static_cast<bool>(is >> n >> k));
  PlainGraph g;
  g.current = current;
  g.x.resize(static_cast<size_t>(n));
  g.y.resize(static_cast<size_t>(n));
  g.util.resize(static_cast<size_t>(n));
  g.nbr.assign(static_cast<size_t>(n), {});
  for (int i = 0; i < n; ++i) {
    int guide;
    REQUIRE(static_cast<bool>(is >> g.x[static_cast<size_t>(i)] >>
                              g.y[static_cast<size_t>(i)] >>
                              g.util[static_cast<size_t>(i)] >> guide));
  }
  int a, b;
  while (is >> a >> b) {
    g.nbr[static_cast<size_t>(a)].push_back(b);
    g.nbr[static_cast<size_t>(b)].push_back(a);
  }
  return g;
}

// Plain O(n^2) Dijkstra with Euclidean edge weights.
std::vector<double> plain_dijkstra(const PlainGraph& g, int src) {
  const size_t n = g.x.size();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> d(n, inf);
  std::vector<char> done(n, 0);
  d[static_cast<size_t>(src)] = 0.0;
  for (size_t it = 0; it < n; ++it) {
    int u = -1;
    double best = inf;
    for (size_t i = 0; i < n; ++i)
      if (!done[i] && d[i] < best) {
        best = d[i];
        u = static_cast<int>(i);
      }
    if (u < 0) break;
    done[static_cast<size_t>(u)] = 1;
    for (int v : g.nbr[static_cast<size_t>(u)]) {
      const double w = std::hypot(g.x[static_cast<size_t>(v)] - g.x[static_cast<size_t>(u)],
                                  g.y[static_cast<size_t>(v)] - g.y[static_cast<size_t>(u)]);
      d[static_cast<size_t>(v)] = std::min(d[static_cast<size_t>(v)],
                                           d[static_cast<size_t>(u)] + w);
    }
  }
  return d;
}

PlainGraph dump_and_parse(const BeliefGraph& g) {
  std::ostringstream os;
  dump_graph(g, os);
  return parse_dump(os.str(), g.current_index);
}

// Belief graph midway through an exploration episode.
BeliefGraph scene_graph(uint64_t seed, int moves) {
  GroundTruthMap map = generate_dungeon(seed);
  Environment env(map, map.center(pick_start_cell(map, seed)), 16.0, 128);
  std::mt19937_64 rng(seed * 131 + 5);
  for (int s = 0; s < moves && !env.done(); ++s) {
    std::vector<Cell> options;
    const Cell rc = env.belief().cell_at(env.robot().position);
    for (int dy = -8; dy <= 8; ++dy)
      for (int dx = -8; dx <= 8; ++dx) {
        const Cell c{rc.x + dx, rc.y + dy};
        if ((dx || dy) && env.belief().is_free(c)) options.push_back(c);
      }
    env.step(map.center(options[rng() % options.size()]));
  }
  return extract_graph(env.belief(), env.robot().visited,
                       env.robot().position);
}

// ---------------------------------------------------------------------------
// CLI helpers.

struct CliResult {
  int status = -1;
  std::string output;
};

CliResult run_cli(const std::string& args, const std::filesystem::path& dir) {
  const auto out = dir / "cli_out.txt";
  const std::string cmd =
      std::string(GRATE_CLI_PATH) + " " + args + " > " + out.string() + " 2>&1";
  CliResult r;
  r.status = std::system(cmd.c_str());
  std::ifstream f(out);
  std::stringstream ss;
  ss << f.rdbuf();
  r.output = ss.str();
  return r;
}

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

void write_seeds(const std::filesystem::path& path,
                 const std::vector<uint64_t>& seeds) {
  std::ofstream f(path);
  for (uint64_t s : seeds) f << s << "\n";
}

}  // namespace

// ---------------------------------------------------------------------------
// nearest_planner

TEST_CASE("nearest: lone east frontier means the east hop") {
  BeliefGraph g = line3_east_frontier();
  const int a = nearest_planner(g);
  REQUIRE(a >= 0);
  CHECK(g.neighbors(1)[static_cast<size_t>(a)] == 2);
}

TEST_CASE("nearest: 5 m cluster beats the 9 m cluster") {
  BeliefGraph g = two_clusters(3, 3);
  const int a = nearest_planner(g);
  REQUIRE(a >= 0);
  // first hop toward the west chain (node 1)
  CHECK(g.neighbors(0)[static_cast<size_t>(a)] == 1);

  // Cross-check on the dumped graph with an independent shortest-path pass.
  PlainGraph pg = dump_and_parse(g);
  std::vector<double> d = plain_dijkstra(pg, pg.current);
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < pg.util.size(); ++i)
    if (pg.util[i] > 0 && d[i] < best_d) {
      best_d = d[i];
      best = static_cast<int>(i);
    }
  CHECK(best == 2);
  CHECK(best_d == doctest::Approx(5.0).epsilon(1e-12));
  // the chosen hop lies on the shortest path to that target
  std::vector<double> dh = plain_dijkstra(pg, 1);
  CHECK(std::hypot(pg.x[1] - pg.x[0], pg.y[1] - pg.y[0]) + dh[2] ==
        doctest::Approx(best_d).epsilon(1e-12));
}

TEST_CASE("nearest: exact distance ties break toward the lower node index") {
  BeliefGraph g;
  g.k = 5;
  g.nodes.push_back({0.0, 0.0, 0, 1});   // current
  g.nodes.push_back({-2.0, 0.0, 3, 0});  // tie candidate, lower index
  g.nodes.push_back({2.0, 0.0, 3, 0});   // tie candidate
  g.nbr = {{1, 2}, {0}, {0}};
  g.current_index = 0;
  const int a = nearest_planner(g);
  REQUIRE(a >= 0);
  CHECK(g.neighbors(0)[static_cast<size_t>(a)] == 1);
}

TEST_CASE("nearest: no reachable frontier declares completion") {
  BeliefGraph g = two_clusters(0, 0);  // nothing informative anywhere
  CHECK(nearest_planner(g) == -1);
  CHECK(utility_planner(g) == -1);

  // positive utility on an unreachable island does not count
  BeliefGraph h;
  h.k = 5;
  h.nodes.push_back({0.0, 0.0, 0, 1});
  h.nodes.push_back({1.0, 0.0, 0, 0});
  h.nodes.push_back({9.0, 9.0, 5, 0});  // disconnected
  h.nbr = {{1}, {0}, {}};
  h.current_index = 0;
  CHECK(nearest_planner(h) == -1);
  CHECK(utility_planner(h) == -1);
}

TEST_CASE("nearest: hop always starts a shortest path to a nearest frontier") {
  for (uint64_t seed : {31ull, 37ull, 41ull}) {
    CAPTURE(seed);
    BeliefGraph g = scene_graph(seed, 6);
    PlainGraph pg = dump_and_parse(g);
    std::vector<double> d = plain_dijkstra(pg, pg.current);
    double best = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < pg.util.size(); ++i)
      if (pg.util[i] > 0 && static_cast<int>(i) != pg.current)
        best = std::min(best, d[i]);

    const int a = nearest_planner(g);
    if (!std::isfinite(best)) {
      CHECK(a == -1);
      continue;
    }
    REQUIRE(a >= 0);
    const int hop = g.neighbors(g.current_index)[static_cast<size_t>(a)];
    const double leg = std::hypot(pg.x[static_cast<size_t>(hop)] - pg.x[static_cast<size_t>(pg.current)],
                                  pg.y[static_cast<size_t>(hop)] - pg.y[static_cast<size_t>(pg.current)]);
    std::vector<double> dh = plain_dijkstra(pg, hop);
    bool on_shortest = false;
    for (size_t i = 0; i < pg.util.size(); ++i)
      if (pg.util[i] > 0 && std::fabs(leg + dh[i] - best) <= 1e-9) {
        on_shortest = true;
        break;
      }
    CHECK(on_shortest);
  }
}

// ---------------------------------------------------------------------------
// utility_planner

TEST_CASE("utility: equal utilities reduce to the nearest choice") {
  BeliefGraph g = two_clusters(3, 3);
  for (double lambda : {0.05, 0.25, 1.0}) {
    CAPTURE(lambda);
    CHECK(utility_planner(g, lambda) == nearest_planner(g));
  }
}

TEST_CASE("utility: lambda 0 targets the pure maximum utility") {
  BeliefGraph g = two_clusters(2, 7);  // farther cluster is richer
  const int a = utility_planner(g, 0.0);
  REQUIRE(a >= 0);
  CHECK(g.neighbors(0)[static_cast<size_t>(a)] == 3);  // east chain hop
}

TEST_CASE("utility: two-cluster trade-off matches the hand-scored argmax") {
  BeliefGraph g = two_clusters(3, 7);
  // Score table: u * exp(-lambda * path distance), west at 5 m, east at 9 m.
  for (double lambda : {0.25, 0.05}) {
    CAPTURE(lambda);
    const double west = 3.0 * std::exp(-lambda * 5.0);
    const double east = 7.0 * std::exp(-lambda * 9.0);
    const int want_hop = west > east ? 1 : 3;
    const int a = utility_planner(g, lambda);
    REQUIRE(a >= 0);
    CHECK(g.neighbors(0)[static_cast<size_t>(a)] == want_hop);
  }
  // sanity on the table itself: the two lambdas pick different clusters
  CHECK(3.0 * std::exp(-0.25 * 5.0) > 7.0 * std::exp(-0.25 * 9.0));
  CHECK(3.0 * std::exp(-0.05 * 5.0) < 7.0 * std::exp(-0.05 * 9.0));
}

// ---------------------------------------------------------------------------
// random_planner

TEST_CASE("random: uniform over the neighbor set, seeded and in range") {
  BeliefGraph g = two_clusters(1, 1);
  std::mt19937_64 rng(99);
  std::vector<int> seen(2, 0);
  for (int i = 0; i < 100; ++i) {
    const int a = random_planner(g, rng);
    REQUIRE(a >= 0);
    REQUIRE(a < 2);
    seen[static_cast<size_t>(a)] += 1;
  }
  CHECK(seen[0] > 0);
  CHECK(seen[1] > 0);

  std::mt19937_64 r1(7), r2(7);
  for (int i = 0; i < 20; ++i)
    CHECK(random_planner(g, r1) == random_planner(g, r2));

  BeliefGraph isolated;
  isolated.k = 5;
  isolated.nodes.push_back({0.0, 0.0, 0, 1});
  isolated.nbr = {{}};
  isolated.current_index = 0;
  CHECK(random_planner(isolated, rng) == -1);
}

// ---------------------------------------------------------------------------
// run_eval

TEST_CASE("eval: identical suites produce bit-identical reports") {
  EvalConfig cfg;
  cfg.map_width = 48;
  cfg.map_height = 48;
  cfg.threads = 2;
  const std::vector<uint64_t> seeds{9001, 9002, 9003, 9004, 9005};
  EvalReport a = run_eval(seeds, PlannerKind::nearest, cfg);
  EvalReport b = run_eval(seeds, PlannerKind::nearest, cfg);
  std::ostringstream sa, sb;
  write_report_csv(a, sa);
  write_report_csv(b, sb);
  CHECK(sa.str() == sb.str());
  REQUIRE(a.rows.size() == seeds.size());
  for (size_t i = 0; i < seeds.size(); ++i) {
    CHECK(a.rows[i].seed == seeds[i]);  // merged in seed order
    CHECK(a.rows[i].distance == b.rows[i].distance);
    CHECK(a.rows[i].turn_sum == b.rows[i].turn_sum);
  }
}

TEST_CASE("eval: nearest completes all of 50 standard maps within the cap") {
  EvalConfig cfg;  // 64x64 cells, cap 128
  std::vector<uint64_t> seeds;
  for (uint64_t s = 5001; s <= 5050; ++s) seeds.push_back(s);
  EvalReport r = run_eval(seeds, PlannerKind::nearest, cfg);
  REQUIRE(r.rows.size() == 50);
  for (const EvalRow& row : r.rows) {
    CAPTURE(row.seed);
    CHECK(row.completed);
    CHECK(row.steps <= 128);
  }
  CHECK(r.completion_rate == 1.0);

  // aggregate means are recomputable from the rows
  double s = 0.0, t = 0.0;
  for (const EvalRow& row : r.rows) {
    s += row.distance;
    t += row.turn_sum;
  }
  CHECK(std::fabs(r.mean_distance - s / 50.0) <= 1e-12);
  CHECK(std::fabs(r.mean_turn - t / 50.0) <= 1e-12);
}

TEST_CASE("eval: incomplete episodes become rows instead of failures") {
  EvalConfig cfg;
  cfg.map_width = 48;
  cfg.map_height = 48;
  cfg.threads = 2;
  const std::vector<uint64_t> seeds{9001, 9002, 9003, 9004, 9005};
  EvalReport r = run_eval(seeds, PlannerKind::random_walk, cfg);
  REQUIRE(r.rows.size() == seeds.size());
  CHECK(r.completion_rate < 1.0);  // a random walk rarely finishes in 128
  for (const EvalRow& row : r.rows) {
    CHECK(row.steps <= cfg.effective_cap());
    if (!row.completed) CHECK(row.steps == cfg.effective_cap());
  }
}

TEST_CASE("eval: grate planners require a checkpoint") {
  EvalConfig cfg;
  CHECK_THROWS_WITH_AS(run_episode(1, PlannerKind::grate_raw, cfg, nullptr),
                       doctest::Contains("checkpoint"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      run_episode(1, PlannerKind::grate_smoothed, cfg, nullptr),
      doctest::Contains("checkpoint"), std::invalid_argument);
}

TEST_CASE("eval: utility stays at or below nearest on a 100-seed suite") {
  EvalConfig cfg;
  cfg.map_width = 48;
  cfg.map_height = 48;
  cfg.threads = 2;
  std::vector<uint64_t> seeds;
  for (uint64_t s = 7001; s <= 7100; ++s) seeds.push_back(s);
  EvalReport nearest = run_eval(seeds, PlannerKind::nearest, cfg);
  EvalReport utility = run_eval(seeds, PlannerKind::utility, cfg);
  CHECK(utility.mean_distance <= nearest.mean_distance);
  CHECK(nearest.completion_rate == 1.0);
  CHECK(utility.completion_rate == 1.0);
}

TEST_CASE("eval: smoothing lowers the mean turn-angle sum") {
  NetConfig nc;
  nc.d = 8;
  nc.L = 1;
  nc.m = 1;
  nc.n = 2;
  nc.heads = 2;
  PolicyNet net(nc, 42);
  EvalConfig cfg;
  cfg.map_width = 48;
  cfg.map_height = 48;
  cfg.threads = 2;
  cfg.episode_cap = 96;
  const std::vector<uint64_t> seeds{9101, 9102, 9103, 9104};
  EvalReport raw = run_eval(seeds, PlannerKind::grate_raw, cfg, &net);
  EvalReport smoothed = run_eval(seeds, PlannerKind::grate_smoothed, cfg, &net);
  CHECK(smoothed.mean_turn < raw.mean_turn);
}

// ---------------------------------------------------------------------------
// CLI

TEST_CASE("cli: mapgen output round-trips to the library generator") {
  const auto dir = fresh_dir("grate_bench_mapgen");
  const auto map_path = dir / "m.txt";
  CliResult r = run_cli("mapgen --seed 1 --out " + map_path.string(), dir);
  REQUIRE(r.status == 0);
  GroundTruthMap loaded = load_map(map_path.string());
  GroundTruthMap direct = generate_dungeon(1);
  REQUIRE(loaded.width() == direct.width());
  REQUIRE(loaded.height() == direct.height());
  CHECK(loaded.cell_size() == direct.cell_size());
  for (int y = 0; y < direct.height(); ++y)
    for (int x = 0; x < direct.width(); ++x)
      CHECK(loaded.at({x, y}) == direct.at({x, y}));
}

TEST_CASE("cli: eval writes the versioned CSV with one row per seed") {
  const auto dir = fresh_dir("grate_bench_evalcsv");
  write_seeds(dir / "s.txt", {9001, 9002, 9003});
  const auto csv = dir / "r.csv";
  CliResult r = run_cli("eval --planner nearest --seeds " +
                            (dir / "s.txt").string() + " --out " + csv.string() +
                            " --width 48 --height 48 --threads 2",
                        dir);
  REQUIRE(r.status == 0);

  std::ifstream f(csv);
  REQUIRE(f.good());
  std::string line;
  std::getline(f, line);
  CHECK(line == "# grate-eval-csv-v1");
  std::getline(f, line);
  CHECK(line == "seed,planner,distance_m,steps,completed,turn_sum_rad");
  int rows = 0;
  bool aggregate = false;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      aggregate = true;
      CHECK(line.find("mean_distance=") != std::string::npos);
    } else {
      ++rows;
      CHECK(line.find(",nearest,") != std::string::npos);
    }
  }
  CHECK(rows == 3);
  CHECK(aggregate);
}

TEST_CASE("cli: rollout dumps trace, graphs, and smoother records") {
  const auto dir = fresh_dir("grate_bench_rollout");
  const auto trace = dir / "t.txt";
  CliResult r = run_cli("rollout --seed 7 --planner grate-smoothed --trace " +
                            trace.string() + " --width 48 --height 48",
                        dir);
  REQUIRE(r.status == 0);
  std::ifstream f(trace);
  std::stringstream ss;
  ss << f.rdbuf();
  const std::string text = ss.str();
  CHECK(text.find("# grate-rollout-v1 seed=7 planner=grate-smoothed") !=
        std::string::npos);
  CHECK(text.find("GRAPH 1") != std::string::npos);
  CHECK(text.find("STEP ") != std::string::npos);
  CHECK(text.find("SMOOTH ") != std::string::npos);
  CHECK(text.find("chosen ") != std::string::npos);
  CHECK(text.find("# result distance=") != std::string::npos);
}

TEST_CASE("cli: gradcheck reports every block under tolerance and exits 0") {
  const auto dir = fresh_dir("grate_bench_gradcheck");
  CliResult r = run_cli("gradcheck", dir);
  CHECK(r.status == 0);
  CHECK(r.output.find("policy_network") != std::string::npos);
  CHECK(r.output.find("worst:") != std::string::npos);
}

TEST_CASE("cli: unknown subcommands and flags fail with usage text") {
  const auto dir = fresh_dir("grate_bench_cli_err");
  CliResult bad_sub = run_cli("frobnicate", dir);
  CHECK(bad_sub.status != 0);
  CHECK(bad_sub.output.find("Usage") != std::string::npos);

  CliResult bad_flag = run_cli("mapgen --seed 1 --bogus x", dir);
  CHECK(bad_flag.status != 0);

  CliResult no_sub = run_cli("", dir);
  CHECK(no_sub.status != 0);
}

TEST_CASE("cli: malformed config values name the offending key") {
  const auto dir = fresh_dir("grate_bench_cfg_err");
  {
    std::ofstream f(dir / "bad_value.txt");
    f << "episodes=banana\n";
  }
  CliResult r1 = run_cli("train --config " + (dir / "bad_value.txt").string() +
                             " --out " + (dir / "run").string(),
                         dir);
  CHECK(r1.status != 0);
  CHECK(r1.output.find("episodes") != std::string::npos);

  {
    std::ofstream f(dir / "bad_key.txt");
    f << "not_a_real_knob=3\n";
  }
  CliResult r2 = run_cli("train --config " + (dir / "bad_key.txt").string() +
                             " --out " + (dir / "run").string(),
                         dir);
  CHECK(r2.status != 0);
  CHECK(r2.output.find("not_a_real_knob") != std::string::npos);

  CliResult r3 = run_cli(
      "eval --planner grate-raw --seeds /dev/null --out " +
          (dir / "r.csv").string(),
      dir);
  CHECK(r3.status != 0);
  CHECK(r3.output.find("checkpoint") != std::string::npos);
}

TEST_CASE("seeds file: integers, comments, and blanks parse as documented") {
  const auto dir = fresh_dir("grate_bench_seeds");
  {
    std::ofstream f(dir / "s.txt");
    f << "# suite header\n12\n\n34 # trailing note\n56\n";
  }
  std::vector<uint64_t> seeds = load_seeds((dir / "s.txt").string());
  CHECK(seeds == std::vector<uint64_t>{12, 34, 56});
}
