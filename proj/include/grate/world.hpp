#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "grate/geom.hpp"

namespace grate {

enum class Occ : uint8_t { free_space = 0, occupied = 1 };
enum class Bel : uint8_t { unknown = 0, free_space = 1, occupied = 2 };

/// Static occupancy grid. Borders are occupied and the free cells form a
/// single 4-connected component.
class GroundTruthMap {
 public:
  GroundTruthMap() = default;
  GroundTruthMap(int width, int height, double cell_size)
      : width_(width), height_(height), cell_size_(cell_size),
        cells_(static_cast<size_t>(width) * height, Occ::occupied) {
    if (width < 3 || height < 3 || cell_size <= 0.0)
      throw std::invalid_argument("GroundTruthMap: bad geometry");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  double cell_size() const { return cell_size_; }
  double width_m() const { return width_ * cell_size_; }
  double height_m() const { return height_ * cell_size_; }

  bool in_bounds(Cell c) const {
    return c.x >= 0 && c.x < width_ && c.y >= 0 && c.y < height_;
  }
  Occ at(Cell c) const { return cells_[idx(c)]; }
  void set(Cell c, Occ v) { cells_[idx(c)] = v; }
  bool is_free(Cell c) const { return in_bounds(c) && at(c) == Occ::free_space; }

  Vec2 center(Cell c) const {
    return {(c.x + 0.5) * cell_size_, (c.y + 0.5) * cell_size_};
  }
  Cell cell_at(Vec2 p) const {
    return {static_cast<int>(std::floor(p.x / cell_size_)),
            static_cast<int>(std::floor(p.y / cell_size_))};
  }
  size_t idx(Cell c) const {
    return static_cast<size_t>(c.y) * width_ + c.x;
  }
  const std::vector<Occ>& cells() const { return cells_; }

  friend bool operator==(const GroundTruthMap& a, const GroundTruthMap& b) {
    return a.width_ == b.width_ && a.height_ == b.height_ &&
           a.cell_size_ == b.cell_size_ && a.cells_ == b.cells_;
  }

 private:
  int width_ = 0, height_ = 0;
  double cell_size_ = 0.0;
  std::vector<Occ> cells_;
};

/// The robot's incrementally built estimate of the ground truth. Known cells
/// always agree with the truth and never revert to unknown.
class BeliefMap {
 public:
  BeliefMap() = default;
  explicit BeliefMap(const GroundTruthMap& truth)
      : width_(truth.width()), height_(truth.height()),
        cell_size_(truth.cell_size()),
        cells_(static_cast<size_t>(width_) * height_, Bel::unknown) {}

  int width() const { return width_; }
  int height() const { return height_; }
  double cell_size() const { return cell_size_; }
  double width_m() const { return width_ * cell_size_; }
  double height_m() const { return height_ * cell_size_; }

  bool in_bounds(Cell c) const {
    return c.x >= 0 && c.x < width_ && c.y >= 0 && c.y < height_;
  }
  Bel at(Cell c) const { return cells_[idx(c)]; }
  void set(Cell c, Bel v) { cells_[idx(c)] = v; }
  bool is_free(Cell c) const { return in_bounds(c) && at(c) == Bel::free_space; }

  Vec2 center(Cell c) const {
    return {(c.x + 0.5) * cell_size_, (c.y + 0.5) * cell_size_};
  }
  Cell cell_at(Vec2 p) const {
    return {static_cast<int>(std::floor(p.x / cell_size_)),
            static_cast<int>(std::floor(p.y / cell_size_))};
  }
  size_t idx(Cell c) const {
    return static_cast<size_t>(c.y) * width_ + c.x;
  }

  size_t count_unknown() const {
    return static_cast<size_t>(
        std::count(cells_.begin(), cells_.end(), Bel::unknown));
  }

 private:
  int width_ = 0, height_ = 0;
  double cell_size_ = 0.0;
  std::vector<Bel> cells_;
};

// ---------------------------------------------------------------------------
// Dungeon generation

struct DungeonParams {
  int width = 64;
  int height = 64;
  double cell_size = 0.4;
  int min_room = 4;
  int max_room = 12;
  int room_attempts = 40;
  int corridor_width = 2;
  int max_retries = 8;
};

namespace detail {

inline uint64_t mix_seed(uint64_t seed, uint64_t salt) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

struct Rect {
  int x, y, w, h;
  Cell center() const { return {x + w / 2, y + h / 2}; }
  bool overlaps(const Rect& o, int margin) const {
    return x - margin < o.x + o.w && o.x - margin < x + w &&
           y - margin < o.y + o.h && o.y - margin < y + h;
  }
};

inline void carve_block(GroundTruthMap& m, Cell c, int w) {
  for (int dy = 0; dy < w; ++dy)
    for (int dx = 0; dx < w; ++dx) {
      Cell q{std::clamp(c.x + dx, 1, m.width() - 2),
             std::clamp(c.y + dy, 1, m.height() - 2)};
      m.set(q, Occ::free_space);
    }
}

}  // namespace detail

/// Flood fill over free cells (4-connectivity); returns the visited mask.
inline std::vector<uint8_t> flood_free(const GroundTruthMap& m, Cell start) {
  std::vector<uint8_t> seen(static_cast<size_t>(m.width()) * m.height(), 0);
  if (!m.is_free(start)) return seen;
  std::deque<Cell> q{start};
  seen[m.idx(start)] = 1;
  while (!q.empty()) {
    Cell c = q.front();
    q.pop_front();
    const Cell nb[4] = {{c.x + 1, c.y}, {c.x - 1, c.y}, {c.x, c.y + 1}, {c.x, c.y - 1}};
    for (Cell n : nb) {
      if (m.is_free(n) && !seen[m.idx(n)]) {
        seen[m.idx(n)] = 1;
        q.push_back(n);
      }
    }
  }
  return seen;
}

inline bool free_space_connected(const GroundTruthMap& m) {
  Cell first{-1, -1};
  size_t total = 0;
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x)
      if (m.is_free({x, y})) {
        if (first.x < 0) first = {x, y};
        ++total;
      }
  if (total == 0) return false;
  auto seen = flood_free(m, first);
  size_t reached = static_cast<size_t>(
      std::count(seen.begin(), seen.end(), uint8_t{1}));
  return reached == total;
}

/// Procedural rooms-and-corridors map. Identical (seed, params) yield
/// bit-identical maps; throws if no connected layout is found within the
/// retry budget.
inline GroundTruthMap generate_dungeon(uint64_t seed, const DungeonParams& p = {}) {
  if (p.min_room < 3)
    throw std::invalid_argument("generate_dungeon: min_room must be >= 3");
  if (p.width < 32 || p.height < 32)
    throw std::invalid_argument("generate_dungeon: map must be at least 32x32");
  if (p.max_room < p.min_room || p.corridor_width < 1)
    throw std::invalid_argument("generate_dungeon: inconsistent params");

  for (int attempt = 0; attempt <= p.max_retries; ++attempt) {
    std::mt19937_64 rng(detail::mix_seed(seed, static_cast<uint64_t>(attempt)));
    GroundTruthMap m(p.width, p.height, p.cell_size);

    std::uniform_int_distribution<int> size_dist(p.min_room, p.max_room);
    std::vector<detail::Rect> rooms;
    for (int i = 0; i < p.room_attempts; ++i) {
      int w = size_dist(rng), h = size_dist(rng);
      if (w > p.width - 2 || h > p.height - 2) continue;
      std::uniform_int_distribution<int> xd(1, p.width - 1 - w);
      std::uniform_int_distribution<int> yd(1, p.height - 1 - h);
      detail::Rect r{xd(rng), yd(rng), w, h};
      bool bad = false;
      for (const auto& o : rooms)
        if (r.overlaps(o, 1)) { bad = true; break; }
      if (bad) continue;
      rooms.push_back(r);
      for (int y = r.y; y < r.y + r.h; ++y)
        for (int x = r.x; x < r.x + r.w; ++x)
          m.set({x, y}, Occ::free_space);
    }
    if (rooms.size() < 2) continue;

    // chain the rooms with L-shaped corridors
    for (size_t i = 1; i < rooms.size(); ++i) {
      Cell a = rooms[i - 1].center(), b = rooms[i].center();
      bool horizontal_first = std::uniform_int_distribution<int>(0, 1)(rng) == 0;
      Cell elbow = horizontal_first ? Cell{b.x, a.y} : Cell{a.x, b.y};
      auto carve_line = [&](Cell from, Cell to) {
        int sx = to.x == from.x ? 0 : (to.x > from.x ? 1 : -1);
        int sy = to.y == from.y ? 0 : (to.y > from.y ? 1 : -1);
        Cell c = from;
        detail::carve_block(m, c, p.corridor_width);
        while (c != to) {
          c = {c.x + sx, c.y + sy};
          detail::carve_block(m, c, p.corridor_width);
        }
      };
      carve_line(a, elbow);
      carve_line(elbow, b);
    }

    if (free_space_connected(m)) return m;
  }
  throw std::runtime_error(
      "generate_dungeon: no connected layout within retry budget");
}

// ---------------------------------------------------------------------------
// Sensing

/// True when every supercover cell strictly before `target` on the segment
/// from `from` is free on the truth map.
inline bool truth_line_clear(const GroundTruthMap& truth, Cell from, Cell target) {
  bool clear = true;
  walk_segment(from, target, [&](Cell q) {
    if (q == target) return false;  // reached the endpoint unobstructed
    if (truth.at(q) == Occ::occupied) {
      clear = false;
      return false;
    }
    return true;
  });
  return clear;
}

/// Omnidirectional ray-cast update: every cell within `range` of `pose` with
/// an unobstructed straight line to it becomes known (the first occupied cell
/// on a ray is itself revealed). Occluded cells are untouched, with one
/// addition: occupied cells sharing an edge with a newly revealed free cell
/// are revealed too — a dense sweep that sees a free cell also returns hits on
/// the wall faces bounding it. This keeps the belief invariant that every
/// known-free cell has its truly-occupied 4-neighbours known, so exploration
/// terminates once the reachable free space has been seen.
inline void sense(const GroundTruthMap& truth, BeliefMap& belief, Vec2 pose,
                  double range) {
  Cell pc = truth.cell_at(pose);
  if (!truth.is_free(pc))
    throw std::invalid_argument("sense: pose not in a free cell");
  int rc = static_cast<int>(std::ceil(range / truth.cell_size())) + 1;
  int x0 = std::max(0, pc.x - rc), x1 = std::min(truth.width() - 1, pc.x + rc);
  int y0 = std::max(0, pc.y - rc), y1 = std::min(truth.height() - 1, pc.y + rc);
  std::vector<Cell> new_free;
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      Cell c{x, y};
      if (belief.at(c) != Bel::unknown) {
        // already known; knowledge is monotone so nothing to do
        continue;
      }
      if (dist(truth.center(c), pose) > range) continue;
      if (!truth_line_clear(truth, pc, c)) continue;
      if (truth.at(c) == Occ::occupied) {
        belief.set(c, Bel::occupied);
      } else {
        belief.set(c, Bel::free_space);
        new_free.push_back(c);
      }
    }
  }
  // Wall faces adjacent (including diagonally) to observed free space are
  // known: a sweep that reveals a free cell necessarily exposes the surfaces
  // around it, even where the cell-center ray to the wall itself is occluded
  // (e.g. room corners).
  for (Cell c : new_free) {
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const Cell n{c.x + dx, c.y + dy};
        if (truth.in_bounds(n) && belief.at(n) == Bel::unknown &&
            truth.at(n) == Occ::occupied)
          belief.set(n, Bel::occupied);
      }
  }
}

// ---------------------------------------------------------------------------
// Frontiers and completion

inline bool is_frontier(const BeliefMap& b, Cell c) {
  if (!b.is_free(c)) return false;
  const Cell nb[4] = {{c.x + 1, c.y}, {c.x - 1, c.y}, {c.x, c.y + 1}, {c.x, c.y - 1}};
  for (Cell n : nb)
    if (b.in_bounds(n) && b.at(n) == Bel::unknown) return true;
  return false;
}

/// Free cells bordering unknown space, in row-major order.
inline std::vector<Cell> frontiers(const BeliefMap& b) {
  std::vector<Cell> out;
  for (int y = 0; y < b.height(); ++y)
    for (int x = 0; x < b.width(); ++x)
      if (is_frontier(b, {x, y})) out.push_back({x, y});
  return out;
}

inline std::vector<uint8_t> frontier_mask(const BeliefMap& b) {
  std::vector<uint8_t> mask(static_cast<size_t>(b.width()) * b.height(), 0);
  for (int y = 0; y < b.height(); ++y)
    for (int x = 0; x < b.width(); ++x)
      if (is_frontier(b, {x, y})) mask[b.idx({x, y})] = 1;
  return mask;
}

/// Exploration is complete when no frontier cell is reachable from the
/// robot's known-free component. Sealed unreachable pockets therefore do not
/// keep an episode alive.
inline bool is_complete(const BeliefMap& belief, Cell robot) {
  if (!belief.is_free(robot))
    throw std::invalid_argument("is_complete: robot not in a known-free cell");
  std::vector<uint8_t> seen(static_cast<size_t>(belief.width()) * belief.height(), 0);
  std::deque<Cell> q{robot};
  seen[belief.idx(robot)] = 1;
  while (!q.empty()) {
    Cell c = q.front();
    q.pop_front();
    if (is_frontier(belief, c)) return false;
    const Cell nb[4] = {{c.x + 1, c.y}, {c.x - 1, c.y}, {c.x, c.y + 1}, {c.x, c.y - 1}};
    for (Cell n : nb) {
      if (belief.is_free(n) && !seen[belief.idx(n)]) {
        seen[belief.idx(n)] = 1;
        q.push_back(n);
      }
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Episode dynamics

struct RobotState {
  Vec2 position;
  std::set<size_t> visited;  // waypoint cell ids
  double traveled = 0.0;
  int step_index = 0;
};

struct EpisodeOutcome {
  std::vector<double> rewards;
  double traveled = 0.0;
  bool completed = false;
  bool failed = false;  // aborted (e.g. isolated robot node)
  int steps = 0;
};

struct StepResult {
  double reward = 0.0;
  bool done = false;
  bool completed = false;
  int new_frontiers = 0;
  double distance = 0.0;
};

// Reward constants: r = r_o/64 - r_c/50 + 20 on completion.
inline constexpr double kRewardFrontierScale = 1.0 / 64.0;
inline constexpr double kRewardDistanceScale = 1.0 / 50.0;
inline constexpr double kRewardCompletion = 20.0;

inline double step_reward(int new_frontiers, double distance, bool completed) {
  return kRewardFrontierScale * new_frontiers -
         kRewardDistanceScale * distance +
         (completed ? kRewardCompletion : 0.0);
}

/// Owns one exploration episode: ground truth, belief, robot state and the
/// step/reward bookkeeping. Instances are independent; drive each from a
/// single caller.
class Environment {
 public:
  Environment(GroundTruthMap truth, Vec2 start, double sensor_range,
              int step_cap)
      : truth_(std::move(truth)), belief_(truth_), sensor_range_(sensor_range),
        step_cap_(step_cap) {
    Cell sc = truth_.cell_at(start);
    if (!truth_.is_free(sc))
      throw std::invalid_argument("Environment: start not in a free cell");
    robot_.position = start;
    robot_.visited.insert(truth_.idx(sc));
    sense(truth_, belief_, start, sensor_range_);
    completed_ = is_complete(belief_, sc);
    done_ = completed_;
  }

  StepResult step(Vec2 target) {
    if (done_) throw std::logic_error("Environment::step: episode finished");
    Cell tc = belief_.cell_at(target);
    if (!belief_.is_free(tc))
      throw std::invalid_argument("Environment::step: target not known-free");

    StepResult r;
    r.distance = dist(robot_.position, target);
    auto before = frontier_mask(belief_);

    robot_.position = target;
    robot_.visited.insert(belief_.idx(tc));
    robot_.traveled += r.distance;
    robot_.step_index += 1;
    sense(truth_, belief_, target, sensor_range_);

    auto after = frontier_mask(belief_);
    for (size_t i = 0; i < after.size(); ++i)
      if (after[i] && !before[i]) ++r.new_frontiers;

    completed_ = is_complete(belief_, tc);
    r.completed = completed_;
    done_ = completed_ || robot_.step_index >= step_cap_;
    r.done = done_;
    r.reward = step_reward(r.new_frontiers, r.distance, completed_);
    return r;
  }

  const GroundTruthMap& truth() const { return truth_; }
  const BeliefMap& belief() const { return belief_; }
  const RobotState& robot() const { return robot_; }
  double sensor_range() const { return sensor_range_; }
  int step_cap() const { return step_cap_; }
  bool done() const { return done_; }
  bool completed() const { return completed_; }
  int steps() const { return robot_.step_index; }

 private:
  GroundTruthMap truth_;
  BeliefMap belief_;
  RobotState robot_;
  double sensor_range_;
  int step_cap_;
  bool done_ = false;
  bool completed_ = false;
};

/// Deterministic start cell: uniform draw over free cells.
inline Cell pick_start_cell(const GroundTruthMap& m, uint64_t seed) {
  std::vector<Cell> free;
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x)
      if (m.is_free({x, y})) free.push_back({x, y});
  if (free.empty()) throw std::runtime_error("pick_start_cell: no free cells");
  std::mt19937_64 rng(detail::mix_seed(seed, 0x5741ull));
  return free[std::uniform_int_distribution<size_t>(0, free.size() - 1)(rng)];
}

// ---------------------------------------------------------------------------
// Map text format: first line "W H cell_size", then one row per line,
// '#' = occupied, '.' = free, row y=0 first.

inline void save_map(const GroundTruthMap& m, std::ostream& os) {
  os << m.width() << ' ' << m.height() << ' ';
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", m.cell_size());
  os << buf << '\n';
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x)
      os << (m.at({x, y}) == Occ::occupied ? '#' : '.');
    os << '\n';
  }
}

inline void save_map(const GroundTruthMap& m, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_map: cannot open " + path);
  save_map(m, f);
}

inline GroundTruthMap load_map(std::istream& is) {
  int w = 0, h = 0;
  double cs = 0.0;
  std::string header;
  if (!std::getline(is, header))
    throw std::runtime_error("load_map: empty input");
  {
    std::istringstream hs(header);
    if (!(hs >> w >> h >> cs))
      throw std::runtime_error("load_map: bad header line");
  }
  GroundTruthMap m(w, h, cs);
  for (int y = 0; y < h; ++y) {
    std::string row;
    if (!std::getline(is, row) || static_cast<int>(row.size()) < w)
      throw std::runtime_error("load_map: short row " + std::to_string(y));
    for (int x = 0; x < w; ++x) {
      char c = row[x];
      if (c == '#')
        m.set({x, y}, Occ::occupied);
      else if (c == '.')
        m.set({x, y}, Occ::free_space);
      else
        throw std::runtime_error("load_map: bad character in row " +
                                 std::to_string(y));
    }
  }
  return m;
}

inline GroundTruthMap load_map(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_map: cannot open " + path);
  return load_map(f);
}

/// Builds a map from rows of '#'/'.' text (test fixtures).
inline GroundTruthMap map_from_rows(const std::vector<std::string>& rows,
                                    double cell_size) {
  if (rows.empty()) throw std::invalid_argument("map_from_rows: empty");
  GroundTruthMap m(static_cast<int>(rows[0].size()),
                   static_cast<int>(rows.size()), cell_size);
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x)
      m.set({x, y}, rows[y][x] == '#' ? Occ::occupied : Occ::free_space);
  return m;
}

/// 1 x n free strip with a surrounding wall; the micro-environment used for
/// training sanity runs.
inline GroundTruthMap make_corridor_map(int n, double cell_size = 0.4) {
  GroundTruthMap m(n + 2, 3, cell_size);
  for (int x = 1; x <= n; ++x) m.set({x, 1}, Occ::free_space);
  return m;
}

}  // namespace grate
