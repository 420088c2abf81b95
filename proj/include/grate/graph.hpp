#pragma once

#include <algorithm>
#include <array>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "grate/geom.hpp"
#include "grate/world.hpp"

namespace grate {

struct NodeFeature {
  double x = 0.0;     // meters
  double y = 0.0;     // meters
  int utility = 0;    // observable frontier count
  int guidepost = 0;  // 1 iff near a previously visited waypoint
  Vec2 pos() const { return {x, y}; }
};

struct GraphConfig {
  int node_resolution = 4;     // lattice spacing, cells
  int k = 25;                  // nearest-neighbor candidates per node
  double sensor_range = 16.0;  // meters, for utility observability
};

/// Collision-free informative graph over the current belief. Neighbor lists
/// are kept sorted ascending; that order defines the policy's action space.
class BeliefGraph {
 public:
  std::vector<NodeFeature> nodes;
  std::vector<std::vector<int>> nbr;  // sorted ascending, symmetric
  int current_index = -1;
  int k = 0;

  int size() const { return static_cast<int>(nodes.size()); }

  bool connected(int i, int j) const {
    if (i == j) return false;
    const auto& n = nbr[static_cast<size_t>(i)];
    return std::binary_search(n.begin(), n.end(), j);
  }

  const std::vector<int>& neighbors(int i) const {
    return nbr[static_cast<size_t>(i)];
  }

  /// Paper-convention adjacency: a_ij = 0 means connected (diagonal 0).
  std::vector<uint8_t> dense_adjacency() const {
    int n = size();
    std::vector<uint8_t> a(static_cast<size_t>(n) * n, 1);
    for (int i = 0; i < n; ++i) {
      a[static_cast<size_t>(i) * n + i] = 0;
      for (int j : nbr[static_cast<size_t>(i)])
        a[static_cast<size_t>(i) * n + j] = 0;
    }
    return a;
  }

  size_t edge_count() const {
    size_t deg = 0;
    for (const auto& n : nbr) deg += n.size();
    return deg / 2;
  }
};

namespace detail {

/// All supercover cells of the segment are known-free on the belief.
inline bool belief_segment_free(const BeliefMap& b, Cell from, Cell to) {
  bool ok = true;
  walk_segment(from, to, [&](Cell q) {
    if (!b.is_free(q)) {
      ok = false;
      return false;
    }
    return true;
  });
  return ok;
}

/// Cells strictly before `target` are known-free (target itself may be
/// anything); used for frontier observability.
inline bool belief_line_to(const BeliefMap& b, Cell from, Cell target) {
  bool ok = true;
  walk_segment(from, target, [&](Cell q) {
    if (q == target) return false;
    if (!b.is_free(q)) {
      ok = false;
      return false;
    }
    return true;
  });
  return ok;
}

}  // namespace detail

/// Builds the belief graph: lattice nodes over free space (plus a coverage
/// fill so every free cell has a node within one resolution in L-infinity),
/// a node at the robot position, utility/guidepost features, and mutual
/// k-nearest-neighbor edges kept only when the straight segment crosses
/// known-free cells alone.
inline BeliefGraph extract_graph(const BeliefMap& belief,
                                 const std::set<size_t>& visited, Vec2 robot,
                                 const GraphConfig& cfg = {}) {
  Cell rc = belief.cell_at(robot);
  if (!belief.is_free(rc))
    throw std::invalid_argument("extract_graph: robot not in known-free cell");
  const int res = cfg.node_resolution;
  if (res < 1 || cfg.k < 1)
    throw std::invalid_argument("extract_graph: bad config");

  BeliefGraph g;
  g.k = cfg.k;

  std::vector<Cell> node_cells;
  std::vector<uint8_t> has_node(
      static_cast<size_t>(belief.width()) * belief.height(), 0);
  auto add_node = [&](Cell c) {
    node_cells.push_back(c);
    has_node[belief.idx(c)] = 1;
  };
  // Coverage means a line-of-sight node within L-inf distance `res`:
  // proximity alone is not enough — a node on the far side of a wall cannot
  // serve a corridor bend, and skipping the bend leaves the corridor legs
  // without a straight-segment connection.
  auto covered = [&](Cell c) {
    int y0 = std::max(0, c.y - res), y1 = std::min(belief.height() - 1, c.y + res);
    int x0 = std::max(0, c.x - res), x1 = std::min(belief.width() - 1, c.x + res);
    for (int yy = y0; yy <= y1; ++yy)
      for (int xx = x0; xx <= x1; ++xx)
        if (has_node[belief.idx({xx, yy})] &&
            detail::belief_segment_free(belief, c, {xx, yy}))
          return true;
    return false;
  };

  // primary lattice at cell centers, offset to stay interior
  const int off = res / 2;
  for (int y = off; y < belief.height(); y += res)
    for (int x = off; x < belief.width(); x += res)
      if (belief.is_free({x, y})) add_node({x, y});

  // every previously visited waypoint is a node: fill nodes can disappear
  // when belief growth covers their cell, but the trail the robot moved
  // along must survive re-extraction or the robot gets stranded on an
  // island of stale nodes
  for (size_t w : visited) {
    Cell c{static_cast<int>(w % belief.width()),
           static_cast<int>(w / belief.width())};
    if (belief.is_free(c) && !has_node[belief.idx(c)]) add_node(c);
  }

  // coverage fill, half-resolution offset lattices first: corridors narrower
  // than the lattice spacing always contain one of these phases, so they get
  // stable, evenly spaced nodes instead of belief-dependent stragglers
  const int phases[3][2] = {{0, 0}, {off, 0}, {0, off}};
  for (const auto& ph : phases)
    for (int y = ph[1]; y < belief.height(); y += res)
      for (int x = ph[0]; x < belief.width(); x += res)
        if (belief.is_free({x, y}) && !covered({x, y})) add_node({x, y});

  // last resort: cell-level sweep for any pocket the lattices miss
  for (int y = 0; y < belief.height(); ++y)
    for (int x = 0; x < belief.width(); ++x)
      if (belief.is_free({x, y}) && !covered({x, y})) add_node({x, y});

  // rescue nodes: every frontier must be resolvable by some node, or the
  // planner will eventually face a map whose remaining frontiers carry zero
  // utility everywhere and stall with work left to do. Most frontiers are
  // already resolvable from the lattice; for the rest, a node on the frontier
  // cell itself trivially observes the unknown cell across it (adjacent,
  // unobstructed).
  std::vector<Cell> fr = frontiers(belief);
  for (Cell f : fr) {
    if (has_node[belief.idx(f)]) continue;
    const Cell nb4[4] = {
        {f.x + 1, f.y}, {f.x - 1, f.y}, {f.x, f.y + 1}, {f.x, f.y - 1}};
    bool resolved = false;
    for (Cell uc : nb4) {
      if (!belief.in_bounds(uc) || belief.at(uc) != Bel::unknown) continue;
      for (Cell ncell : node_cells) {
        if (dist(belief.center(ncell), belief.center(uc)) <= cfg.sensor_range &&
            detail::belief_line_to(belief, ncell, uc)) {
          resolved = true;
          break;
        }
      }
      if (resolved) break;
    }
    if (!resolved) add_node(f);
  }

  for (Cell c : node_cells) {
    Vec2 p = belief.center(c);
    g.nodes.push_back({p.x, p.y, 0, 0});
  }

  // robot node: snap to the nearest line-of-sight node if within half a
  // resolution (snapping through a wall would teleport the decision point to
  // the wrong side), otherwise insert an extra node at the robot position
  const double snap_radius = 0.5 * res * belief.cell_size();
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (int i = 0; i < g.size(); ++i) {
    double d = dist(g.nodes[static_cast<size_t>(i)].pos(), robot);
    if (d < best_d && d <= snap_radius &&
        detail::belief_segment_free(belief, rc, node_cells[static_cast<size_t>(i)])) {
      best_d = d;
      best = i;
    }
  }
  if (best >= 0 && best_d <= snap_radius) {
    g.current_index = best;
  } else {
    g.nodes.push_back({robot.x, robot.y, 0, 0});
    node_cells.push_back(rc);
    g.current_index = g.size() - 1;
  }

  // mutual k-nearest-neighbor edges with line-of-sight pruning
  auto build_edges = [&]() {
    const int n = g.size();
    std::vector<std::vector<int>> cand(static_cast<size_t>(n));
    std::vector<std::pair<double, int>> order;
    for (int i = 0; i < n; ++i) {
      order.clear();
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        order.emplace_back(dist(g.nodes[static_cast<size_t>(i)].pos(),
                                g.nodes[static_cast<size_t>(j)].pos()),
                           j);
      }
      size_t kk = std::min<size_t>(static_cast<size_t>(cfg.k), order.size());
      std::partial_sort(order.begin(), order.begin() + static_cast<long>(kk),
                        order.end());
      for (size_t t = 0; t < kk; ++t) {
        int j = order[t].second;
        if (detail::belief_segment_free(belief,
                                        node_cells[static_cast<size_t>(i)],
                                        node_cells[static_cast<size_t>(j)]))
          cand[static_cast<size_t>(i)].push_back(j);
      }
      std::sort(cand[static_cast<size_t>(i)].begin(),
                cand[static_cast<size_t>(i)].end());
    }
    g.nbr.assign(static_cast<size_t>(n), {});
    for (int i = 0; i < n; ++i)
      for (int j : cand[static_cast<size_t>(i)]) {
        if (j < i) continue;  // handle each unordered pair once
        if (std::binary_search(cand[static_cast<size_t>(j)].begin(),
                               cand[static_cast<size_t>(j)].end(), i)) {
          g.nbr[static_cast<size_t>(i)].push_back(j);
          g.nbr[static_cast<size_t>(j)].push_back(i);
        }
      }
    for (auto& lst : g.nbr) std::sort(lst.begin(), lst.end());
  };
  build_edges();

  // Connectivity rescue. Straight-line edges cannot always span a bend in a
  // narrow known-free sliver, so the node graph can fragment even though the
  // known-free region itself is connected. When that happens, find a
  // known-free cell path from the robot's component to a stranded one and
  // drop relay nodes greedily where line of sight breaks along it, then
  // rebuild the edges. Without this, path-based planners see unreachable
  // distances and give up with work left to do.
  for (int round = 0; round < 8; ++round) {
    const int n = g.size();
    std::vector<int> comp(static_cast<size_t>(n), -1);
    std::deque<int> cq{g.current_index};
    comp[static_cast<size_t>(g.current_index)] = 0;
    while (!cq.empty()) {
      int i = cq.front();
      cq.pop_front();
      for (int j : g.nbr[static_cast<size_t>(i)])
        if (comp[static_cast<size_t>(j)] < 0) {
          comp[static_cast<size_t>(j)] = 0;
          cq.push_back(j);
        }
    }
    if (std::find(comp.begin(), comp.end(), -1) == comp.end()) break;

    std::vector<int> node_at(
        static_cast<size_t>(belief.width()) * belief.height(), -1);
    for (int i = 0; i < n; ++i)
      node_at[belief.idx(node_cells[static_cast<size_t>(i)])] = i;

    // multi-source BFS over known-free cells from the robot's component
    std::vector<int> parent(
        static_cast<size_t>(belief.width()) * belief.height(), -2);
    std::deque<size_t> q;
    for (int i = 0; i < n; ++i)
      if (comp[static_cast<size_t>(i)] == 0) {
        size_t s = belief.idx(node_cells[static_cast<size_t>(i)]);
        if (parent[s] == -2) {
          parent[s] = -1;
          q.push_back(s);
        }
      }
    long hit = -1;
    while (!q.empty() && hit < 0) {
      size_t ci = q.front();
      q.pop_front();
      if (node_at[ci] >= 0 && comp[static_cast<size_t>(node_at[ci])] < 0) {
        hit = static_cast<long>(ci);
        break;
      }
      Cell c{static_cast<int>(ci % belief.width()),
             static_cast<int>(ci / belief.width())};
      const Cell nb4[4] = {
          {c.x + 1, c.y}, {c.x - 1, c.y}, {c.x, c.y + 1}, {c.x, c.y - 1}};
      for (Cell nc : nb4)
        if (belief.is_free(nc) && parent[belief.idx(nc)] == -2) {
          parent[belief.idx(nc)] = static_cast<int>(ci);
          q.push_back(belief.idx(nc));
        }
    }
    if (hit < 0) break;  // stranded nodes unreachable even on foot; give up

    std::vector<Cell> path;
    for (long ci = hit; ci >= 0; ci = parent[static_cast<size_t>(ci)])
      path.push_back({static_cast<int>(ci % belief.width()),
                      static_cast<int>(ci / belief.width())});
    std::reverse(path.begin(), path.end());  // component-0 node ... hit

    // greedy string-pulling: walk the path, and each time line of sight from
    // the last relay breaks, plant a node one cell back (which is visible by
    // construction)
    bool added = false;
    Cell u = path.front();
    for (size_t t = 1; t < path.size(); ++t) {
      if (!detail::belief_segment_free(belief, u, path[t])) {
        u = path[t - 1];
        if (!has_node[belief.idx(u)]) {
          add_node(u);
          Vec2 p = belief.center(u);
          g.nodes.push_back({p.x, p.y, 0, 0});
          added = true;
        }
      }
    }
    if (!added) break;  // relays already present; edges simply will not form
    build_edges();
  }

  // features
  // A frontier counts toward a node's utility only when the node could
  // actually observe unknown space across it: some unknown 4-neighbor of the
  // frontier is reachable by a straight line through known-free cells. A
  // frontier cell that is merely visible contributes nothing — sensing from
  // the node would leave it unresolved, so nodes freshly sensed from carry
  // zero utility instead of a stale count.
  std::vector<std::array<Cell, 4>> fr_unknown(fr.size());
  std::vector<int> fr_unknown_n(fr.size(), 0);
  for (size_t t = 0; t < fr.size(); ++t) {
    const Cell f = fr[t];
    const Cell nb4[4] = {
        {f.x + 1, f.y}, {f.x - 1, f.y}, {f.x, f.y + 1}, {f.x, f.y - 1}};
    for (Cell uc : nb4)
      if (belief.in_bounds(uc) && belief.at(uc) == Bel::unknown)
        fr_unknown[t][static_cast<size_t>(fr_unknown_n[t]++)] = uc;
  }
  const double guide_radius = 0.5 * res * belief.cell_size();
  for (int i = 0; i < g.size(); ++i) {
    NodeFeature& nf = g.nodes[static_cast<size_t>(i)];
    Cell nc = node_cells[static_cast<size_t>(i)];
    int u = 0;
    for (size_t t = 0; t < fr.size(); ++t) {
      bool observable = false;
      for (int q = 0; q < fr_unknown_n[t] && !observable; ++q) {
        const Cell uc = fr_unknown[t][static_cast<size_t>(q)];
        // range and line-of-sight on the unknown cell itself, mirroring the
        // sensor model exactly: whatever counts here is what sensing from
        // this node would reveal, so a freshly sensed-from node scores 0
        observable = dist(nf.pos(), belief.center(uc)) <= cfg.sensor_range &&
                     detail::belief_line_to(belief, nc, uc);
      }
      if (observable) ++u;
    }
    nf.utility = u;
    for (size_t w : visited) {
      Cell wc{static_cast<int>(w % belief.width()),
              static_cast<int>(w / belief.width())};
      if (dist(nf.pos(), belief.center(wc)) <= guide_radius) {
        nf.guidepost = 1;
        break;
      }
    }
  }
  return g;
}

/// Feature matrix V in R^{N x 4}, row-major: x,y scaled by the map extent
/// into [0,1], utility scaled by the graph max (zeros stay zero), guidepost
/// passed through.
inline std::vector<double> normalize(const BeliefGraph& g, double width_m,
                                     double height_m) {
  if (g.size() == 0) throw std::invalid_argument("normalize: empty graph");
  int umax = 0;
  for (const auto& nf : g.nodes) umax = std::max(umax, nf.utility);
  std::vector<double> v;
  v.reserve(static_cast<size_t>(g.size()) * 4);
  for (const auto& nf : g.nodes) {
    v.push_back(nf.x / width_m);
    v.push_back(nf.y / height_m);
    v.push_back(umax > 0 ? static_cast<double>(nf.utility) / umax : 0.0);
    v.push_back(static_cast<double>(nf.guidepost));
  }
  return v;
}

// ---------------------------------------------------------------------------
// Graph dump format: header "N k", then N node lines "x y u g", then one
// "i j" line per undirected edge (i < j) until end of input.

inline void dump_graph(const BeliefGraph& g, std::ostream& os) {
  os << g.size() << ' ' << g.k << '\n';
  char buf[64];
  for (const auto& nf : g.nodes) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g %d %d", nf.x, nf.y, nf.utility,
                  nf.guidepost);
    os << buf << '\n';
  }
  for (int i = 0; i < g.size(); ++i)
    for (int j : g.nbr[static_cast<size_t>(i)])
      if (i < j) os << i << ' ' << j << '\n';
}

inline void dump_graph(const BeliefGraph& g, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("dump_graph: cannot open " + path);
  dump_graph(g, f);
}

inline BeliefGraph load_graph(std::istream& is) {
  BeliefGraph g;
  int n = 0;
  if (!(is >> n >> g.k)) throw std::runtime_error("load_graph: bad header");
  g.nodes.resize(static_cast<size_t>(n));
  for (auto& nf : g.nodes)
    if (!(is >> nf.x >> nf.y >> nf.utility >> nf.guidepost))
      throw std::runtime_error("load_graph: bad node line");
  g.nbr.assign(static_cast<size_t>(n), {});
  int i, j;
  while (is >> i >> j) {
    if (i < 0 || j < 0 || i >= n || j >= n || i == j)
      throw std::runtime_error("load_graph: bad edge");
    g.nbr[static_cast<size_t>(i)].push_back(j);
    g.nbr[static_cast<size_t>(j)].push_back(i);
  }
  for (auto& lst : g.nbr) std::sort(lst.begin(), lst.end());
  g.current_index = n > 0 ? 0 : -1;
  return g;
}

inline BeliefGraph load_graph(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_graph: cannot open " + path);
  return load_graph(f);
}

}  // namespace grate
