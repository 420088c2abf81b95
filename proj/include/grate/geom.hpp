#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <vector>

namespace grate {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double norm(Vec2 a) { return std::sqrt(a.x * a.x + a.y * a.y); }
inline double dist(Vec2 a, Vec2 b) { return norm(a - b); }

// Grid cell index pair.
struct Cell {
  int x = 0;
  int y = 0;
  friend bool operator==(Cell a, Cell b) { return a.x == b.x && a.y == b.y; }
  friend bool operator!=(Cell a, Cell b) { return !(a == b); }
};

// Angle between two segments, in [0, pi].
inline double turn_angle(Vec2 prev_dir, Vec2 next_dir) {
  double np = norm(prev_dir), nn = norm(next_dir);
  if (np == 0.0 || nn == 0.0) return 0.0;
  double c = dot(prev_dir, next_dir) / (np * nn);
  c = std::max(-1.0, std::min(1.0, c));
  return std::acos(c);
}

// Supercover traversal of the segment joining the centers of cells a and b.
// Visits every cell the ideal segment touches, ordered by progress along the
// segment; when the segment passes exactly through a grid corner, both cells
// sharing that corner are visited before the diagonal one. `visit` returns
// false to stop early; walk_segment returns false iff it was stopped.
template <class F>
inline bool walk_segment(Cell a, Cell b, F&& visit) {
  int dx = std::abs(b.x - a.x), dy = std::abs(b.y - a.y);
  int sx = b.x > a.x ? 1 : -1;
  int sy = b.y > a.y ? 1 : -1;
  int x = a.x, y = a.y;
  if (!visit(Cell{x, y})) return false;
  int ix = 0, iy = 0;
  while (ix < dx || iy < dy) {
    // next vertical crossing at (ix+0.5)/dx, horizontal at (iy+0.5)/dy
    long long tx = static_cast<long long>(2 * ix + 1) * dy;
    long long ty = static_cast<long long>(2 * iy + 1) * dx;
    if (dy == 0 || (dx != 0 && tx < ty)) {
      x += sx;
      ++ix;
    } else if (dx == 0 || tx > ty) {
      y += sy;
      ++iy;
    } else {
      // exact corner: the segment grazes both side cells
      if (!visit(Cell{x + sx, y})) return false;
      if (!visit(Cell{x, y + sy})) return false;
      x += sx;
      y += sy;
      ++ix;
      ++iy;
    }
    if (!visit(Cell{x, y})) return false;
  }
  return true;
}

inline std::vector<Cell> segment_cells(Cell a, Cell b) {
  std::vector<Cell> out;
  out.reserve(static_cast<size_t>(std::abs(b.x - a.x) + std::abs(b.y - a.y) + 2));
  walk_segment(a, b, [&](Cell c) {
    out.push_back(c);
    return true;
  });
  return out;
}

}  // namespace grate
