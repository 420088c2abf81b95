#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "grate/geom.hpp"
#include "grate/net.hpp"

namespace grate {

// 4-state constant-velocity filter over decision steps (Δt = 1):
// state (x, y, v_x, v_y), position-only measurements.

using KfVec4 = std::array<double, 4>;
using KfMat4 = std::array<double, 16>;   // row-major 4x4
using KfMat24 = std::array<double, 8>;   // row-major 2x4
using KfMat2 = std::array<double, 4>;    // row-major 2x2

struct KfState {
  KfVec4 x{};  // mean
  KfMat4 P{};  // covariance
};

struct KfConfig {
  KfMat4 F{};   // state transition
  KfMat24 H{};  // position selector
  KfMat4 Q{};   // process noise covariance
  KfMat2 R{};   // measurement noise covariance
};

/// Unit-Δt constant-velocity model; Q from the discrete white-noise
/// acceleration model with std sigma_a (m/step²), R = sigma_z²·I.
inline KfConfig make_kf_config(double sigma_a = 0.5, double sigma_z = 1.6) {
  if (sigma_a < 0.0 || sigma_z <= 0.0)
    throw std::invalid_argument("make_kf_config: bad noise parameters");
  KfConfig c{};
  // F = [I2, I2; 0, I2]
  const double F[16] = {1, 0, 1, 0, 0, 1, 0, 1, 0, 0, 1, 0, 0, 0, 0, 1};
  std::copy(std::begin(F), std::end(F), c.F.begin());
  const double H[8] = {1, 0, 0, 0, 0, 1, 0, 0};
  std::copy(std::begin(H), std::end(H), c.H.begin());
  const double a2 = sigma_a * sigma_a;
  // white-noise acceleration, Δt = 1: blocks [1/4, 1/2; 1/2, 1] · σ_a²
  const double Q[16] = {0.25, 0, 0.5, 0, 0, 0.25, 0, 0.5,
                        0.5,  0, 1.0, 0, 0, 0.5,  0, 1.0};
  for (int i = 0; i < 16; ++i) c.Q[static_cast<size_t>(i)] = a2 * Q[i];
  c.R = {sigma_z * sigma_z, 0, 0, sigma_z * sigma_z};
  return c;
}

namespace detail {

inline KfMat4 mat4_mul(const KfMat4& a, const KfMat4& b) {
  KfMat4 c{};
  for (int i = 0; i < 4; ++i)
    for (int k = 0; k < 4; ++k) {
      const double av = a[static_cast<size_t>(i * 4 + k)];
      for (int j = 0; j < 4; ++j)
        c[static_cast<size_t>(i * 4 + j)] += av * b[static_cast<size_t>(k * 4 + j)];
    }
  return c;
}

inline KfMat4 mat4_transpose(const KfMat4& a) {
  KfMat4 t{};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      t[static_cast<size_t>(j * 4 + i)] = a[static_cast<size_t>(i * 4 + j)];
  return t;
}

inline KfVec4 mat4_vec(const KfMat4& a, const KfVec4& v) {
  KfVec4 r{};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      r[static_cast<size_t>(i)] += a[static_cast<size_t>(i * 4 + j)] * v[static_cast<size_t>(j)];
  return r;
}

}  // namespace detail

/// Eq. 13: x̂⁻ = F x̂, P⁻ = F P Fᵀ + Q.
inline KfState kf_predict(const KfState& s, const KfConfig& cfg) {
  KfState out;
  out.x = detail::mat4_vec(cfg.F, s.x);
  KfMat4 fp = detail::mat4_mul(cfg.F, s.P);
  out.P = detail::mat4_mul(fp, detail::mat4_transpose(cfg.F));
  for (int i = 0; i < 16; ++i) out.P[static_cast<size_t>(i)] += cfg.Q[static_cast<size_t>(i)];
  return out;
}

/// Eq. 14: K = P⁻Hᵀ(HP⁻Hᵀ+R)⁻¹, x̂ = x̂⁻ + K(z − Hx̂⁻), P = (I−KH)P⁻,
/// re-symmetrized.
inline KfState kf_update(const KfState& s, Vec2 z, const KfConfig& cfg) {
  // with H = position selector, HP⁻Hᵀ is the position block of P⁻
  const double s00 = s.P[0] + cfg.R[0];
  const double s01 = s.P[1] + cfg.R[1];
  const double s10 = s.P[4] + cfg.R[2];
  const double s11 = s.P[5] + cfg.R[3];
  const double det = s00 * s11 - s01 * s10;
  if (std::abs(det) < 1e-300)
    throw std::runtime_error("kf_update: singular innovation covariance");
  const double i00 = s11 / det, i01 = -s01 / det;
  const double i10 = -s10 / det, i11 = s00 / det;

  // K = P⁻Hᵀ S⁻¹; P⁻Hᵀ is the first two columns of P⁻
  double K[8];
  for (int r = 0; r < 4; ++r) {
    const double p0 = s.P[static_cast<size_t>(r * 4)];
    const double p1 = s.P[static_cast<size_t>(r * 4 + 1)];
    K[r * 2] = p0 * i00 + p1 * i10;
    K[r * 2 + 1] = p0 * i01 + p1 * i11;
  }

  const double innov0 = z.x - s.x[0];
  const double innov1 = z.y - s.x[1];

  KfState out;
  for (int r = 0; r < 4; ++r)
    out.x[static_cast<size_t>(r)] =
        s.x[static_cast<size_t>(r)] + K[r * 2] * innov0 + K[r * 2 + 1] * innov1;

  // (I − KH) has identity columns 2,3; KH only touches columns 0,1
  KfMat4 ikh{};
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) {
      double v = (r == c) ? 1.0 : 0.0;
      if (c < 2) v -= K[r * 2 + c];
      ikh[static_cast<size_t>(r * 4 + c)] = v;
    }
  out.P = detail::mat4_mul(ikh, s.P);
  KfMat4 pt = detail::mat4_transpose(out.P);
  for (int i = 0; i < 16; ++i)
    out.P[static_cast<size_t>(i)] = 0.5 * (out.P[static_cast<size_t>(i)] + pt[static_cast<size_t>(i)]);
  return out;
}

/// Eq. 16/17: bivariate Gaussian density of the position marginal
/// (μ = x̂[0:2], Σ = P[0:2,0:2]) at p. Near-singular Σ (det < 1e−12) is
/// floored by adding 1e−6·I; *floored reports whether that happened.
inline double position_density(const KfState& s, Vec2 p,
                               bool* floored = nullptr) {
  double a = s.P[0], b = s.P[1], c = s.P[4], d = s.P[5];
  double det = a * d - b * c;
  bool fl = false;
  if (det < 1e-12) {
    a += 1e-6;
    d += 1e-6;
    det = a * d - b * c;
    fl = true;
  }
  if (floored) *floored = fl;
  const double dx = p.x - s.x[0];
  const double dy = p.y - s.x[1];
  // Σ⁻¹ = [d, -b; -c, a]/det
  const double quad = (d * dx * dx - (b + c) * dx * dy + a * dy * dy) / det;
  return std::exp(-0.5 * quad) / (2.0 * std::acos(-1.0) * std::sqrt(det));
}

/// Eq. 18 mixing result. scores sums to 2 when no fallback triggered;
/// selection is by argmax with ties broken toward the lowest index.
struct MixResult {
  std::vector<double> scores;     // π'
  std::vector<double> densities;  // raw f per candidate
  int argmax = 0;
  bool fallback = false;  // all densities underflowed; scores = π
};

/// Eq. 18 arithmetic: π'(a) = π(a) + f_a/Σ_b f_b, argmax with ties toward the
/// lowest index; all-zero densities fall back to π' = π with a status flag.
inline MixResult mix_scores(const std::vector<double>& pi_probs,
                            const std::vector<double>& densities) {
  if (densities.size() != pi_probs.size())
    throw std::invalid_argument("mix_scores: densities misaligned with policy");
  if (densities.empty()) throw std::invalid_argument("mix_scores: no candidates");
  MixResult r;
  r.densities = densities;
  double total = 0.0;
  for (double f : densities) total += f;
  r.scores = pi_probs;
  if (total > 0.0) {
    for (size_t i = 0; i < r.scores.size(); ++i)
      r.scores[i] += r.densities[i] / total;
  } else {
    r.fallback = true;
  }
  for (size_t i = 1; i < r.scores.size(); ++i)
    if (r.scores[i] > r.scores[static_cast<size_t>(r.argmax)])
      r.argmax = static_cast<int>(i);
  return r;
}

/// Eq. 18 over position densities of the predicted state at each candidate.
inline MixResult mix_policy(const PolicyOutput& pi, const KfState& predicted,
                            const std::vector<Vec2>& candidates) {
  if (candidates.size() != pi.probs.size())
    throw std::invalid_argument("mix_policy: candidates misaligned with policy");
  std::vector<double> densities;
  densities.reserve(candidates.size());
  for (Vec2 p : candidates)
    densities.push_back(position_density(predicted, p));
  return mix_scores(pi.probs, densities);
}

/// History-driven filter over selected waypoints: predict → mix with the
/// policy → argmax → feed the selected waypoint back as the observation.
class WaypointSmoother {
 public:
  explicit WaypointSmoother(KfConfig cfg = make_kf_config())
      : cfg_(std::move(cfg)) {}

  /// Initialize at the episode start: x̂₀ = (position, 0, 0), P₀ = 1e6·I.
  void reset(Vec2 position) {
    st_ = KfState{};
    st_.x = {position.x, position.y, 0.0, 0.0};
    for (int i = 0; i < 4; ++i) st_.P[static_cast<size_t>(i * 4 + i)] = 1e6;
    initialized_ = true;
  }

  bool initialized() const { return initialized_; }
  const KfState& state() const { return st_; }

  struct StepResult {
    int action = 0;
    KfState predicted;  // prior used for mixing
    KfState posterior;  // after absorbing the selected waypoint
    MixResult mix;
  };

  StepResult step(const PolicyOutput& pi, const std::vector<Vec2>& candidates) {
    if (!initialized_)
      throw std::logic_error("WaypointSmoother::step: reset() not called");
    StepResult out;
    out.predicted = kf_predict(st_, cfg_);
    out.mix = mix_policy(pi, out.predicted, candidates);
    out.action = out.mix.argmax;
    out.posterior =
        kf_update(out.predicted, candidates[static_cast<size_t>(out.action)], cfg_);
    st_ = out.posterior;
    return out;
  }

  const KfConfig& config() const { return cfg_; }

 private:
  KfConfig cfg_;
  KfState st_{};
  bool initialized_ = false;
};

/// One-line debug record: x̂, diag P, per-candidate f, π, π', chosen index.
inline std::string smoother_debug_record(const WaypointSmoother::StepResult& r,
                                         const PolicyOutput& pi) {
  std::ostringstream os;
  os << "x";
  for (double v : r.posterior.x) os << ' ' << v;
  os << " Pdiag";
  for (int i = 0; i < 4; ++i) os << ' ' << r.posterior.P[static_cast<size_t>(i * 4 + i)];
  os << " f";
  for (double v : r.mix.densities) os << ' ' << v;
  os << " pi";
  for (double v : pi.probs) os << ' ' << v;
  os << " mixed";
  for (double v : r.mix.scores) os << ' ' << v;
  os << " chosen " << r.action;
  return os.str();
}

}  // namespace grate
