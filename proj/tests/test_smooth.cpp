#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "grate/smooth.hpp"
#include "oracles.hpp"

using namespace grate;

namespace {

oracle::Kf to_oracle(const KfState& s, const KfConfig& c) {
  oracle::Kf k;
  for (int i = 0; i < 4; ++i) {
    k.x.at(i, 0) = s.x[static_cast<size_t>(i)];
    for (int j = 0; j < 4; ++j) {
      k.P.at(i, j) = s.P[static_cast<size_t>(i * 4 + j)];
      k.F.at(i, j) = c.F[static_cast<size_t>(i * 4 + j)];
      k.Q.at(i, j) = c.Q[static_cast<size_t>(i * 4 + j)];
    }
  }
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 4; ++j)
      k.H.at(i, j) = c.H[static_cast<size_t>(i * 4 + j)];
    for (int j = 0; j < 2; ++j)
      k.R.at(i, j) = c.R[static_cast<size_t>(i * 2 + j)];
  }
  return k;
}

double max_abs_diff(const KfState& s, const oracle::Kf& k) {
  double m = 0.0;
  for (int i = 0; i < 4; ++i) {
    m = std::max(m, std::fabs(s.x[static_cast<size_t>(i)] - k.x.at(i, 0)));
    for (int j = 0; j < 4; ++j)
      m = std::max(m,
                   std::fabs(s.P[static_cast<size_t>(i * 4 + j)] - k.P.at(i, j)));
  }
  return m;
}

KfState random_state(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  KfState s;
  for (auto& v : s.x) v = u(rng);
  // random SPD covariance: A Aᵀ + I
  oracle::Mat a(4, 4);
  for (auto& v : a.v) v = u(rng);
  const oracle::Mat p = oracle::mm(a, oracle::transpose(a));
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      s.P[static_cast<size_t>(i * 4 + j)] = p.at(i, j) + (i == j ? 1.0 : 0.0);
  return s;
}

void check_sym_psd(const KfState& s) {
  oracle::Mat p(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      p.at(i, j) = s.P[static_cast<size_t>(i * 4 + j)];
      CHECK(std::fabs(s.P[static_cast<size_t>(i * 4 + j)] -
                      s.P[static_cast<size_t>(j * 4 + i)]) <= 1e-10);
    }
  const auto eig = oracle::sym_eigenvalues(p);
  CHECK(eig.front() >= -1e-10);
}

PolicyOutput make_pi(std::vector<double> probs) {
  PolicyOutput pi;
  pi.probs = std::move(probs);
  pi.actions.resize(pi.probs.size());
  for (size_t i = 0; i < pi.actions.size(); ++i)
    pi.actions[i] = static_cast<int>(i);
  return pi;
}

}  // namespace

// ---------------------------------------------------------------------------
// kf_predict

TEST_CASE("kf_predict: zero velocity and zero process noise change nothing") {
  KfConfig cfg = make_kf_config(0.0, 1.6);  // sigma_a = 0 -> Q = 0
  KfState s;
  s.x = {3.0, -2.0, 0.0, 0.0};
  for (int i = 0; i < 4; ++i) s.P[static_cast<size_t>(i * 4 + i)] = 0.7;
  const KfState p = kf_predict(s, cfg);
  CHECK(p.x[0] == 3.0);
  CHECK(p.x[1] == -2.0);
  CHECK(p.x[2] == 0.0);
  CHECK(p.x[3] == 0.0);
  // P' = F P Fᵀ exactly, cross-checked with the matrix oracle
  oracle::Kf k = to_oracle(s, cfg);
  oracle::kf_predict(k);
  CHECK(max_abs_diff(p, k) <= 1e-12);
}

TEST_CASE("kf_predict: unit velocity advances position by one step") {
  KfConfig cfg = make_kf_config();
  KfState s;
  s.x = {2.0, 3.0, 1.0, 0.0};
  const KfState p = kf_predict(s, cfg);
  CHECK(p.x[0] == 3.0);
  CHECK(p.x[1] == 3.0);
  CHECK(p.x[2] == 1.0);
  CHECK(p.x[3] == 0.0);
}

TEST_CASE("kf_predict: randomized states match the matrix oracle") {
  std::mt19937_64 rng(31);
  KfConfig cfg = make_kf_config(0.5, 1.6);
  for (int trial = 0; trial < 50; ++trial) {
    KfState s = random_state(rng);
    const KfState p = kf_predict(s, cfg);
    oracle::Kf k = to_oracle(s, cfg);
    oracle::kf_predict(k);
    CHECK(max_abs_diff(p, k) <= 1e-10);
  }
}

// ---------------------------------------------------------------------------
// kf_update

TEST_CASE("kf_update: a measurement equal to the prediction leaves the mean") {
  KfConfig cfg = make_kf_config();
  std::mt19937_64 rng(32);
  KfState s = random_state(rng);
  const Vec2 z{s.x[0], s.x[1]};
  const KfState u = kf_update(s, z, cfg);
  CHECK(u.x[0] == doctest::Approx(s.x[0]).epsilon(1e-14));
  CHECK(u.x[1] == doctest::Approx(s.x[1]).epsilon(1e-14));
  CHECK(u.x[2] == doctest::Approx(s.x[2]).epsilon(1e-14));
  CHECK(u.x[3] == doctest::Approx(s.x[3]).epsilon(1e-14));
}

TEST_CASE("kf_update: huge measurement noise means a vanishing gain") {
  KfConfig cfg = make_kf_config(0.5, 1e6);  // R = 1e12 * I
  std::mt19937_64 rng(33);
  KfState s = random_state(rng);
  const KfState u = kf_update(s, Vec2{100.0, -50.0}, cfg);
  double dn = 0.0;
  for (int i = 0; i < 4; ++i)
    dn += (u.x[static_cast<size_t>(i)] - s.x[static_cast<size_t>(i)]) *
          (u.x[static_cast<size_t>(i)] - s.x[static_cast<size_t>(i)]);
  CHECK(std::sqrt(dn) <= 1e-6);
}

TEST_CASE("kf_update: randomized cases match the matrix oracle to 1e-10") {
  std::mt19937_64 rng(34);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  KfConfig cfg = make_kf_config(0.5, 1.6);
  for (int trial = 0; trial < 50; ++trial) {
    KfState s = random_state(rng);
    const Vec2 z{u(rng), u(rng)};
    const KfState got = kf_update(s, z, cfg);
    oracle::Kf k = to_oracle(s, cfg);
    oracle::kf_update(k, z.x, z.y);
    CHECK(max_abs_diff(got, k) <= 1e-10);
    check_sym_psd(got);
  }
}

TEST_CASE("kf cycles: predict/update chains stay symmetric PSD and on-oracle") {
  std::mt19937_64 rng(35);
  std::uniform_real_distribution<double> step(-1.5, 1.5);
  KfConfig cfg = make_kf_config();
  WaypointSmoother sm(cfg);  // exercise through the public wrapper state too
  KfState s;
  s.x = {0.0, 0.0, 0.0, 0.0};
  for (int i = 0; i < 4; ++i) s.P[static_cast<size_t>(i * 4 + i)] = 1e6;
  oracle::Kf k = to_oracle(s, cfg);
  double zx = 0.0, zy = 0.0;
  for (int t = 0; t < 200; ++t) {
    zx += step(rng);
    zy += step(rng);
    s = kf_predict(s, cfg);
    oracle::kf_predict(k);
    s = kf_update(s, Vec2{zx, zy}, cfg);
    oracle::kf_update(k, zx, zy);
    CHECK(max_abs_diff(s, k) <= 1e-10);
    check_sym_psd(s);
  }
}

// ---------------------------------------------------------------------------
// position_density

TEST_CASE("position_density: at the mean the density is 1/(2*pi*sqrt(det))") {
  KfState s;
  s.x = {1.5, -0.5, 0.0, 0.0};
  s.P[0] = 1.0;
  s.P[5] = 1.0;
  s.P[10] = 1.0;
  s.P[15] = 1.0;
  const double got = position_density(s, Vec2{1.5, -0.5});
  CHECK(got == doctest::Approx(1.0 / (2.0 * M_PI)).epsilon(1e-12));
}

TEST_CASE("position_density: Mahalanobis distance 2 gives e^-2/(2*pi)") {
  KfState s;
  s.x = {0.0, 0.0, 0.0, 0.0};
  s.P[0] = 1.0;
  s.P[5] = 1.0;
  const double got = position_density(s, Vec2{2.0, 0.0});
  CHECK(got == doctest::Approx(std::exp(-2.0) / (2.0 * M_PI)).epsilon(1e-12));
}

TEST_CASE("position_density: randomized covariances match the formula oracle") {
  std::mt19937_64 rng(36);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    KfState s = random_state(rng);
    const Vec2 p{u(rng), u(rng)};
    oracle::Mat sigma(2, 2);
    sigma.at(0, 0) = s.P[0];
    sigma.at(0, 1) = s.P[1];
    sigma.at(1, 0) = s.P[4];
    sigma.at(1, 1) = s.P[5];
    const double want = oracle::gauss2(p.x, p.y, s.x[0], s.x[1], sigma);
    CHECK(position_density(s, p) == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("position_density: a degenerate covariance is floored and flagged") {
  KfState s;
  s.P[0] = 1e-13;
  s.P[5] = 1e-13;
  bool floored = false;
  const double got = position_density(s, Vec2{0.0, 0.0}, &floored);
  CHECK(floored);
  CHECK(std::isfinite(got));
  CHECK(got > 0.0);
}

// ---------------------------------------------------------------------------
// mixing

TEST_CASE("mix: uniform policy with equal densities scores 2/3 each") {
  const auto mix = mix_scores({1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0},
                              {2.0, 2.0, 2.0});
  REQUIRE(mix.scores.size() == 3);
  for (double sc : mix.scores) CHECK(sc == 2.0 / 3.0);
  CHECK(mix.argmax == 0);  // exact tie -> lowest index
  CHECK(!mix.fallback);
}

TEST_CASE("mix: a dominant density wins under a uniform policy") {
  const auto mix = mix_scores({0.25, 0.25, 0.25, 0.25},
                              {0.01, 0.02, 5.0, 0.01});
  CHECK(mix.argmax == 2);
}

TEST_CASE("mix: worked three-candidate example") {
  // pi = (0.6, 0.3, 0.1); densities normalize to exactly (0.1, 0.6, 0.3)
  const std::vector<double> pi = {0.6, 0.3, 0.1};
  const std::vector<double> dens = {1.0, 6.0, 3.0};
  const auto mix = mix_scores(pi, dens);
  const double total = dens[0] + dens[1] + dens[2];
  for (size_t i = 0; i < 3; ++i)
    CHECK(mix.scores[i] == pi[i] + dens[i] / total);
  CHECK(mix.scores[0] == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(mix.scores[1] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(mix.scores[2] == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(mix.argmax == 1);
}

TEST_CASE("mix: scores always sum to 2 when no fallback triggers") {
  std::mt19937_64 rng(37);
  std::uniform_real_distribution<double> u(0.01, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    const size_t n = 2 + rng() % 6;
    std::vector<double> pi(n), dens(n);
    double psum = 0.0;
    for (auto& v : pi) psum += (v = u(rng));
    for (auto& v : pi) v /= psum;
    for (auto& v : dens) v = u(rng);
    const auto mix = mix_scores(pi, dens);
    REQUIRE(!mix.fallback);
    double s = 0.0;
    for (double sc : mix.scores) s += sc;
    CHECK(std::fabs(s - 2.0) <= 1e-9);
  }
}

TEST_CASE("mix: argmax is invariant under positive rescaling of densities") {
  std::mt19937_64 rng(38);
  std::uniform_real_distribution<double> u(0.01, 3.0);
  for (double factor : {1e-6, 0.5, 7.3, 1e6}) {
    for (int trial = 0; trial < 25; ++trial) {
      const size_t n = 2 + rng() % 6;
      std::vector<double> pi(n), dens(n), scaled(n);
      double psum = 0.0;
      for (auto& v : pi) psum += (v = u(rng));
      for (auto& v : pi) v /= psum;
      for (size_t i = 0; i < n; ++i) {
        dens[i] = u(rng);
        scaled[i] = dens[i] * factor;
      }
      CHECK(mix_scores(pi, dens).argmax == mix_scores(pi, scaled).argmax);
    }
  }
}

TEST_CASE("mix: total density underflow falls back to the raw policy") {
  const auto mix = mix_scores({0.6, 0.4}, {0.0, 0.0});
  CHECK(mix.fallback);
  CHECK(mix.scores[0] == 0.6);
  CHECK(mix.scores[1] == 0.4);
  CHECK(mix.argmax == 0);
}

TEST_CASE("mix: misaligned candidates are rejected") {
  CHECK_THROWS_AS(mix_scores({0.5, 0.5}, {1.0}), std::invalid_argument);
  KfState s;
  s.P[0] = s.P[5] = 1.0;
  CHECK_THROWS_AS(
      mix_policy(make_pi({0.5, 0.5}), s, std::vector<Vec2>{{1.0, 1.0}}),
      std::invalid_argument);
}

// ---------------------------------------------------------------------------
// smoother_step

TEST_CASE("smoother_step: with a flat prior the policy argmax wins") {
  WaypointSmoother sm;
  sm.reset(Vec2{5.0, 5.0});
  const std::vector<Vec2> candidates = {{6.0, 5.0}, {5.0, 6.0}, {4.0, 5.0}};
  const auto r = sm.step(make_pi({0.2, 0.5, 0.3}), candidates);
  CHECK(r.action == 1);
}

TEST_CASE("smoother_step: straight history favors continuing straight") {
  WaypointSmoother sm;
  sm.reset(Vec2{0.0, 0.0});
  // five steps of forced straight-line travel along +x
  Vec2 pos{0.0, 0.0};
  for (int t = 0; t < 5; ++t) {
    const std::vector<Vec2> cands = {{pos.x + 2.0, pos.y}};
    const auto r = sm.step(make_pi({1.0}), cands);
    pos = cands[static_cast<size_t>(r.action)];
  }
  // now offer straight-ahead vs. a sharp zig-zag under a uniform policy
  const std::vector<Vec2> cands = {{pos.x + 2.0, pos.y},
                                   {pos.x - 1.4, pos.y + 1.4}};
  WaypointSmoother copy = sm;  // replay the same decision through mix_policy
  const auto r = sm.step(make_pi({0.5, 0.5}), cands);
  CHECK(r.action == 0);
  // arithmetic cross-check: the straight candidate's density dominates
  const KfState pred = kf_predict(copy.state(), copy.config());
  const double f_straight = position_density(pred, cands[0]);
  const double f_zigzag = position_density(pred, cands[1]);
  CHECK(f_straight > f_zigzag);
}

TEST_CASE("smoother_step: smoothing never turns more than an oscillating raw "
          "policy") {
  // candidates: ahead, up-left, down-left; pi flips preference between the
  // two turning options every step
  auto run = [](bool smoothed) {
    std::vector<Vec2> waypoints{{0.0, 0.0}};
    WaypointSmoother sm;
    sm.reset(waypoints.front());
    Vec2 pos = waypoints.front();
    for (int t = 0; t < 12; ++t) {
      const std::vector<Vec2> cands = {{pos.x + 2.0, pos.y},
                                       {pos.x + 1.4, pos.y + 1.4},
                                       {pos.x + 1.4, pos.y - 1.4}};
      const std::vector<double> probs =
          (t % 2 == 0) ? std::vector<double>{0.33, 0.34, 0.33}
                       : std::vector<double>{0.33, 0.33, 0.34};
      int action;
      if (smoothed) {
        action = sm.step(make_pi(probs), cands).action;
      } else {
        action = static_cast<int>(std::max_element(probs.begin(), probs.end()) -
                                  probs.begin());
      }
      pos = cands[static_cast<size_t>(action)];
      waypoints.push_back(pos);
    }
    double turn_sum = 0.0;
    for (size_t i = 2; i < waypoints.size(); ++i)
      turn_sum += turn_angle(waypoints[i - 1] - waypoints[i - 2],
                             waypoints[i] - waypoints[i - 1]);
    return turn_sum;
  };
  const double raw = run(false);
  const double smooth = run(true);
  CHECK(smooth <= raw);
  CHECK(raw > 0.5);  // the raw trajectory really does oscillate
}

TEST_CASE("smoother_step: refuses to run before reset") {
  WaypointSmoother sm;
  CHECK_THROWS_AS(sm.step(make_pi({1.0}), std::vector<Vec2>{{1.0, 1.0}}),
                  std::logic_error);
}

TEST_CASE("smoother reset: flat prior state as documented") {
  WaypointSmoother sm;
  sm.reset(Vec2{2.5, -1.0});
  const KfState& s = sm.state();
  CHECK(s.x[0] == 2.5);
  CHECK(s.x[1] == -1.0);
  CHECK(s.x[2] == 0.0);
  CHECK(s.x[3] == 0.0);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      CHECK(s.P[static_cast<size_t>(i * 4 + j)] == (i == j ? 1e6 : 0.0));
}

TEST_CASE("smoother_debug_record: carries the chosen action and densities") {
  WaypointSmoother sm;
  sm.reset(Vec2{0.0, 0.0});
  const std::vector<Vec2> cands = {{1.0, 0.0}, {0.0, 1.0}};
  const auto r = sm.step(make_pi({0.7, 0.3}), cands);
  const std::string line = smoother_debug_record(r, make_pi({0.7, 0.3}));
  CHECK(line.find("chosen 0") != std::string::npos);
  CHECK(line.find("pi 0.7 0.3") != std::string::npos);
}
