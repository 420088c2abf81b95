#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "grate/graph.hpp"
#include "grate/net.hpp"
#include "grate/tensor.hpp"

namespace grate {

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0.0;
};

namespace detail {

inline double rel_err(double analytic, double numeric) {
  const double denom = std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
  return std::fabs(analytic - numeric) / denom;
}

/// Central finite differences on every entry of every parameter in `ps`
/// against the analytic gradient of the scalar `fwd(tr)` computes.
template <class Fwd>
GradCheckResult fd_check(const std::string& name, ParamStore& ps, Fwd&& fwd,
                         double h = 1e-5) {
  ps.zero_grad();
  {
    Trace tr;
    Tensor loss = fwd(&tr);
    tr.backward(loss);
  }
  GradCheckResult res;
  res.name = name;
  for (const std::string& pname : ps.names()) {
    Tensor p = ps.get(pname);
    for (size_t i = 0; i < p.size(); ++i) {
      const double saved = p.values()[i];
      p.values()[i] = saved + h;
      const double fp = fwd(nullptr).values()[0];
      p.values()[i] = saved - h;
      const double fm = fwd(nullptr).values()[0];
      p.values()[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      res.max_rel_err =
          std::max(res.max_rel_err, rel_err(p.grad()[i], numeric));
    }
  }
  return res;
}

/// Fixed-weight scalar reduction so every output entry carries a distinct
/// gradient signal.
inline Tensor wsum(Trace* tr, const Tensor& out) {
  std::vector<double> w(out.size());
  for (size_t i = 0; i < w.size(); ++i)
    w[i] = 0.3 + 0.05 * static_cast<double>(i % 17) -
           0.02 * static_cast<double>(i % 5);
  return sum_all(tr, hadamard(tr, out, make_tensor(out.rows(), out.cols(), w)));
}

inline Tensor rand_param(ParamStore& ps, const std::string& name, int r, int c,
                         std::mt19937_64& rng, double lo = -1.0,
                         double hi = 1.0) {
  Tensor t = ps.create(name, r, c);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& x : t.values()) x = dist(rng);
  return t;
}

}  // namespace detail

/// Randomized 6-node graph with a connected current node; features in the
/// normalized ranges the policy network expects.
inline BeliefGraph make_random_graph6(uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(1.0, 19.0);
  std::uniform_int_distribution<int> util(0, 6);
  std::uniform_int_distribution<int> coin(0, 1);
  BeliefGraph g;
  g.k = 5;
  const int n = 6;
  for (int i = 0; i < n; ++i) {
    NodeFeature nf;
    nf.x = pos(rng);
    nf.y = pos(rng);
    nf.utility = util(rng);
    nf.guidepost = coin(rng);
    g.nodes.push_back(nf);
  }
  g.nbr.assign(n, {});
  auto link = [&](int a, int b) {
    g.nbr[static_cast<size_t>(a)].push_back(b);
    g.nbr[static_cast<size_t>(b)].push_back(a);
  };
  // ring for connectivity plus random chords
  for (int i = 0; i < n; ++i) link(i, (i + 1) % n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 2; j < n; ++j)
      if ((i != 0 || j != n - 1) && coin(rng)) link(i, j);
  for (auto& lst : g.nbr) std::sort(lst.begin(), lst.end());
  g.current_index = static_cast<int>(rng() % n);
  return g;
}

/// Per-op finite-difference suite plus the end-to-end policy check
/// (log-probability of one action w.r.t. every network parameter).
inline std::vector<GradCheckResult> run_gradcheck(uint64_t seed = 7) {
  using detail::fd_check;
  using detail::rand_param;
  using detail::wsum;
  std::mt19937_64 rng(seed);
  std::vector<GradCheckResult> out;

  {
    ParamStore ps;
    Tensor a = rand_param(ps, "a", 3, 4, rng), b = rand_param(ps, "b", 4, 5, rng);
    out.push_back(fd_check("matmul", ps, [&](Trace* tr) {
      return wsum(tr, matmul(tr, a, b));
    }));
  }
  {
    ParamStore ps;
    Tensor a = rand_param(ps, "a", 3, 4, rng);
    out.push_back(fd_check("transpose", ps, [&](Trace* tr) {
      return wsum(tr, transpose(tr, a));
    }));
  }
  {
    ParamStore ps;
    Tensor a = rand_param(ps, "a", 3, 4, rng), b = rand_param(ps, "b", 3, 4, rng);
    out.push_back(fd_check("add", ps, [&](Trace* tr) {
      return wsum(tr, add(tr, a, b));
    }));
    out.push_back(fd_check("sub", ps, [&](Trace* tr) {
      return wsum(tr, sub(tr, a, b));
    }));
    out.push_back(fd_check("hadamard", ps, [&](Trace* tr) {
      return wsum(tr, hadamard(tr, a, b));
    }));
  }
  {
    ParamStore ps;
    Tensor a = rand_param(ps, "a", 3, 4, rng), b = rand_param(ps, "b", 1, 4, rng);
    out.push_back(fd_check("add_rowvec", ps, [&](Trace* tr) {
      return wsum(tr, add_rowvec(tr, a, b));
    }));
  }
  {
    ParamStore ps;
    Tensor a = rand_param(ps, "a", 3, 4, rng);
    Tensor s = rand_param(ps, "s", 1, 1, rng);
    out.push_back(fd_check("scale", ps, [&](Trace* tr) {
      return wsum(tr, scale(tr, a, -1.7));
    }));
    out.push_back(fd_check("mul_scalar", ps, [&](Trace* tr) {
      return wsum(tr, mul_scalar_t(tr, a, s));
    }));
  }
  {
    ParamStore ps;
    // keep magnitudes in [0.1, 1.1] so the relu kink stays > h away
    Tensor a = rand_param(ps, "a", 3, 4, rng, 0.1, 1.1);
    Tensor sgn = detail::new_tensor(3, 4);
    for (size_t i = 0; i < sgn.size(); ++i)
      sgn.values()[i] = (rng() & 1) ? 1.0 : -1.0;
    out.push_back(fd_check("tanh", ps, [&](Trace* tr) {
      return wsum(tr, tanh_t(tr, hadamard(tr, a, sgn)));
    }));
    out.push_back(fd_check("sigmoid", ps, [&](Trace* tr) {
      return wsum(tr, sigmoid_t(tr, hadamard(tr, a, sgn)));
    }));
    out.push_back(fd_check("relu", ps, [&](Trace* tr) {
      return wsum(tr, relu_t(tr, hadamard(tr, a, sgn)));
    }));
    out.push_back(fd_check("exp", ps, [&](Trace* tr) {
      return wsum(tr, exp_t(tr, hadamard(tr, a, sgn)));
    }));
    out.push_back(fd_check("log", ps, [&](Trace* tr) {
      return wsum(tr, log_t(tr, a));  // strictly positive inputs
    }));
  }
  {
    ParamStore ps;
    Tensor a = rand_param(ps, "a", 4, 5, rng);
    out.push_back(fd_check("sum_all", ps, [&](Trace* tr) {
      return sum_all(tr, a);
    }));
    out.push_back(fd_check("mean_all", ps, [&](Trace* tr) {
      return mean_all(tr, a);
    }));
  }
  {
    ParamStore ps;
    Tensor a = rand_param(ps, "a", 3, 5, rng);
    std::vector<uint8_t> mask(15, 1);
    mask[2] = mask[7] = mask[13] = 0;
    out.push_back(fd_check("softmax_rows", ps, [&](Trace* tr) {
      return wsum(tr, softmax_rows(tr, a, mask));
    }));
  }
  {
    ParamStore ps;
    Tensor x = rand_param(ps, "x", 3, 6, rng);
    Tensor gain = rand_param(ps, "gain", 1, 6, rng, 0.5, 1.5);
    Tensor bias = rand_param(ps, "bias", 1, 6, rng, -0.3, 0.3);
    out.push_back(fd_check("layer_norm", ps, [&](Trace* tr) {
      return wsum(tr, layer_norm(tr, x, gain, bias));
    }));
  }
  {
    ParamStore ps;
    Tensor x = rand_param(ps, "x", 5, 4, rng);
    out.push_back(fd_check("select_rows", ps, [&](Trace* tr) {
      return wsum(tr, select_rows(tr, x, {0, 2, 2, 4}));
    }));
    out.push_back(fd_check("slice_cols", ps, [&](Trace* tr) {
      return wsum(tr, slice_cols(tr, x, 1, 3));
    }));
  }
  {
    ParamStore ps;
    Tensor x = rand_param(ps, "x", 4, 6, rng);
    out.push_back(fd_check("select_cols", ps, [&](Trace* tr) {
      return wsum(tr, select_cols(tr, x, {1, 3, 5}));
    }));
  }
  {
    ParamStore ps;
    Tensor a = rand_param(ps, "a", 3, 2, rng), b = rand_param(ps, "b", 3, 3, rng);
    Tensor c = rand_param(ps, "c", 3, 1, rng);
    out.push_back(fd_check("concat_cols", ps, [&](Trace* tr) {
      return wsum(tr, concat_cols(tr, {a, b, c}));
    }));
  }
  {
    ParamStore ps;
    Tensor C = rand_param(ps, "C", 5, 3, rng), D = rand_param(ps, "D", 5, 3, rng);
    Tensor B = rand_param(ps, "B", 5, 3, rng);
    const std::vector<int> off{0, 2, 4, 6, 8, 10};
    const std::vector<int> adj{1, 2, 0, 3, 0, 4, 1, 4, 2, 3};
    out.push_back(fd_check("gated_neighbor_sum", ps, [&](Trace* tr) {
      return wsum(tr, gated_neighbor_sum(tr, C, D, B, off, adj));
    }));
  }

  // End-to-end: d(log pi[a])/d(theta) for every policy parameter on a
  // randomized 6-node graph.
  {
    NetConfig nc;
    nc.d = 16;
    nc.heads = 2;
    nc.L = 3;
    PolicyNet net(nc, seed ^ 0x5eedULL);
    BeliefGraph g = make_random_graph6(seed + 13);
    GraphObs obs = make_obs(g, 20.0, 20.0);
    const int action =
        static_cast<int>(seed % g.neighbors(g.current_index).size());
    out.push_back(fd_check("policy_network", net.params(), [&](Trace* tr) {
      Tensor probs = net.forward_t(tr, obs);
      return log_t(tr, select_cols(tr, probs, {action}));
    }));
  }
  return out;
}

}  // namespace grate
