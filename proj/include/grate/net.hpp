#pragma once

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "grate/graph.hpp"
#include "grate/tensor.hpp"

namespace grate {

struct NetConfig {
  int d = 128;            // embedding width
  int L = 3;              // encoder layers
  int m = 1;              // attention sub-layers per encoder layer
  int n = 2;              // GNN sub-layers per encoder layer
  int heads = 4;          // attention heads
  double alpha_mix = 0.8; // Eq. 1 mixing weight

  void validate() const {
    if (d <= 0 || L <= 0 || m <= 0 || n <= 0 || heads <= 0)
      throw std::invalid_argument("NetConfig: dimensions must be positive");
    if (d % heads != 0)
      throw std::invalid_argument("NetConfig: d must be divisible by heads");
    if (alpha_mix < 0.0 || alpha_mix > 1.0)
      throw std::invalid_argument("NetConfig: alpha_mix must lie in [0,1]");
  }
};

/// Network-facing snapshot of a belief graph: normalized features, CSR
/// neighbor lists, the current node, and its action set (= its neighbors in
/// ascending index order).
struct GraphObs {
  int n = 0;
  std::vector<double> feat;  // n x 4 row-major, normalized to [0,1]
  std::vector<double> pos;   // n x 2 row-major node positions, meters
  std::vector<int> off;      // CSR offsets, n+1 entries
  std::vector<int> adj;      // CSR neighbor indices, sorted per row
  int current = 0;
  std::vector<int> actions;  // neighbors of `current`

  int action_count() const { return static_cast<int>(actions.size()); }
  Vec2 node_pos(int i) const {
    return {pos[static_cast<size_t>(i) * 2], pos[static_cast<size_t>(i) * 2 + 1]};
  }
};

inline GraphObs make_obs(const BeliefGraph& g, double width_m, double height_m) {
  GraphObs o;
  o.n = g.size();
  o.feat = normalize(g, width_m, height_m);
  o.pos.reserve(static_cast<size_t>(o.n) * 2);
  for (const auto& nf : g.nodes) {
    o.pos.push_back(nf.x);
    o.pos.push_back(nf.y);
  }
  o.off.reserve(static_cast<size_t>(o.n) + 1);
  o.off.push_back(0);
  for (int i = 0; i < o.n; ++i) {
    const auto& nb = g.neighbors(i);
    o.adj.insert(o.adj.end(), nb.begin(), nb.end());
    o.off.push_back(static_cast<int>(o.adj.size()));
  }
  o.current = g.current_index;
  o.actions = g.neighbors(g.current_index);
  return o;
}

struct PolicyOutput {
  std::vector<int> actions;    // aligned with graph neighbor order
  std::vector<double> probs;   // strictly positive, sums to 1
};

// ---------------------------------------------------------------------------
// Parameter registration. All encoder parameters live under `prefix` with
// layer-indexed dotted names (e.g. "enc.2.gnn.1.W3").

namespace detail {

inline void build_mlp_ln_params(ParamStore& ps, const std::string& p, int d,
                                std::mt19937_64& rng) {
  const int hidden = 4 * d;
  ps.create_const(p + "ln1.g", 1, d, 1.0);
  ps.create_const(p + "ln1.b", 1, d, 0.0);
  ps.create_xavier(p + "mlp.W1", d, hidden, rng);
  ps.create_const(p + "mlp.b1", 1, hidden, 0.0);
  ps.create_xavier(p + "mlp.W2", hidden, d, rng);
  ps.create_const(p + "mlp.b2", 1, d, 0.0);
  ps.create_const(p + "ln2.g", 1, d, 1.0);
  ps.create_const(p + "ln2.b", 1, d, 0.0);
}

}  // namespace detail

inline void build_encoder_params(ParamStore& ps, const NetConfig& cfg,
                                 const std::string& prefix,
                                 std::mt19937_64& rng) {
  cfg.validate();
  const int d = cfg.d;
  ps.create_xavier(prefix + "embed.W", 4, d, rng);
  ps.create_const(prefix + "embed.b", 1, d, 0.0);
  for (int l = 0; l < cfg.L; ++l) {
    for (int i = 0; i < cfg.m; ++i) {
      const std::string p =
          prefix + "enc." + std::to_string(l) + ".attn." + std::to_string(i) + ".";
      ps.create_xavier(p + "Wq", d, d, rng);
      ps.create_xavier(p + "Wk", d, d, rng);
      ps.create_xavier(p + "Wv", d, d, rng);
      ps.create_xavier(p + "Wo", d, d, rng);
      ps.create_const(p + "bo", 1, d, 0.0);
      detail::build_mlp_ln_params(ps, p, d, rng);
    }
    for (int i = 0; i < cfg.n; ++i) {
      const std::string p =
          prefix + "enc." + std::to_string(l) + ".gnn." + std::to_string(i) + ".";
      ps.create_xavier(p + "W1", d, d, rng);
      ps.create_xavier(p + "W2", d, d, rng);
      ps.create_xavier(p + "W3", d, d, rng);
      ps.create_xavier(p + "W4", d, d, rng);
      detail::build_mlp_ln_params(ps, p, d, rng);
    }
  }
}

// ---------------------------------------------------------------------------
// Forward blocks.

/// Input projection: X = V W + b, shared across nodes.
inline Tensor embed(Trace* tr, const ParamStore& ps, const std::string& prefix,
                    const Tensor& features) {
  if (features.cols() != 4)
    throw std::invalid_argument("embed: features must have 4 columns, got " +
                                std::to_string(features.cols()));
  return add_rowvec(tr, matmul(tr, features, ps.get(prefix + "embed.W")),
                    ps.get(prefix + "embed.b"));
}

/// Eq. 2: all-pair multi-head self-attention (no adjacency mask), heads
/// concatenated and linearly merged. `prefix` points at one attention
/// sub-layer (".../attn.i.").
inline Tensor attention_block(Trace* tr, const ParamStore& ps,
                              const std::string& prefix, const NetConfig& cfg,
                              const Tensor& X) {
  const int d = cfg.d, dh = cfg.d / cfg.heads;
  Tensor Q = matmul(tr, X, ps.get(prefix + "Wq"));
  Tensor K = matmul(tr, X, ps.get(prefix + "Wk"));
  Tensor V = matmul(tr, X, ps.get(prefix + "Wv"));
  std::vector<Tensor> outs;
  outs.reserve(static_cast<size_t>(cfg.heads));
  for (int h = 0; h < cfg.heads; ++h) {
    Tensor Qh = slice_cols(tr, Q, h * dh, (h + 1) * dh);
    Tensor Kh = slice_cols(tr, K, h * dh, (h + 1) * dh);
    Tensor Vh = slice_cols(tr, V, h * dh, (h + 1) * dh);
    Tensor scores =
        scale(tr, matmul(tr, Qh, transpose(tr, Kh)), 1.0 / std::sqrt(dh));
    Tensor W = softmax_rows(tr, scores);
    outs.push_back(matmul(tr, W, Vh));
  }
  Tensor merged = cfg.heads == 1 ? outs[0] : concat_cols(tr, outs);
  (void)d;
  return add_rowvec(tr, matmul(tr, merged, ps.get(prefix + "Wo")),
                    ps.get(prefix + "bo"));
}

/// Eq. 3: h'_i = W1 h_i + sum_{j in N(i)} sigmoid(W3 h_i + W4 h_j) ⊙ W2 h_j.
/// `prefix` points at one GNN sub-layer (".../gnn.i.").
inline Tensor gnn_block(Trace* tr, const ParamStore& ps,
                        const std::string& prefix, const Tensor& X,
                        const std::vector<int>& off,
                        const std::vector<int>& adj) {
  if (static_cast<int>(off.size()) != X.rows() + 1)
    throw std::invalid_argument("gnn_block: adjacency does not match node count");
  Tensor self = matmul(tr, X, ps.get(prefix + "W1"));
  Tensor B = matmul(tr, X, ps.get(prefix + "W2"));
  Tensor C = matmul(tr, X, ps.get(prefix + "W3"));
  Tensor D = matmul(tr, X, ps.get(prefix + "W4"));
  return add(tr, self, gated_neighbor_sum(tr, C, D, B, off, adj));
}

namespace detail {

/// 2-layer feed-forward with residuals and layer norms around both the given
/// block output and the MLP: t = LN1(x + block), out = LN2(t + MLP(t)).
inline Tensor mlp_ln_wrap(Trace* tr, const ParamStore& ps,
                          const std::string& p, const Tensor& x,
                          const Tensor& block_out) {
  Tensor t = layer_norm(tr, add(tr, x, block_out), ps.get(p + "ln1.g"),
                        ps.get(p + "ln1.b"));
  Tensor h = add_rowvec(tr, matmul(tr, t, ps.get(p + "mlp.W1")),
                        ps.get(p + "mlp.b1"));
  Tensor f = add_rowvec(tr, matmul(tr, relu_t(tr, h), ps.get(p + "mlp.W2")),
                        ps.get(p + "mlp.b2"));
  return layer_norm(tr, add(tr, t, f), ps.get(p + "ln2.g"),
                    ps.get(p + "ln2.b"));
}

}  // namespace detail

/// Eq. 1: X' = (1-α)·X_A + α·X_G, where the attention branch applies m
/// MLP(Attn(·)) sub-layers and the GNN branch applies n MLP(GNN(·))
/// sub-layers, both starting from X. `prefix` points at one encoder layer
/// ("enc.l.").
inline Tensor encoder_layer(Trace* tr, const ParamStore& ps,
                            const std::string& prefix, const NetConfig& cfg,
                            const Tensor& X, const std::vector<int>& off,
                            const std::vector<int>& adj) {
  Tensor A = X;
  for (int i = 0; i < cfg.m; ++i) {
    const std::string p = prefix + "attn." + std::to_string(i) + ".";
    A = detail::mlp_ln_wrap(tr, ps, p, A, attention_block(tr, ps, p, cfg, A));
  }
  Tensor G = X;
  for (int i = 0; i < cfg.n; ++i) {
    const std::string p = prefix + "gnn." + std::to_string(i) + ".";
    G = detail::mlp_ln_wrap(tr, ps, p, G, gnn_block(tr, ps, p, G, off, adj));
  }
  return add(tr, scale(tr, A, 1.0 - cfg.alpha_mix),
             scale(tr, G, cfg.alpha_mix));
}

/// Full encoder: embed + L encoder layers.
inline Tensor encode(Trace* tr, const ParamStore& ps, const std::string& prefix,
                     const NetConfig& cfg, const GraphObs& obs) {
  Tensor X = embed(tr, ps, prefix,
                   make_tensor(obs.n, 4, obs.feat));
  for (int l = 0; l < cfg.L; ++l)
    X = encoder_layer(tr, ps, prefix + "enc." + std::to_string(l) + ".", cfg,
                      X, obs.off, obs.adj);
  return X;
}

/// Eq. 4 pointer decoder: query = encoded current node, keys = encoded
/// neighbors, logits = tanh(q kᵀ/√d), softmax over the neighbor set only.
/// Returns the 1 x n probability row aligned with obs.actions.
inline Tensor decode_policy_t(Trace* tr, const Tensor& X, const GraphObs& obs,
                              int d) {
  if (obs.actions.empty())
    throw std::invalid_argument("decode_policy: current node is isolated");
  Tensor q = select_rows(tr, X, {obs.current});
  Tensor K = select_rows(tr, X, obs.actions);
  Tensor logits = tanh_t(
      tr, scale(tr, matmul(tr, q, transpose(tr, K)), 1.0 / std::sqrt(d)));
  return softmax_rows(tr, logits);
}

/// Critic head: per-neighbor affine score on (query ‖ key) pairs.
/// Returns the 1 x n Q row aligned with obs.actions.
inline Tensor critic_q_t(Trace* tr, const ParamStore& ps,
                         const std::string& prefix, const Tensor& X,
                         const GraphObs& obs) {
  if (obs.actions.empty())
    throw std::invalid_argument("critic_q: current node is isolated");
  const int n = obs.action_count();
  Tensor q_rep = select_rows(tr, X, std::vector<int>(static_cast<size_t>(n),
                                                     obs.current));
  Tensor K = select_rows(tr, X, obs.actions);
  Tensor qk = concat_cols(tr, {q_rep, K});
  Tensor col = add_rowvec(tr, matmul(tr, qk, ps.get(prefix + "head.W")),
                          ps.get(prefix + "head.b"));
  return transpose(tr, col);
}

// ---------------------------------------------------------------------------
// Networks. Each owns its ParamStore (separate policy and critic parameter
// sets). Stores are move-only; use snapshot() for collector copies.

class PolicyNet {
 public:
  PolicyNet(const NetConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    build_encoder_params(ps_, cfg_, "", rng);
  }

  const NetConfig& config() const { return cfg_; }
  ParamStore& params() { return ps_; }
  const ParamStore& params() const { return ps_; }

  /// Traced probability row over obs.actions (training path).
  Tensor forward_t(Trace* tr, const GraphObs& obs) const {
    return decode_policy_t(tr, encode(tr, ps_, "", cfg_, obs), obs, cfg_.d);
  }

  /// Trace-free policy evaluation.
  PolicyOutput forward(const GraphObs& obs) const {
    Tensor p = forward_t(nullptr, obs);
    return {obs.actions, p.values()};
  }

  PolicyNet snapshot() const { return PolicyNet(cfg_, ps_.clone()); }

 private:
  PolicyNet(const NetConfig& cfg, ParamStore ps)
      : cfg_(cfg), ps_(std::move(ps)) {}
  NetConfig cfg_;
  ParamStore ps_;
};

class CriticNet {
 public:
  CriticNet(const NetConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    build_encoder_params(ps_, cfg_, "", rng);
    ps_.create_xavier("head.W", 2 * cfg_.d, 1, rng);
    ps_.create_const("head.b", 1, 1, 0.0);
  }

  const NetConfig& config() const { return cfg_; }
  ParamStore& params() { return ps_; }
  const ParamStore& params() const { return ps_; }

  /// Traced per-action Q row (training path).
  Tensor forward_t(Trace* tr, const GraphObs& obs) const {
    return critic_q_t(tr, ps_, "", encode(tr, ps_, "", cfg_, obs), obs);
  }

  /// Trace-free Q values aligned with obs.actions.
  std::vector<double> forward(const GraphObs& obs) const {
    return forward_t(nullptr, obs).values();
  }

  CriticNet snapshot() const { return CriticNet(cfg_, ps_.clone()); }

 private:
  CriticNet(const NetConfig& cfg, ParamStore ps)
      : cfg_(cfg), ps_(std::move(ps)) {}
  NetConfig cfg_;
  ParamStore ps_;
};

/// Convenience: trace-free full policy evaluation from a belief graph.
inline PolicyOutput decode_policy(const PolicyNet& net, const BeliefGraph& g,
                                  double width_m, double height_m) {
  return net.forward(make_obs(g, width_m, height_m));
}

}  // namespace grate
