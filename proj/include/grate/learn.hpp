#pragma once

#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "grate/graph.hpp"
#include "grate/net.hpp"
#include "grate/tensor.hpp"
#include "grate/world.hpp"

namespace grate {

struct Transition {
  std::shared_ptr<const GraphObs> obs;
  int action = 0;  // index into obs->actions
  double reward = 0.0;
  std::shared_ptr<const GraphObs> next;
  bool done = false;  // terminal for bootstrapping (completion or failure)
};

/// Ring buffer of transitions; oldest evicted first. One writer (the
/// trainer's hand-off path), one sampling reader.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("ReplayBuffer: zero capacity");
  }

  void push(Transition t) {
    if (data_.size() < capacity_) {
      data_.push_back(std::move(t));
    } else {
      data_[head_] = std::move(t);
      head_ = (head_ + 1) % capacity_;
    }
  }

  size_t size() const { return data_.size(); }
  size_t capacity() const { return capacity_; }
  const Transition& at(size_t i) const { return data_[i]; }

  /// Uniform sample with replacement.
  std::vector<const Transition*> sample(size_t batch, std::mt19937_64& rng) const {
    if (data_.empty()) throw std::logic_error("ReplayBuffer::sample: empty");
    std::vector<const Transition*> out;
    out.reserve(batch);
    std::uniform_int_distribution<size_t> dist(0, data_.size() - 1);
    for (size_t i = 0; i < batch; ++i) out.push_back(&data_[dist(rng)]);
    return out;
  }

 private:
  size_t capacity_;
  size_t head_ = 0;  // eviction cursor once full
  std::vector<Transition> data_;
};

struct TrainConfig {
  // SAC hyperparameters
  double gamma = 1.0;
  int batch = 128;
  int episode_cap = 128;
  double lr_actor = 5e-5;
  double lr_critic = 5e-5;
  double lr_alpha = 1e-4;
  int target_update = 64;       // hard copy period, training steps
  int iters_per_episode = 8;
  size_t buffer_capacity = 10000;
  size_t min_buffer = 2000;     // training starts strictly above this
  double target_entropy_scale = 0.05;  // H_bar = scale * ln(k)
  double init_alpha = 0.2;
  int collectors = 4;
  int episodes = 2000;
  // Every n-th episode is collected greedily instead of by sampling, so the
  // buffer also covers the argmax behaviour used at deployment. 0 disables.
  int greedy_every = 0;
  // environment
  int map_width = 64;
  int map_height = 64;
  double cell_size = 0.4;
  double sensor_range = 16.0;
  GraphConfig graph{};
  NetConfig net{};
  uint64_t seed = 1;
  int checkpoint_every = 100;

  double target_entropy() const {
    return target_entropy_scale * std::log(static_cast<double>(graph.k));
  }

  void validate() const {
    if (gamma <= 0.0 || gamma > 1.0)
      throw std::invalid_argument("TrainConfig: gamma must lie in (0,1]");
    if (batch <= 0 || episode_cap <= 0 || target_update <= 0 ||
        iters_per_episode <= 0 || collectors <= 0 || episodes <= 0 ||
        buffer_capacity == 0 || lr_actor <= 0 || lr_critic <= 0 ||
        lr_alpha <= 0 || init_alpha <= 0)
      throw std::invalid_argument("TrainConfig: all quantities must be positive");
    if (greedy_every < 0)
      throw std::invalid_argument("TrainConfig: greedy_every must be >= 0");
    net.validate();
  }
};

// ---------------------------------------------------------------------------
// Eq. 7: V(o) = sum_a pi(a) (Q(a) - alpha log pi(a)), exact expectation.

inline double soft_value(const std::vector<double>& q,
                         const std::vector<double>& pi, double alpha) {
  if (q.size() != pi.size())
    throw std::invalid_argument("soft_value: Q and pi are misaligned (" +
                                std::to_string(q.size()) + " vs " +
                                std::to_string(pi.size()) + ")");
  double v = 0.0;
  for (size_t i = 0; i < q.size(); ++i)
    v += pi[i] * (q[i] - alpha * std::log(pi[i]));
  return v;
}

// ---------------------------------------------------------------------------
// Eq. 8: critic loss. Targets are computed trace-free from the target critic
// and the current policy; the bootstrap term is dropped on terminal
// transitions.

inline Tensor critic_loss_t(Trace* tr,
                            const std::vector<const Transition*>& batch,
                            const PolicyNet& policy, const CriticNet& critic,
                            const CriticNet& target, double alpha,
                            double gamma) {
  if (batch.empty()) throw std::invalid_argument("critic_loss: empty batch");
  std::vector<Tensor> terms;
  terms.reserve(batch.size());
  for (const Transition* t : batch) {
    double y = t->reward;
    if (!t->done) {
      PolicyOutput pi = policy.forward(*t->next);
      std::vector<double> qn = target.forward(*t->next);
      y += gamma * soft_value(qn, pi.probs, alpha);
    }
    Tensor q_row = critic.forward_t(tr, *t->obs);
    Tensor q_sa = select_cols(tr, q_row, {t->action});
    Tensor d = sub(tr, q_sa, make_scalar(y));
    terms.push_back(scale(tr, hadamard(tr, d, d), 0.5));
  }
  return mean_all(tr, concat_cols(tr, terms));
}

// ---------------------------------------------------------------------------
// Eq. 9: policy loss, exact expectation per observation. The critic is
// evaluated trace-free, so its parameters never receive gradient. When
// neg_entropy_out is given it receives per-sample sum_a pi(a) log pi(a)
// (reused by the temperature loss).

inline Tensor policy_loss_t(Trace* tr,
                            const std::vector<const Transition*>& batch,
                            const PolicyNet& policy, const CriticNet& critic,
                            double alpha,
                            std::vector<double>* neg_entropy_out = nullptr) {
  if (batch.empty()) throw std::invalid_argument("policy_loss: empty batch");
  if (neg_entropy_out) neg_entropy_out->clear();
  std::vector<Tensor> terms;
  terms.reserve(batch.size());
  for (const Transition* t : batch) {
    Tensor pi_row = policy.forward_t(tr, *t->obs);
    Tensor log_pi = log_t(tr, pi_row);
    Tensor q = make_tensor(1, t->obs->action_count(), critic.forward(*t->obs));
    Tensor inner = sub(tr, scale(tr, log_pi, alpha), q);
    terms.push_back(sum_all(tr, hadamard(tr, pi_row, inner)));
    if (neg_entropy_out) {
      double ne = 0.0;
      for (size_t i = 0; i < pi_row.size(); ++i)
        ne += pi_row.values()[i] * log_pi.values()[i];
      neg_entropy_out->push_back(ne);
    }
  }
  return mean_all(tr, concat_cols(tr, terms));
}

// ---------------------------------------------------------------------------
// Eq. 10: temperature loss -alpha * E[log pi + H_bar], with the policy term
// detached. neg_entropy carries per-sample sum_a pi(a) log pi(a).

inline Tensor temperature_loss_from_entropy(Trace* tr,
                                            const std::vector<double>& neg_entropy,
                                            const Tensor& log_alpha,
                                            double target_entropy) {
  if (neg_entropy.empty())
    throw std::invalid_argument("temperature_loss: empty batch");
  double mean_e = 0.0;
  for (double ne : neg_entropy) mean_e += ne + target_entropy;
  mean_e /= static_cast<double>(neg_entropy.size());
  Tensor alpha_t = exp_t(tr, log_alpha);
  return scale(tr, alpha_t, -mean_e);
}

inline Tensor temperature_loss_t(Trace* tr,
                                 const std::vector<const Transition*>& batch,
                                 const PolicyNet& policy,
                                 const Tensor& log_alpha,
                                 double target_entropy) {
  if (batch.empty()) throw std::invalid_argument("temperature_loss: empty batch");
  std::vector<double> neg_entropy;
  neg_entropy.reserve(batch.size());
  for (const Transition* t : batch) {
    PolicyOutput pi = policy.forward(*t->obs);
    double ne = 0.0;
    for (double p : pi.probs) ne += p * std::log(p);
    neg_entropy.push_back(ne);
  }
  return temperature_loss_from_entropy(tr, neg_entropy, log_alpha,
                                       target_entropy);
}

// ---------------------------------------------------------------------------
// Episode collection.

enum class SampleMode { sample, greedy };

struct CollectResult {
  std::vector<Transition> transitions;
  EpisodeOutcome outcome;
  // per-step trace rows: step, x, y, reward, new_frontiers, traveled
  std::vector<std::string> trace;
};

namespace detail {

inline int sample_action(const std::vector<double>& probs, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double r = u(rng);
  double acc = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (r < acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size()) - 1;
}

inline int greedy_action(const std::vector<double>& probs) {
  int best = 0;
  for (size_t i = 1; i < probs.size(); ++i)
    if (probs[i] > probs[static_cast<size_t>(best)]) best = static_cast<int>(i);
  return best;
}

}  // namespace detail

/// Rolls one episode from `start` on `map`. In sample mode actions are drawn
/// from pi with a generator seeded by `seed`; greedy mode takes the argmax
/// (ties toward the lowest index). An isolated robot node marks the episode
/// failed; transitions up to that point are kept.
inline CollectResult collect_episode(const GroundTruthMap& map, Vec2 start,
                                     const PolicyNet& policy,
                                     const TrainConfig& cfg, uint64_t seed,
                                     SampleMode mode, bool keep_trace = false) {
  CollectResult res;
  Environment env(map, start, cfg.sensor_range, cfg.episode_cap);
  std::mt19937_64 rng(detail::mix_seed(seed, 0xac7ull));
  const double wm = map.width_m(), hm = map.height_m();
  GraphConfig gc = cfg.graph;
  gc.sensor_range = cfg.sensor_range;  // utility observability = sensor reach

  auto snapshot = [&]() {
    BeliefGraph g = extract_graph(env.belief(), env.robot().visited,
                                  env.robot().position, gc);
    return std::make_shared<const GraphObs>(make_obs(g, wm, hm));
  };

  std::shared_ptr<const GraphObs> obs = snapshot();
  while (!env.done()) {
    if (obs->actions.empty()) {
      res.outcome.failed = true;
      break;
    }
    PolicyOutput pi = policy.forward(*obs);
    const int a = mode == SampleMode::sample
                      ? detail::sample_action(pi.probs, rng)
                      : detail::greedy_action(pi.probs);
    const int node = obs->actions[static_cast<size_t>(a)];
    Vec2 tgt{obs->pos[static_cast<size_t>(node) * 2],
             obs->pos[static_cast<size_t>(node) * 2 + 1]};
    StepResult sr = env.step(tgt);
    std::shared_ptr<const GraphObs> next = snapshot();
    const bool next_isolated = next->actions.empty();
    if (next_isolated && !sr.completed && !sr.done) res.outcome.failed = true;
    res.transitions.push_back(
        {obs, a, sr.reward, next, sr.completed || next_isolated});
    res.outcome.rewards.push_back(sr.reward);
    if (keep_trace) {
      std::ostringstream os;
      os << env.steps() << ' ' << tgt.x << ' ' << tgt.y << ' ' << sr.reward
         << ' ' << sr.new_frontiers << ' ' << env.robot().traveled;
      res.trace.push_back(os.str());
    }
    obs = next;
    if (res.outcome.failed) break;
  }
  res.outcome.traveled = env.robot().traveled;
  res.outcome.completed = env.completed();
  res.outcome.steps = env.steps();
  return res;
}

/// Deterministic per-episode training environment.
inline GroundTruthMap make_training_map(const TrainConfig& cfg,
                                        uint64_t episode) {
  DungeonParams p;
  p.width = cfg.map_width;
  p.height = cfg.map_height;
  p.cell_size = cfg.cell_size;
  return generate_dungeon(detail::mix_seed(cfg.seed, episode), p);
}

// ---------------------------------------------------------------------------
// Trainer.

struct TrainState {
  PolicyNet policy;
  CriticNet critic;
  CriticNet target;
  ParamStore alpha_store;
  Tensor log_alpha;
  int64_t episode = 0;
  int64_t train_steps = 0;
  int64_t env_steps = 0;

  TrainState(const TrainConfig& cfg)
      : policy(cfg.net, detail::mix_seed(cfg.seed, 0x90ull)),
        critic(cfg.net, detail::mix_seed(cfg.seed, 0x91ull)),
        target(cfg.net, detail::mix_seed(cfg.seed, 0x91ull)) {
    target.params().copy_values_from(critic.params());
    log_alpha = alpha_store.create_const("log_alpha", 1, 1, std::log(cfg.init_alpha));
  }

  double alpha() const { return std::exp(log_alpha.values()[0]); }
};

// Run-bundle checkpoint: magic, counters, then the four parameter stores in
// ParamStore format, in fixed order (policy, critic, target, alpha).
namespace detail {

inline constexpr char kRunMagic[9] = "GRTRUN01";

inline void save_run_checkpoint(const TrainState& st, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_run_checkpoint: cannot open " + path);
  f.write(kRunMagic, 8);
  auto w64 = [&](uint64_t x) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(x >> (8 * i));
    f.write(reinterpret_cast<const char*>(b), 8);
  };
  w64(static_cast<uint64_t>(st.episode));
  w64(static_cast<uint64_t>(st.train_steps));
  w64(static_cast<uint64_t>(st.env_steps));
  const NetConfig& nc = st.policy.config();
  w64(static_cast<uint64_t>(nc.d));
  w64(static_cast<uint64_t>(nc.L));
  w64(static_cast<uint64_t>(nc.m));
  w64(static_cast<uint64_t>(nc.n));
  w64(static_cast<uint64_t>(nc.heads));
  w64(std::bit_cast<uint64_t>(nc.alpha_mix));
  st.policy.params().save(f);
  st.critic.params().save(f);
  st.target.params().save(f);
  st.alpha_store.save(f);
  if (!f) throw std::runtime_error("save_run_checkpoint: write failed");
}

inline void load_run_checkpoint(TrainState& st, const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_run_checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kRunMagic, 8) != 0)
    throw std::runtime_error("load_run_checkpoint: bad magic header in " + path);
  auto r64 = [&]() {
    unsigned char b[8];
    f.read(reinterpret_cast<char*>(b), 8);
    uint64_t x = 0;
    for (int i = 0; i < 8; ++i) x |= static_cast<uint64_t>(b[i]) << (8 * i);
    return x;
  };
  st.episode = static_cast<int64_t>(r64());
  st.train_steps = static_cast<int64_t>(r64());
  st.env_steps = static_cast<int64_t>(r64());
  NetConfig nc;
  nc.d = static_cast<int>(r64());
  nc.L = static_cast<int>(r64());
  nc.m = static_cast<int>(r64());
  nc.n = static_cast<int>(r64());
  nc.heads = static_cast<int>(r64());
  nc.alpha_mix = std::bit_cast<double>(r64());
  const NetConfig& want = st.policy.config();
  if (nc.d != want.d || nc.L != want.L || nc.m != want.m || nc.n != want.n ||
      nc.heads != want.heads)
    throw std::runtime_error(
        "load_run_checkpoint: network shape in " + path +
        " does not match the configured network");
  st.policy.params().load(f);
  st.critic.params().load(f);
  st.target.params().load(f);
  st.alpha_store.load(f);
}

}  // namespace detail

/// Rebuilds just the policy network from a run-bundle checkpoint; the
/// network shape is read from the bundle header.
inline PolicyNet load_policy_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_policy_checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, detail::kRunMagic, 8) != 0)
    throw std::runtime_error("load_policy_checkpoint: bad magic header in " +
                             path);
  auto r64 = [&]() {
    unsigned char b[8];
    f.read(reinterpret_cast<char*>(b), 8);
    uint64_t x = 0;
    for (int i = 0; i < 8; ++i) x |= static_cast<uint64_t>(b[i]) << (8 * i);
    return x;
  };
  r64();  // episode
  r64();  // train_steps
  r64();  // env_steps
  NetConfig nc;
  nc.d = static_cast<int>(r64());
  nc.L = static_cast<int>(r64());
  nc.m = static_cast<int>(r64());
  nc.n = static_cast<int>(r64());
  nc.heads = static_cast<int>(r64());
  nc.alpha_mix = std::bit_cast<double>(r64());
  PolicyNet net(nc, 0);
  net.params().load(f);
  if (!f)
    throw std::runtime_error("load_policy_checkpoint: truncated file " + path);
  return net;
}

struct EpisodeMetrics {
  int64_t episode = 0;
  double reward = 0.0;
  double distance = 0.0;
  int steps = 0;
  bool completed = false;
  bool failed = false;
  double critic_loss = std::nan("");
  double policy_loss = std::nan("");
  double alpha_loss = std::nan("");
  double alpha = 0.0;
  double entropy = std::nan("");  // measured mean policy entropy, last batch
  size_t buffer_size = 0;
};

inline constexpr const char* kMetricsHeader =
    "episode,reward,distance,steps,completed,failed,critic_loss,policy_loss,"
    "alpha_loss,alpha,entropy,buffer_size";

inline std::string metrics_row(const EpisodeMetrics& m) {
  std::ostringstream os;
  os << m.episode << ',' << m.reward << ',' << m.distance << ',' << m.steps
     << ',' << (m.completed ? 1 : 0) << ',' << (m.failed ? 1 : 0) << ','
     << m.critic_loss << ',' << m.policy_loss << ',' << m.alpha_loss << ','
     << m.alpha << ',' << m.entropy << ',' << m.buffer_size;
  return os.str();
}

/// Runs the full SAC training loop into `run_dir`:
///   - collectors (round-robin over episodes) gather episodes in parallel
///     from read-only policy snapshots refreshed per round;
///   - after each collected episode, `iters_per_episode` gradient iterations
///     (critic, policy, temperature) on sampled batches once the buffer
///     holds more than `min_buffer` transitions;
///   - hard target copy every `target_update` training steps;
///   - metrics row per episode, checkpoints named by episode.
/// `map_factory` supplies the per-episode environment (defaults to the
/// dungeon generator); `on_episode` observes metrics (may be empty).
inline TrainState train(
    const TrainConfig& cfg, const std::string& run_dir, bool resume = false,
    std::function<GroundTruthMap(const TrainConfig&, uint64_t)> map_factory = {},
    std::function<void(const EpisodeMetrics&)> on_episode = {}) {
  cfg.validate();
  if (!map_factory) map_factory = make_training_map;
  namespace fs = std::filesystem;
  fs::create_directories(run_dir);

  TrainState st(cfg);
  if (resume) {
    // pick the highest-numbered checkpoint
    std::string best;
    int64_t best_ep = -1;
    for (const auto& e : fs::directory_iterator(run_dir)) {
      const std::string name = e.path().filename().string();
      if (name.rfind("ckpt_ep", 0) == 0 && name.size() > 11 &&
          name.substr(name.size() - 4) == ".bin") {
        const int64_t ep = std::stoll(name.substr(7, name.size() - 11));
        if (ep > best_ep) {
          best_ep = ep;
          best = e.path().string();
        }
      }
    }
    if (best.empty())
      throw std::runtime_error("train: --resume but no checkpoint in " + run_dir);
    detail::load_run_checkpoint(st, best);
  }

  // config snapshot
  {
    std::ofstream cf(run_dir + "/config.txt");
    cf << "gamma=" << cfg.gamma << "\nbatch=" << cfg.batch
       << "\nepisode_cap=" << cfg.episode_cap << "\nlr_actor=" << cfg.lr_actor
       << "\nlr_critic=" << cfg.lr_critic << "\nlr_alpha=" << cfg.lr_alpha
       << "\ntarget_update=" << cfg.target_update
       << "\niters_per_episode=" << cfg.iters_per_episode
       << "\nbuffer_capacity=" << cfg.buffer_capacity
       << "\nmin_buffer=" << cfg.min_buffer
       << "\ntarget_entropy_scale=" << cfg.target_entropy_scale
       << "\ninit_alpha=" << cfg.init_alpha << "\ncollectors=" << cfg.collectors
       << "\nepisodes=" << cfg.episodes << "\ngreedy_every=" << cfg.greedy_every
       << "\nmap_width=" << cfg.map_width
       << "\nmap_height=" << cfg.map_height << "\ncell_size=" << cfg.cell_size
       << "\nsensor_range=" << cfg.sensor_range
       << "\nnode_resolution=" << cfg.graph.node_resolution
       << "\nk=" << cfg.graph.k << "\nd=" << cfg.net.d << "\nL=" << cfg.net.L
       << "\nm=" << cfg.net.m << "\nn=" << cfg.net.n
       << "\nheads=" << cfg.net.heads << "\nalpha_mix=" << cfg.net.alpha_mix
       << "\nseed=" << cfg.seed << "\ncheckpoint_every=" << cfg.checkpoint_every
       << "\n";
  }

  std::ofstream metrics;
  if (resume && fs::exists(run_dir + "/metrics.csv")) {
    metrics.open(run_dir + "/metrics.csv", std::ios::app);
  } else {
    metrics.open(run_dir + "/metrics.csv");
    metrics << kMetricsHeader << "\n";
  }

  ReplayBuffer buffer(cfg.buffer_capacity);
  std::mt19937_64 sample_rng(detail::mix_seed(cfg.seed, 0x5a17ull + static_cast<uint64_t>(st.episode)));

  while (st.episode < cfg.episodes) {
    const int round =
        static_cast<int>(std::min<int64_t>(cfg.collectors, cfg.episodes - st.episode));
    // parallel collection round: one snapshot per collector, joined in order
    std::vector<CollectResult> results(static_cast<size_t>(round));
    {
      std::vector<std::thread> threads;
      threads.reserve(static_cast<size_t>(round));
      for (int c = 0; c < round; ++c) {
        const uint64_t ep = static_cast<uint64_t>(st.episode) + static_cast<uint64_t>(c);
        threads.emplace_back([&, c, ep]() {
          PolicyNet snap = st.policy.snapshot();
          GroundTruthMap map = map_factory(cfg, ep);
          Vec2 start = map.center(pick_start_cell(map, detail::mix_seed(cfg.seed, ep)));
          const SampleMode mode =
              (cfg.greedy_every > 0 &&
               ep % static_cast<uint64_t>(cfg.greedy_every) ==
                   static_cast<uint64_t>(cfg.greedy_every) - 1)
                  ? SampleMode::greedy
                  : SampleMode::sample;
          results[static_cast<size_t>(c)] = collect_episode(
              map, start, snap, cfg, detail::mix_seed(cfg.seed, ep ^ 0xe115ull),
              mode);
        });
      }
      for (auto& t : threads) t.join();
    }

    for (int c = 0; c < round; ++c) {
      CollectResult& r = results[static_cast<size_t>(c)];
      EpisodeMetrics m;
      m.episode = st.episode + 1;
      for (double x : r.outcome.rewards) m.reward += x;
      m.distance = r.outcome.traveled;
      m.steps = r.outcome.steps;
      m.completed = r.outcome.completed;
      m.failed = r.outcome.failed;
      for (Transition& t : r.transitions) buffer.push(std::move(t));
      st.env_steps += static_cast<int64_t>(r.outcome.steps);

      if (buffer.size() > cfg.min_buffer) {
        double cl = 0, pl = 0, al = 0, ent = 0;
        for (int it = 0; it < cfg.iters_per_episode; ++it) {
          const double alpha = st.alpha();
          auto batch = buffer.sample(static_cast<size_t>(cfg.batch), sample_rng);

          // One sample's tape at a time: the batch-mean gradient accumulates
          // across per-sample backward passes (adam_step clears grads), while
          // peak memory stays at a single forward's intermediates instead of
          // the whole batch's.
          const double inv_b = 1.0 / static_cast<double>(batch.size());
          double closs_v = 0.0;
          for (const Transition* t : batch) {
            Trace tc;
            std::vector<const Transition*> one{t};
            Tensor l = critic_loss_t(&tc, one, st.policy, st.critic, st.target,
                                     alpha, cfg.gamma);
            tc.backward(scale(&tc, l, inv_b));
            closs_v += l.scalar() * inv_b;
          }
          st.critic.params().adam_step(cfg.lr_critic);

          std::vector<double> neg_entropy;
          neg_entropy.reserve(batch.size());
          double ploss_v = 0.0;
          for (const Transition* t : batch) {
            Trace tp;
            std::vector<const Transition*> one{t};
            std::vector<double> ne1;
            Tensor l = policy_loss_t(&tp, one, st.policy, st.critic, alpha, &ne1);
            tp.backward(scale(&tp, l, inv_b));
            ploss_v += l.scalar() * inv_b;
            neg_entropy.push_back(ne1.front());
          }
          st.policy.params().adam_step(cfg.lr_actor);

          Trace ta;
          Tensor aloss = temperature_loss_from_entropy(
              &ta, neg_entropy, st.log_alpha, cfg.target_entropy());
          ta.backward(aloss);
          st.alpha_store.adam_step(cfg.lr_alpha);

          st.train_steps += 1;
          if (st.train_steps % cfg.target_update == 0)
            st.target.params().copy_values_from(st.critic.params());

          cl = closs_v;
          pl = ploss_v;
          al = aloss.scalar();
          ent = 0;
          for (double ne : neg_entropy) ent -= ne;
          ent /= static_cast<double>(neg_entropy.size());
        }
        m.critic_loss = cl;
        m.policy_loss = pl;
        m.alpha_loss = al;
        m.entropy = ent;
      }
      m.alpha = st.alpha();
      m.buffer_size = buffer.size();
      st.episode += 1;
      metrics << metrics_row(m) << "\n";
      metrics.flush();
      if (on_episode) on_episode(m);

      if (cfg.checkpoint_every > 0 &&
          (st.episode % cfg.checkpoint_every == 0 || st.episode == cfg.episodes)) {
        detail::save_run_checkpoint(
            st, run_dir + "/ckpt_ep" + std::to_string(st.episode) + ".bin");
      }
    }
  }
  return st;
}

}  // namespace grate
