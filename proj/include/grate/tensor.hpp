#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace grate {

// ---------------------------------------------------------------------------
// Tensor: 2-D (rows x cols) float64 array with an optional gradient buffer.
// Scalars are 1x1. Gradient buffers exist only for leaves created as
// parameters and for values produced under an active Trace.

struct TensorImpl {
  int r = 0, c = 0;
  std::vector<double> v;
  std::vector<double> g;
  std::function<void()> back;  // set when recorded in a trace
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> p) : p_(std::move(p)) {}

  bool defined() const { return static_cast<bool>(p_); }
  int rows() const { return p_->r; }
  int cols() const { return p_->c; }
  size_t size() const { return p_->v.size(); }
  const std::vector<double>& values() const { return p_->v; }
  std::vector<double>& values() { return p_->v; }
  const std::vector<double>& grad() const { return p_->g; }
  std::vector<double>& grad() { return p_->g; }
  double at(int i, int j) const { return p_->v[static_cast<size_t>(i) * p_->c + j]; }
  double scalar() const {
    if (p_->r != 1 || p_->c != 1)
      throw std::logic_error("Tensor::scalar: tensor is not 1x1");
    return p_->v[0];
  }
  std::shared_ptr<TensorImpl> impl() const { return p_; }

 private:
  std::shared_ptr<TensorImpl> p_;
};

namespace detail {

inline std::string shape_str(const Tensor& t) {
  return "[" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + "]";
}

inline Tensor new_tensor(int r, int c) {
  auto p = std::make_shared<TensorImpl>();
  p->r = r;
  p->c = c;
  p->v.assign(static_cast<size_t>(r) * c, 0.0);
  return Tensor(p);
}

inline void ensure_grad(const std::shared_ptr<TensorImpl>& p) {
  if (p->g.size() != p->v.size()) p->g.assign(p->v.size(), 0.0);
}

}  // namespace detail

inline Tensor make_tensor(int r, int c, std::vector<double> v) {
  if (v.size() != static_cast<size_t>(r) * c)
    throw std::invalid_argument("make_tensor: value count does not match shape");
  auto p = std::make_shared<TensorImpl>();
  p->r = r;
  p->c = c;
  p->v = std::move(v);
  return Tensor(p);
}

inline Tensor make_scalar(double x) { return make_tensor(1, 1, {x}); }
inline Tensor zeros(int r, int c) { return detail::new_tensor(r, c); }

/// Leaf copy of the values; gradients never flow through it.
inline Tensor detach(const Tensor& a) {
  return make_tensor(a.rows(), a.cols(), a.values());
}

/// Per-forward-pass computation record. Single use: run one forward pass,
/// call backward once, then discard. Confined to one thread.
class Trace {
 public:
  Trace() = default;
  Trace(const Trace&) = delete;
  Trace& operator=(const Trace&) = delete;

  /// Each recorded node stores a backward closure that captures shared
  /// ownership of the node itself (alongside its parents), so node and
  /// closure form a reference cycle. Dropping the closures here breaks every
  /// cycle in one sweep; without it, each traced op would leak.
  ~Trace() {
    for (auto& n : nodes_) n->back = nullptr;
  }

  /// Internal: ops register their outputs here in creation order.
  void push(std::shared_ptr<TensorImpl> node) { nodes_.push_back(std::move(node)); }
  size_t size() const { return nodes_.size(); }

  /// Reverse sweep; gradients accumulate (+=) at shared nodes.
  void backward(const Tensor& loss) {
    if (loss.rows() != 1 || loss.cols() != 1)
      throw std::invalid_argument("backward: loss must be a 1x1 scalar, got " +
                                  detail::shape_str(loss));
    auto li = loss.impl();
    if (li->g.size() != 1)
      throw std::invalid_argument(
          "backward: loss was not produced under an active trace");
    li->g[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
      if ((*it)->back) (*it)->back();
  }

 private:
  std::vector<std::shared_ptr<TensorImpl>> nodes_;
};

namespace detail {

/// Attach a backward closure and register the output when tracing.
inline void record(Trace* tr, Tensor& out,
                   std::initializer_list<Tensor> parents,
                   std::function<void()> back) {
  if (!tr) return;
  for (const Tensor& p : parents) ensure_grad(p.impl());
  ensure_grad(out.impl());
  out.impl()->back = std::move(back);
  tr->push(out.impl());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ops. Every op takes the trace first; pass nullptr for trace-free inference.

inline Tensor matmul(Trace* tr, const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: inner dimensions disagree: " +
                                detail::shape_str(a) + " x " +
                                detail::shape_str(b));
  const int m = a.rows(), kk = a.cols(), n = b.cols();
  Tensor out = detail::new_tensor(m, n);
  {
    const double* A = a.values().data();
    const double* B = b.values().data();
    double* C = out.values().data();
    for (int i = 0; i < m; ++i)
      for (int l = 0; l < kk; ++l) {
        const double av = A[static_cast<size_t>(i) * kk + l];
        const double* brow = B + static_cast<size_t>(l) * n;
        double* crow = C + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
  }
  detail::record(tr, out, {a, b}, [pa = a.impl(), pb = b.impl(), po = out.impl(), m, kk, n]() {
    const double* G = po->g.data();
    const double* A = pa->v.data();
    const double* B = pb->v.data();
    double* gA = pa->g.data();
    double* gB = pb->g.data();
    for (int i = 0; i < m; ++i)
      for (int l = 0; l < kk; ++l) {
        double s = 0.0;
        const double* grow = G + static_cast<size_t>(i) * n;
        const double* brow = B + static_cast<size_t>(l) * n;
        for (int j = 0; j < n; ++j) s += grow[j] * brow[j];
        gA[static_cast<size_t>(i) * kk + l] += s;
      }
    for (int i = 0; i < m; ++i)
      for (int l = 0; l < kk; ++l) {
        const double av = A[static_cast<size_t>(i) * kk + l];
        const double* grow = G + static_cast<size_t>(i) * n;
        double* brow = gB + static_cast<size_t>(l) * n;
        for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
      }
  });
  return out;
}

inline Tensor transpose(Trace* tr, const Tensor& a) {
  const int m = a.rows(), n = a.cols();
  Tensor out = detail::new_tensor(n, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.values()[static_cast<size_t>(j) * m + i] = a.at(i, j);
  detail::record(tr, out, {a}, [pa = a.impl(), po = out.impl(), m, n]() {
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        pa->g[static_cast<size_t>(i) * n + j] += po->g[static_cast<size_t>(j) * m + i];
  });
  return out;
}

namespace detail {

inline void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch: " +
                                shape_str(a) + " vs " + shape_str(b));
}

}  // namespace detail

inline Tensor add(Trace* tr, const Tensor& a, const Tensor& b) {
  detail::check_same_shape("add", a, b);
  Tensor out = detail::new_tensor(a.rows(), a.cols());
  for (size_t i = 0; i < a.size(); ++i)
    out.values()[i] = a.values()[i] + b.values()[i];
  detail::record(tr, out, {a, b}, [pa = a.impl(), pb = b.impl(), po = out.impl()]() {
    for (size_t i = 0; i < po->g.size(); ++i) {
      pa->g[i] += po->g[i];
      pb->g[i] += po->g[i];
    }
  });
  return out;
}

inline Tensor sub(Trace* tr, const Tensor& a, const Tensor& b) {
  detail::check_same_shape("sub", a, b);
  Tensor out = detail::new_tensor(a.rows(), a.cols());
  for (size_t i = 0; i < a.size(); ++i)
    out.values()[i] = a.values()[i] - b.values()[i];
  detail::record(tr, out, {a, b}, [pa = a.impl(), pb = b.impl(), po = out.impl()]() {
    for (size_t i = 0; i < po->g.size(); ++i) {
      pa->g[i] += po->g[i];
      pb->g[i] -= po->g[i];
    }
  });
  return out;
}

/// a (m x n) + row vector b (1 x n) added to every row.
inline Tensor add_rowvec(Trace* tr, const Tensor& a, const Tensor& b) {
  if (b.rows() != 1 || b.cols() != a.cols())
    throw std::invalid_argument("add_rowvec: want [1x" + std::to_string(a.cols()) +
                                "], got " + detail::shape_str(b));
  const int m = a.rows(), n = a.cols();
  Tensor out = detail::new_tensor(m, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.values()[static_cast<size_t>(i) * n + j] = a.at(i, j) + b.values()[static_cast<size_t>(j)];
  detail::record(tr, out, {a, b}, [pa = a.impl(), pb = b.impl(), po = out.impl(), m, n]() {
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        const double gv = po->g[static_cast<size_t>(i) * n + j];
        pa->g[static_cast<size_t>(i) * n + j] += gv;
        pb->g[static_cast<size_t>(j)] += gv;
      }
  });
  return out;
}

inline Tensor hadamard(Trace* tr, const Tensor& a, const Tensor& b) {
  detail::check_same_shape("hadamard", a, b);
  Tensor out = detail::new_tensor(a.rows(), a.cols());
  for (size_t i = 0; i < a.size(); ++i)
    out.values()[i] = a.values()[i] * b.values()[i];
  detail::record(tr, out, {a, b}, [pa = a.impl(), pb = b.impl(), po = out.impl()]() {
    for (size_t i = 0; i < po->g.size(); ++i) {
      pa->g[i] += po->g[i] * pb->v[i];
      pb->g[i] += po->g[i] * pa->v[i];
    }
  });
  return out;
}

inline Tensor scale(Trace* tr, const Tensor& a, double s) {
  Tensor out = detail::new_tensor(a.rows(), a.cols());
  for (size_t i = 0; i < a.size(); ++i) out.values()[i] = s * a.values()[i];
  detail::record(tr, out, {a}, [pa = a.impl(), po = out.impl(), s]() {
    for (size_t i = 0; i < po->g.size(); ++i) pa->g[i] += s * po->g[i];
  });
  return out;
}

/// Broadcast multiply by a 1x1 tensor (gradient flows to both operands).
inline Tensor mul_scalar_t(Trace* tr, const Tensor& a, const Tensor& s) {
  if (s.rows() != 1 || s.cols() != 1)
    throw std::invalid_argument("mul_scalar_t: scalar operand must be 1x1, got " +
                                detail::shape_str(s));
  const double sv = s.values()[0];
  Tensor out = detail::new_tensor(a.rows(), a.cols());
  for (size_t i = 0; i < a.size(); ++i) out.values()[i] = sv * a.values()[i];
  detail::record(tr, out, {a, s}, [pa = a.impl(), ps = s.impl(), po = out.impl()]() {
    const double svv = ps->v[0];
    double acc = 0.0;
    for (size_t i = 0; i < po->g.size(); ++i) {
      pa->g[i] += svv * po->g[i];
      acc += po->g[i] * pa->v[i];
    }
    ps->g[0] += acc;
  });
  return out;
}

inline Tensor tanh_t(Trace* tr, const Tensor& a) {
  Tensor out = detail::new_tensor(a.rows(), a.cols());
  for (size_t i = 0; i < a.size(); ++i) out.values()[i] = std::tanh(a.values()[i]);
  detail::record(tr, out, {a}, [pa = a.impl(), po = out.impl()]() {
    for (size_t i = 0; i < po->g.size(); ++i)
      pa->g[i] += po->g[i] * (1.0 - po->v[i] * po->v[i]);
  });
  return out;
}

inline Tensor sigmoid_t(Trace* tr, const Tensor& a) {
  Tensor out = detail::new_tensor(a.rows(), a.cols());
  for (size_t i = 0; i < a.size(); ++i)
    out.values()[i] = 1.0 / (1.0 + std::exp(-a.values()[i]));
  detail::record(tr, out, {a}, [pa = a.impl(), po = out.impl()]() {
    for (size_t i = 0; i < po->g.size(); ++i)
      pa->g[i] += po->g[i] * po->v[i] * (1.0 - po->v[i]);
  });
  return out;
}

inline Tensor relu_t(Trace* tr, const Tensor& a) {
  Tensor out = detail::new_tensor(a.rows(), a.cols());
  for (size_t i = 0; i < a.size(); ++i)
    out.values()[i] = a.values()[i] > 0.0 ? a.values()[i] : 0.0;
  detail::record(tr, out, {a}, [pa = a.impl(), po = out.impl()]() {
    for (size_t i = 0; i < po->g.size(); ++i)
      if (pa->v[i] > 0.0) pa->g[i] += po->g[i];
  });
  return out;
}

inline Tensor exp_t(Trace* tr, const Tensor& a) {
  Tensor out = detail::new_tensor(a.rows(), a.cols());
  for (size_t i = 0; i < a.size(); ++i) out.values()[i] = std::exp(a.values()[i]);
  detail::record(tr, out, {a}, [pa = a.impl(), po = out.impl()]() {
    for (size_t i = 0; i < po->g.size(); ++i) pa->g[i] += po->g[i] * po->v[i];
  });
  return out;
}

inline Tensor log_t(Trace* tr, const Tensor& a) {
  Tensor out = detail::new_tensor(a.rows(), a.cols());
  for (size_t i = 0; i < a.size(); ++i) {
    if (a.values()[i] <= 0.0)
      throw std::domain_error("log_t: argument must be strictly positive");
    out.values()[i] = std::log(a.values()[i]);
  }
  detail::record(tr, out, {a}, [pa = a.impl(), po = out.impl()]() {
    for (size_t i = 0; i < po->g.size(); ++i) pa->g[i] += po->g[i] / pa->v[i];
  });
  return out;
}

inline Tensor sum_all(Trace* tr, const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  Tensor out = make_scalar(s);
  detail::record(tr, out, {a}, [pa = a.impl(), po = out.impl()]() {
    for (size_t i = 0; i < pa->g.size(); ++i) pa->g[i] += po->g[0];
  });
  return out;
}

inline Tensor mean_all(Trace* tr, const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  const double inv = 1.0 / static_cast<double>(a.size());
  Tensor out = make_scalar(s * inv);
  detail::record(tr, out, {a}, [pa = a.impl(), po = out.impl(), inv]() {
    for (size_t i = 0; i < pa->g.size(); ++i) pa->g[i] += po->g[0] * inv;
  });
  return out;
}

/// Row-wise softmax over active entries (mask entry != 0 means active; empty
/// mask = all active). Inactive outputs are exactly 0. Max-subtraction for
/// stability. Rows with no active entry are rejected.
inline Tensor softmax_rows(Trace* tr, const Tensor& a,
                           const std::vector<uint8_t>& mask = {}) {
  if (!mask.empty() && mask.size() != a.size())
    throw std::invalid_argument("softmax_rows: mask size must match tensor size");
  const int m = a.rows(), n = a.cols();
  Tensor out = detail::new_tensor(m, n);
  auto active = [&](int i, int j) {
    return mask.empty() || mask[static_cast<size_t>(i) * n + j] != 0;
  };
  for (int i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j)
      if (active(i, j)) mx = std::max(mx, a.at(i, j));
    if (mx == -std::numeric_limits<double>::infinity())
      throw std::invalid_argument("softmax_rows: row " + std::to_string(i) +
                                  " has no active entry");
    double z = 0.0;
    for (int j = 0; j < n; ++j)
      if (active(i, j)) z += std::exp(a.at(i, j) - mx);
    for (int j = 0; j < n; ++j)
      if (active(i, j))
        out.values()[static_cast<size_t>(i) * n + j] = std::exp(a.at(i, j) - mx) / z;
  }
  detail::record(tr, out, {a},
                 [pa = a.impl(), po = out.impl(), m, n, mask]() {
    for (int i = 0; i < m; ++i) {
      double dotv = 0.0;
      for (int j = 0; j < n; ++j) {
        const size_t ix = static_cast<size_t>(i) * n + j;
        dotv += po->g[ix] * po->v[ix];
      }
      for (int j = 0; j < n; ++j) {
        const size_t ix = static_cast<size_t>(i) * n + j;
        if (!mask.empty() && mask[ix] == 0) continue;
        pa->g[ix] += po->v[ix] * (po->g[ix] - dotv);
      }
    }
  });
  return out;
}

/// Per-row layer normalization with learnable gain/bias (each 1 x cols).
inline Tensor layer_norm(Trace* tr, const Tensor& x, const Tensor& gain,
                         const Tensor& bias, double eps = 1e-5) {
  const int m = x.rows(), n = x.cols();
  if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n)
    throw std::invalid_argument("layer_norm: gain/bias must be [1x" +
                                std::to_string(n) + "]");
  Tensor out = detail::new_tensor(m, n);
  // cache per-row mean and inverse stddev for the backward pass
  auto stats = std::make_shared<std::vector<double>>(static_cast<size_t>(m) * 2);
  for (int i = 0; i < m; ++i) {
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += x.at(i, j);
    mu /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) {
      const double d = x.at(i, j) - mu;
      var += d * d;
    }
    var /= n;
    const double inv = 1.0 / std::sqrt(var + eps);
    (*stats)[static_cast<size_t>(i) * 2] = mu;
    (*stats)[static_cast<size_t>(i) * 2 + 1] = inv;
    for (int j = 0; j < n; ++j)
      out.values()[static_cast<size_t>(i) * n + j] =
          (x.at(i, j) - mu) * inv * gain.values()[static_cast<size_t>(j)] +
          bias.values()[static_cast<size_t>(j)];
  }
  detail::record(tr, out, {x, gain, bias},
                 [px = x.impl(), pg = gain.impl(), pb = bias.impl(),
                  po = out.impl(), stats, m, n]() {
    for (int i = 0; i < m; ++i) {
      const double mu = (*stats)[static_cast<size_t>(i) * 2];
      const double inv = (*stats)[static_cast<size_t>(i) * 2 + 1];
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
      for (int j = 0; j < n; ++j) {
        const size_t ix = static_cast<size_t>(i) * n + j;
        const double xhat = (px->v[ix] - mu) * inv;
        const double dy = po->g[ix];
        const double dxhat = dy * pg->v[static_cast<size_t>(j)];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat;
        pg->g[static_cast<size_t>(j)] += dy * xhat;
        pb->g[static_cast<size_t>(j)] += dy;
      }
      for (int j = 0; j < n; ++j) {
        const size_t ix = static_cast<size_t>(i) * n + j;
        const double xhat = (px->v[ix] - mu) * inv;
        const double dxhat = po->g[ix] * pg->v[static_cast<size_t>(j)];
        px->g[ix] += inv * (dxhat - sum_dxhat / n - xhat * sum_dxhat_xhat / n);
      }
    }
  });
  return out;
}

/// Gather rows by index (repeats allowed; gradients scatter-accumulate).
inline Tensor select_rows(Trace* tr, const Tensor& x, std::vector<int> idx) {
  const int n = x.cols();
  for (int i : idx)
    if (i < 0 || i >= x.rows())
      throw std::out_of_range("select_rows: index " + std::to_string(i) +
                              " out of range for " + detail::shape_str(x));
  Tensor out = detail::new_tensor(static_cast<int>(idx.size()), n);
  for (size_t t = 0; t < idx.size(); ++t)
    std::copy_n(x.values().data() + static_cast<size_t>(idx[t]) * n, n,
                out.values().data() + t * n);
  detail::record(tr, out, {x},
                 [px = x.impl(), po = out.impl(), idx = std::move(idx), n]() {
    for (size_t t = 0; t < idx.size(); ++t)
      for (int j = 0; j < n; ++j)
        px->g[static_cast<size_t>(idx[t]) * n + j] += po->g[t * static_cast<size_t>(n) + j];
  });
  return out;
}

/// Gather columns by index.
inline Tensor select_cols(Trace* tr, const Tensor& x, std::vector<int> idx) {
  const int m = x.rows(), n = x.cols();
  for (int j : idx)
    if (j < 0 || j >= n)
      throw std::out_of_range("select_cols: index " + std::to_string(j) +
                              " out of range for " + detail::shape_str(x));
  const int w = static_cast<int>(idx.size());
  Tensor out = detail::new_tensor(m, w);
  for (int i = 0; i < m; ++i)
    for (int t = 0; t < w; ++t)
      out.values()[static_cast<size_t>(i) * w + t] = x.at(i, idx[static_cast<size_t>(t)]);
  detail::record(tr, out, {x},
                 [px = x.impl(), po = out.impl(), idx = std::move(idx), m, n, w]() {
    for (int i = 0; i < m; ++i)
      for (int t = 0; t < w; ++t)
        px->g[static_cast<size_t>(i) * n + idx[static_cast<size_t>(t)]] +=
            po->g[static_cast<size_t>(i) * w + t];
  });
  return out;
}

/// Contiguous column slice [c0, c1).
inline Tensor slice_cols(Trace* tr, const Tensor& x, int c0, int c1) {
  if (c0 < 0 || c1 > x.cols() || c0 >= c1)
    throw std::out_of_range("slice_cols: bad range [" + std::to_string(c0) +
                            "," + std::to_string(c1) + ") for " +
                            detail::shape_str(x));
  const int m = x.rows(), n = x.cols(), w = c1 - c0;
  Tensor out = detail::new_tensor(m, w);
  for (int i = 0; i < m; ++i)
    std::copy_n(x.values().data() + static_cast<size_t>(i) * n + c0, w,
                out.values().data() + static_cast<size_t>(i) * w);
  detail::record(tr, out, {x}, [px = x.impl(), po = out.impl(), m, n, c0, w]() {
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < w; ++j)
        px->g[static_cast<size_t>(i) * n + c0 + j] += po->g[static_cast<size_t>(i) * w + j];
  });
  return out;
}

/// Concatenate along columns; all inputs share the row count.
inline Tensor concat_cols(Trace* tr, const std::vector<Tensor>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const int m = xs[0].rows();
  int total = 0;
  for (const auto& x : xs) {
    if (x.rows() != m)
      throw std::invalid_argument("concat_cols: row counts disagree");
    total += x.cols();
  }
  Tensor out = detail::new_tensor(m, total);
  int off = 0;
  for (const auto& x : xs) {
    const int w = x.cols();
    for (int i = 0; i < m; ++i)
      std::copy_n(x.values().data() + static_cast<size_t>(i) * w, w,
                  out.values().data() + static_cast<size_t>(i) * total + off);
    off += w;
  }
  if (tr) {
    std::vector<std::shared_ptr<TensorImpl>> parents;
    parents.reserve(xs.size());
    for (const auto& x : xs) {
      detail::ensure_grad(x.impl());
      parents.push_back(x.impl());
    }
    detail::ensure_grad(out.impl());
    out.impl()->back = [parents, po = out.impl(), m, total]() {
      int off2 = 0;
      for (const auto& p : parents) {
        const int w = p->c;
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < w; ++j)
            p->g[static_cast<size_t>(i) * w + j] +=
                po->g[static_cast<size_t>(i) * total + off2 + j];
        off2 += w;
      }
    };
    tr->push(out.impl());
  }
  return out;
}

/// ResGatedGCN edge aggregation: out_i = sum over neighbors j of
/// sigmoid(C_i + D_j) ⊙ B_j, with neighborhoods given as CSR lists.
/// C = W3 X, D = W4 X, B = W2 X are precomputed N x d inputs.
inline Tensor gated_neighbor_sum(Trace* tr, const Tensor& C, const Tensor& D,
                                 const Tensor& B, const std::vector<int>& off,
                                 const std::vector<int>& adj) {
  detail::check_same_shape("gated_neighbor_sum", C, D);
  detail::check_same_shape("gated_neighbor_sum", C, B);
  const int N = C.rows(), d = C.cols();
  if (static_cast<int>(off.size()) != N + 1)
    throw std::invalid_argument("gated_neighbor_sum: CSR offsets must have N+1 entries");
  Tensor out = detail::new_tensor(N, d);
  // cache the gate values for the backward pass
  auto gates = std::make_shared<std::vector<double>>(adj.size() * static_cast<size_t>(d));
  for (int i = 0; i < N; ++i) {
    for (int e = off[static_cast<size_t>(i)]; e < off[static_cast<size_t>(i) + 1]; ++e) {
      const int j = adj[static_cast<size_t>(e)];
      for (int t = 0; t < d; ++t) {
        const double pre = C.at(i, t) + D.at(j, t);
        const double s = 1.0 / (1.0 + std::exp(-pre));
        (*gates)[static_cast<size_t>(e) * d + t] = s;
        out.values()[static_cast<size_t>(i) * d + t] += s * B.at(j, t);
      }
    }
  }
  detail::record(tr, out, {C, D, B},
                 [pc = C.impl(), pd = D.impl(), pb = B.impl(), po = out.impl(),
                  gates, off, adj, N, d]() {
    for (int i = 0; i < N; ++i) {
      for (int e = off[static_cast<size_t>(i)]; e < off[static_cast<size_t>(i) + 1]; ++e) {
        const int j = adj[static_cast<size_t>(e)];
        for (int t = 0; t < d; ++t) {
          const double go = po->g[static_cast<size_t>(i) * d + t];
          if (go == 0.0) continue;
          const double s = (*gates)[static_cast<size_t>(e) * d + t];
          const double bj = pb->v[static_cast<size_t>(j) * d + t];
          pb->g[static_cast<size_t>(j) * d + t] += go * s;
          const double dpre = go * bj * s * (1.0 - s);
          pc->g[static_cast<size_t>(i) * d + t] += dpre;
          pd->g[static_cast<size_t>(j) * d + t] += dpre;
        }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// ParamStore: named parameters with Adam slots and checkpoint I/O.

class ParamStore {
 public:
  // move-only: a copy would alias the underlying tensors; use clone()
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) = default;
  ParamStore& operator=(ParamStore&&) = default;

  Tensor create(const std::string& name, int r, int c) {
    return insert(name, detail::new_tensor(r, c));
  }

  /// Uniform(-limit, limit) initialization from the given generator.
  Tensor create_uniform(const std::string& name, int r, int c, double limit,
                        std::mt19937_64& rng) {
    Tensor t = detail::new_tensor(r, c);
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (auto& x : t.values()) x = dist(rng);
    return insert(name, t);
  }

  /// Xavier/Glorot uniform for an r x c weight matrix.
  Tensor create_xavier(const std::string& name, int r, int c,
                       std::mt19937_64& rng) {
    return create_uniform(name, r, c, std::sqrt(6.0 / (r + c)), rng);
  }

  Tensor create_const(const std::string& name, int r, int c, double fill) {
    Tensor t = detail::new_tensor(r, c);
    std::fill(t.values().begin(), t.values().end(), fill);
    return insert(name, t);
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  Tensor get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      throw std::out_of_range("ParamStore: no parameter named '" + name + "'");
    return entries_[it->second].t;
  }

  const std::vector<std::string>& names() const { return names_; }
  size_t count() const { return entries_.size(); }
  int64_t step() const { return step_; }

  void zero_grad() {
    for (auto& e : entries_)
      std::fill(e.t.grad().begin(), e.t.grad().end(), 0.0);
  }

  /// Adam with bias correction; gradients are cleared afterward.
  void adam_step(double lr, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8) {
    step_ += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
    for (auto& e : entries_) {
      auto& v = e.t.values();
      auto& g = e.t.grad();
      if (g.size() != v.size())
        throw std::logic_error("adam_step: missing gradient for '" + e.name + "'");
      for (size_t i = 0; i < v.size(); ++i) {
        e.m[i] = beta1 * e.m[i] + (1.0 - beta1) * g[i];
        e.s[i] = beta2 * e.s[i] + (1.0 - beta2) * g[i] * g[i];
        const double mhat = e.m[i] / bc1;
        const double shat = e.s[i] / bc2;
        v[i] -= lr * mhat / (std::sqrt(shat) + eps);
      }
      std::fill(g.begin(), g.end(), 0.0);
    }
  }

  /// Copy parameter values from another store (hard target update). Shapes
  /// and names must match exactly; optimizer slots are left untouched.
  void copy_values_from(const ParamStore& src) {
    if (src.names_ != names_)
      throw std::invalid_argument("copy_values_from: parameter sets differ");
    for (size_t i = 0; i < entries_.size(); ++i) {
      const auto& s = src.entries_[i].t;
      auto& d = entries_[i].t;
      if (s.rows() != d.rows() || s.cols() != d.cols())
        throw std::invalid_argument("copy_values_from: shape mismatch at '" +
                                    names_[i] + "'");
      d.values() = s.values();
    }
  }

  /// Deep copy (values, slots, step counter) — collector snapshots.
  ParamStore clone() const {
    ParamStore out;
    out.step_ = step_;
    for (const auto& e : entries_) {
      Tensor t = out.create(e.name, e.t.rows(), e.t.cols());
      t.values() = e.t.values();
      out.entries_.back().m = e.m;
      out.entries_.back().s = e.s;
    }
    return out;
  }

  // Checkpoint format (little-endian):
  //   magic "GRTNPK01", u64 step, u32 param count, then per parameter:
  //   u32 name length, name bytes, u32 rows, u32 cols,
  //   rows*cols f64 values, rows*cols f64 first moment, rows*cols f64 second.
  void save(std::ostream& os) const {
    os.write(kMagic, 8);
    detail_write_u64(os, static_cast<uint64_t>(step_));
    detail_write_u32(os, static_cast<uint32_t>(entries_.size()));
    for (const auto& e : entries_) {
      detail_write_u32(os, static_cast<uint32_t>(e.name.size()));
      os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      detail_write_u32(os, static_cast<uint32_t>(e.t.rows()));
      detail_write_u32(os, static_cast<uint32_t>(e.t.cols()));
      detail_write_f64s(os, e.t.values());
      detail_write_f64s(os, e.m);
      detail_write_f64s(os, e.s);
    }
    if (!os) throw std::runtime_error("ParamStore::save: write failed");
  }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("ParamStore::save: cannot open " + path);
    save(f);
  }

  /// Load into this store. The checkpoint manifest must match the store's
  /// parameters exactly; on mismatch the error message carries the diff.
  void load(std::istream& is) {
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
      throw std::runtime_error("ParamStore::load: bad magic header");
    const uint64_t step = detail_read_u64(is);
    const uint32_t n = detail_read_u32(is);
    struct Rec {
      std::string name;
      uint32_t r, c;
      std::vector<double> v, m, s;
    };
    std::vector<Rec> recs(n);
    for (auto& rec : recs) {
      const uint32_t len = detail_read_u32(is);
      rec.name.resize(len);
      is.read(rec.name.data(), len);
      rec.r = detail_read_u32(is);
      rec.c = detail_read_u32(is);
      const size_t cnt = static_cast<size_t>(rec.r) * rec.c;
      rec.v = detail_read_f64s(is, cnt);
      rec.m = detail_read_f64s(is, cnt);
      rec.s = detail_read_f64s(is, cnt);
    }
    if (!is) throw std::runtime_error("ParamStore::load: truncated checkpoint");

    // manifest check
    std::string diff;
    for (const auto& rec : recs)
      if (!has(rec.name)) diff += "  checkpoint-only: " + rec.name + "\n";
    for (const auto& nm : names_) {
      auto it = std::find_if(recs.begin(), recs.end(),
                             [&](const Rec& r) { return r.name == nm; });
      if (it == recs.end()) {
        diff += "  store-only: " + nm + "\n";
        continue;
      }
      Tensor t = get(nm);
      if (static_cast<int>(it->r) != t.rows() || static_cast<int>(it->c) != t.cols())
        diff += "  shape mismatch at " + nm + ": checkpoint [" +
                std::to_string(it->r) + "x" + std::to_string(it->c) +
                "] vs store " + detail::shape_str(t) + "\n";
    }
    if (!diff.empty())
      throw std::runtime_error("ParamStore::load: manifest mismatch:\n" + diff);

    for (const auto& rec : recs) {
      size_t i = index_.at(rec.name);
      entries_[i].t.values() = rec.v;
      entries_[i].m = rec.m;
      entries_[i].s = rec.s;
    }
    step_ = static_cast<int64_t>(step);
  }

  void load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("ParamStore::load: cannot open " + path);
    load(f);
  }

 private:
  struct Entry {
    std::string name;
    Tensor t;
    std::vector<double> m, s;  // Adam moments
  };

  static constexpr const char kMagic[9] = "GRTNPK01";

  Tensor insert(const std::string& name, Tensor t) {
    if (has(name))
      throw std::invalid_argument("ParamStore: duplicate parameter '" + name + "'");
    detail::ensure_grad(t.impl());
    index_[name] = entries_.size();
    entries_.push_back({name, t, std::vector<double>(t.size(), 0.0),
                        std::vector<double>(t.size(), 0.0)});
    names_.push_back(name);
    return t;
  }

  static void detail_write_u32(std::ostream& os, uint32_t x) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(x >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
  }
  static void detail_write_u64(std::ostream& os, uint64_t x) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(x >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
  }
  static void detail_write_f64s(std::ostream& os, const std::vector<double>& v) {
    for (double x : v) {
      uint64_t bits;
      std::memcpy(&bits, &x, 8);
      detail_write_u64(os, bits);
    }
  }
  static uint32_t detail_read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    uint32_t x = 0;
    for (int i = 0; i < 4; ++i) x |= static_cast<uint32_t>(b[i]) << (8 * i);
    return x;
  }
  static uint64_t detail_read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    uint64_t x = 0;
    for (int i = 0; i < 8; ++i) x |= static_cast<uint64_t>(b[i]) << (8 * i);
    return x;
  }
  static std::vector<double> detail_read_f64s(std::istream& is, size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) {
      const uint64_t bits = detail_read_u64(is);
      std::memcpy(&x, &bits, 8);
    }
    return v;
  }

  std::vector<Entry> entries_;
  std::vector<std::string> names_;
  std::unordered_map<std::string, size_t> index_;
  int64_t step_ = 0;
};

/// Spec-named free-function form of the optimizer step.
inline void adam_step(ParamStore& store, double lr, double beta1 = 0.9,
                      double beta2 = 0.999, double eps = 1e-8) {
  store.adam_step(lr, beta1, beta2, eps);
}

}  // namespace grate
