#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "paramrel/error.hpp"
#include "paramrel/nn/params.hpp"
#include "paramrel/nn/tensor.hpp"

namespace paramrel::nn {

class Graph;

// Handle to a node recorded on a Graph.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
};

// Append-only tape. Nodes are recorded in evaluation order, so reverse
// iteration is a valid topological order for backpropagation.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value) { return push(std::move(value), false, {}, nullptr); }

  // Leaf bound to a named parameter; repeated lookups return the same node.
  Var param(const ParamStore& store, const std::string& name) {
    auto it = params_.find(name);
    if (it != params_.end()) return {this, it->second};
    Var v = push(store.at(name), true, {}, nullptr);
    params_.emplace(name, v.id);
    return v;
  }

  Var record(Tensor value, std::vector<std::size_t> parents, BackwardFn fn) {
    bool needs = false;
    for (std::size_t p : parents) needs = needs || nodes_[p].requires_grad;
    return push(std::move(value), needs, std::move(parents), needs ? std::move(fn) : nullptr);
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }

  // Gradient buffer of a node, or nullptr when nothing upstream needs it.
  Tensor* grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape());
    return &n.grad;
  }

  void backward(Var loss) {
    if (loss.graph != this) throw UsageError("backward: variable belongs to another graph");
    if (nodes_[loss.id].value.size() != 1) {
      throw UsageError("backward: loss must be scalar, got shape " +
                       shape_str(nodes_[loss.id].value.shape()));
    }
    for (auto& n : nodes_) n.grad = Tensor();
    if (!nodes_[loss.id].requires_grad) return;
    grad_buffer(loss.id)->fill(1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.size() == 0) continue;
      n.backward(*this, i);
    }
  }

  // One gradient per store entry; parameters the loss never touched get exact zeros.
  ParamGrads param_grads(const ParamStore& store) const {
    ParamGrads out;
    for (const auto& [name, t] : store) {
      auto it = params_.find(name);
      if (it != params_.end() && nodes_[it->second].grad.size() == t.size()) {
        out.emplace(name, nodes_[it->second].grad);
      } else {
        out.emplace(name, Tensor(t.shape()));
      }
    }
    return out;
  }

  std::size_t node_count() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::size_t> parents;
    BackwardFn backward;
  };

  Var push(Tensor value, bool requires_grad, std::vector<std::size_t> parents, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Tensor(), requires_grad, std::move(parents), std::move(fn)});
    return {this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> params_;
};

inline const Tensor& Var::value() const { return graph->value(id); }

namespace detail {

inline Graph& same_graph(Var a, Var b) {
  if (a.graph != b.graph) throw UsageError("operands belong to different graphs");
  return *a.graph;
}

inline void axpy(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

inline double dot(const double* x, const double* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

template <typename Fwd, typename Deriv>
Var unary(Var x, Fwd fwd, Deriv deriv) {
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = fwd(xv[i]);
  const std::size_t xi = x.id;
  return x.graph->record(std::move(y), {xi}, [xi, deriv](Graph& g, std::size_t self) {
    Tensor* gx = g.grad_buffer(xi);
    if (!gx) return;
    const Tensor& xv = g.value(xi);
    const Tensor& yv = g.value(self);
    const Tensor& gy = g.grad(self);
    for (std::size_t i = 0; i < xv.size(); ++i) (*gx)[i] += gy[i] * deriv(xv[i], yv[i]);
  });
}

}  // namespace detail

// y = x W^T + b, x:[B x in], W:[out x in], b:[out] -> [B x out]
inline Var linear(Var x, Var W, Var b) {
  Graph& g = detail::same_graph(x, W);
  const Tensor& xv = x.value();
  const Tensor& Wv = W.value();
  const Tensor& bv = b.value();
  if (Wv.rank() != 2 || bv.rank() != 1 || xv.rank() != 2 || xv.dim(1) != Wv.dim(1) ||
      bv.dim(0) != Wv.dim(0)) {
    throw DimensionError("linear: x" + shape_str(xv.shape()) + " W" + shape_str(Wv.shape()) +
                         " b" + shape_str(bv.shape()));
  }
  const std::size_t B = xv.dim(0), in = Wv.dim(1), out = Wv.dim(0);
  Tensor y({B, out});
  for (std::size_t r = 0; r < B; ++r) {
    const double* xr = xv.data().data() + r * in;
    double* yr = y.data().data() + r * out;
    for (std::size_t o = 0; o < out; ++o) yr[o] = bv[o] + detail::dot(Wv.data().data() + o * in, xr, in);
  }
  const std::size_t xi = x.id, wi = W.id, bi = b.id;
  return g.record(std::move(y), {xi, wi, bi}, [=](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    const Tensor& xv = g.value(xi);
    const Tensor& Wv = g.value(wi);
    if (Tensor* gx = g.grad_buffer(xi)) {
      for (std::size_t r = 0; r < B; ++r)
        for (std::size_t o = 0; o < out; ++o)
          detail::axpy(gy[r * out + o], Wv.data().data() + o * in, gx->data().data() + r * in, in);
    }
    if (Tensor* gW = g.grad_buffer(wi)) {
      for (std::size_t r = 0; r < B; ++r)
        for (std::size_t o = 0; o < out; ++o)
          detail::axpy(gy[r * out + o], xv.data().data() + r * in, gW->data().data() + o * in, in);
    }
    if (Tensor* gb = g.grad_buffer(bi)) {
      for (std::size_t r = 0; r < B; ++r)
        for (std::size_t o = 0; o < out; ++o) (*gb)[o] += gy[r * out + o];
    }
  });
}

inline Var add(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
  const std::size_t ai = a.id, bi = b.id;
  return g.record(std::move(y), {ai, bi}, [ai, bi](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    for (std::size_t p : {ai, bi})
      if (Tensor* gp = g.grad_buffer(p))
        for (std::size_t i = 0; i < gy.size(); ++i) (*gp)[i] += gy[i];
  });
}

inline Var sub(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
  const std::size_t ai = a.id, bi = b.id;
  return g.record(std::move(y), {ai, bi}, [ai, bi](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    if (Tensor* ga = g.grad_buffer(ai))
      for (std::size_t i = 0; i < gy.size(); ++i) (*ga)[i] += gy[i];
    if (Tensor* gb = g.grad_buffer(bi))
      for (std::size_t i = 0; i < gy.size(); ++i) (*gb)[i] -= gy[i];
  });
}

inline Var mul(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  const std::size_t ai = a.id, bi = b.id;
  return g.record(std::move(y), {ai, bi}, [ai, bi](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    if (Tensor* ga = g.grad_buffer(ai))
      for (std::size_t i = 0; i < gy.size(); ++i) (*ga)[i] += gy[i] * g.value(bi)[i];
    if (Tensor* gb = g.grad_buffer(bi))
      for (std::size_t i = 0; i < gy.size(); ++i) (*gb)[i] += gy[i] * g.value(ai)[i];
  });
}

inline Var scale(Var x, double c) {
  return detail::unary(x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Var add_scalar(Var x, double c) {
  return detail::unary(x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

inline Var silu(Var x) {
  return detail::unary(
      x, [](double v) { return v / (1.0 + std::exp(-v)); },
      [](double v, double) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 + v * (1.0 - s));
      });
}

inline Var exp(Var x) {
  return detail::unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Var square(Var x) {
  return detail::unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

// Gradient is zero where the input lies outside [lo, hi].
inline Var clamp(Var x, double lo, double hi) {
  return detail::unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

// Row r of x multiplied by the constant c[r].
inline Var scale_rows(Var x, std::vector<double> c) {
  const Tensor& xv = x.value();
  const std::size_t R = xv.rows(), C = xv.cols();
  if (c.size() != R) throw DimensionError("scale_rows: " + std::to_string(c.size()) + " coefficients for " + std::to_string(R) + " rows");
  Tensor y = xv;
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t j = 0; j < C; ++j) y[r * C + j] *= c[r];
  const std::size_t xi = x.id;
  return x.graph->record(std::move(y), {xi}, [xi, R, C, c = std::move(c)](Graph& g, std::size_t self) {
    Tensor* gx = g.grad_buffer(xi);
    if (!gx) return;
    const Tensor& gy = g.grad(self);
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t j = 0; j < C; ++j) (*gx)[r * C + j] += c[r] * gy[r * C + j];
  });
}

inline Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const std::size_t xi = x.id;
  return x.graph->record(Tensor({1}, {s}), {xi}, [xi](Graph& g, std::size_t self) {
    Tensor* gx = g.grad_buffer(xi);
    if (!gx) return;
    const double gy = g.grad(self)[0];
    for (double& v : gx->data()) v += gy;
  });
}

inline Var mean(Var x) {
  const auto n = static_cast<double>(x.value().size());
  return scale(sum(x), 1.0 / n);
}

// [R x C] -> [R x 1]
inline Var sum_cols(Var x) {
  const Tensor& xv = x.value();
  const std::size_t R = xv.rows(), C = xv.cols();
  Tensor y({R, 1});
  for (std::size_t r = 0; r < R; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < C; ++j) s += xv[r * C + j];
    y[r] = s;
  }
  const std::size_t xi = x.id;
  return x.graph->record(std::move(y), {xi}, [xi, R, C](Graph& g, std::size_t self) {
    Tensor* gx = g.grad_buffer(xi);
    if (!gx) return;
    const Tensor& gy = g.grad(self);
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t j = 0; j < C; ++j) (*gx)[r * C + j] += gy[r];
  });
}

inline Var slice_cols(Var x, std::size_t start, std::size_t count) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || start + count > xv.dim(1)) {
    throw DimensionError("slice_cols: columns [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of " + shape_str(xv.shape()));
  }
  const std::size_t R = xv.dim(0), C = xv.dim(1);
  Tensor y({R, count});
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t j = 0; j < count; ++j) y[r * count + j] = xv[r * C + start + j];
  const std::size_t xi = x.id;
  return x.graph->record(std::move(y), {xi}, [=](Graph& g, std::size_t self) {
    Tensor* gx = g.grad_buffer(xi);
    if (!gx) return;
    const Tensor& gy = g.grad(self);
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t j = 0; j < count; ++j) (*gx)[r * C + start + j] += gy[r * count + j];
  });
}

inline Var concat_cols(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(0) != bv.dim(0)) {
    throw DimensionError("concat_cols: " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
  }
  const std::size_t R = av.dim(0), Ca = av.dim(1), Cb = bv.dim(1), C = Ca + Cb;
  Tensor y({R, C});
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t j = 0; j < Ca; ++j) y[r * C + j] = av[r * Ca + j];
    for (std::size_t j = 0; j < Cb; ++j) y[r * C + Ca + j] = bv[r * Cb + j];
  }
  const std::size_t ai = a.id, bi = b.id;
  return g.record(std::move(y), {ai, bi}, [=](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    if (Tensor* ga = g.grad_buffer(ai))
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t j = 0; j < Ca; ++j) (*ga)[r * Ca + j] += gy[r * C + j];
    if (Tensor* gb = g.grad_buffer(bi))
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t j = 0; j < Cb; ++j) (*gb)[r * Cb + j] += gy[r * C + Ca + j];
  });
}

// Per-row group normalization of x:[B x C] without affine parameters.
inline Var group_norm(Var x, std::size_t groups, double eps) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2) throw DimensionError("group_norm: expected [B x C], got " + shape_str(xv.shape()));
  const std::size_t B = xv.dim(0), C = xv.dim(1);
  if (groups == 0 || C % groups != 0) {
    throw ConfigError("group_norm: " + std::to_string(C) + " channels not divisible by " +
                      std::to_string(groups) + " groups");
  }
  if (!(eps > 0.0)) throw ConfigError("group_norm: eps must be positive");
  const std::size_t G = C / groups;
  Tensor y({B, C});
  std::vector<double> inv_std(B * groups);
  for (std::size_t r = 0; r < B; ++r) {
    for (std::size_t k = 0; k < groups; ++k) {
      const double* xs = xv.data().data() + r * C + k * G;
      double m = 0.0;
      for (std::size_t j = 0; j < G; ++j) m += xs[j];
      m /= static_cast<double>(G);
      double var = 0.0;
      for (std::size_t j = 0; j < G; ++j) var += (xs[j] - m) * (xs[j] - m);
      var /= static_cast<double>(G);
      const double inv = 1.0 / std::sqrt(var + eps);
      inv_std[r * groups + k] = inv;
      for (std::size_t j = 0; j < G; ++j) y[r * C + k * G + j] = (xs[j] - m) * inv;
    }
  }
  const std::size_t xi = x.id;
  return x.graph->record(std::move(y), {xi}, [=, inv_std = std::move(inv_std)](Graph& g, std::size_t self) {
    Tensor* gx = g.grad_buffer(xi);
    if (!gx) return;
    const Tensor& gy = g.grad(self);
    const Tensor& yv = g.value(self);
    const auto n = static_cast<double>(G);
    for (std::size_t r = 0; r < B; ++r) {
      for (std::size_t k = 0; k < groups; ++k) {
        const std::size_t off = r * C + k * G;
        double sum_g = 0.0, sum_gy = 0.0;
        for (std::size_t j = 0; j < G; ++j) {
          sum_g += gy[off + j];
          sum_gy += gy[off + j] * yv[off + j];
        }
        const double inv = inv_std[r * groups + k];
        for (std::size_t j = 0; j < G; ++j)
          (*gx)[off + j] += inv * (gy[off + j] - sum_g / n - yv[off + j] * sum_gy / n);
      }
    }
  });
}

// (1 + scale) * GroupNorm(h) + shift
inline Var ada_gn(Var h, Var scale_v, Var shift_v, std::size_t groups, double eps) {
  return add(mul(add_scalar(scale_v, 1.0), group_norm(h, groups, eps)), shift_v);
}

// 0.5 * sum_j (exp(logvar) + mean^2 - 1 - logvar), per row -> [B x 1]
inline Var kl_std_normal_rows(Var mean_v, Var logvar_v) {
  Graph& g = detail::same_graph(mean_v, logvar_v);
  const Tensor& m = mean_v.value();
  const Tensor& lv = logvar_v.value();
  require_same_shape(m, lv, "kl_std_normal_rows");
  const std::size_t R = m.rows(), C = m.cols();
  Tensor y({R, 1});
  for (std::size_t r = 0; r < R; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < C; ++j) {
      const double a = m[r * C + j], l = lv[r * C + j];
      s += std::exp(l) + a * a - 1.0 - l;
    }
    y[r] = 0.5 * s;
  }
  const std::size_t mi = mean_v.id, li = logvar_v.id;
  return g.record(std::move(y), {mi, li}, [=](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    if (Tensor* gm = g.grad_buffer(mi))
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t j = 0; j < C; ++j) (*gm)[r * C + j] += gy[r] * g.value(mi)[r * C + j];
    if (Tensor* gl = g.grad_buffer(li))
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t j = 0; j < C; ++j)
          (*gl)[r * C + j] += gy[r] * 0.5 * (std::exp(g.value(li)[r * C + j]) - 1.0);
  });
}

// -log softmax(logits)[class] summed over the D categorical slots of each row.
// logits:[B x D*K], classes: B*D entries in [0, K).
inline Var categorical_nll_rows(Var logits, std::vector<int> classes, std::size_t K) {
  const Tensor& lv = logits.value();
  const std::size_t B = lv.rows(), DK = lv.cols();
  if (K == 0 || DK % K != 0 || classes.size() * K != B * DK) {
    throw DimensionError("categorical_nll_rows: logits " + shape_str(lv.shape()) + " vs " +
                         std::to_string(classes.size()) + " classes, K=" + std::to_string(K));
  }
  const std::size_t D = DK / K;
  Tensor p = softmax_groups(lv, K);
  Tensor y({B, 1});
  for (std::size_t r = 0; r < B; ++r) {
    double s = 0.0;
    for (std::size_t d = 0; d < D; ++d) s -= std::log(p[r * DK + d * K + static_cast<std::size_t>(classes[r * D + d])]);
    y[r] = s;
  }
  const std::size_t li = logits.id;
  return logits.graph->record(std::move(y), {li}, [=, p = std::move(p), classes = std::move(classes)](Graph& g, std::size_t self) {
    Tensor* gl = g.grad_buffer(li);
    if (!gl) return;
    const Tensor& gy = g.grad(self);
    for (std::size_t r = 0; r < B; ++r)
      for (std::size_t d = 0; d < D; ++d)
        for (std::size_t k = 0; k < K; ++k) {
          const std::size_t i = r * DK + d * K + k;
          const double onehot = static_cast<int>(k) == classes[r * D + d] ? 1.0 : 0.0;
          (*gl)[i] += gy[r] * (p[i] - onehot);
        }
  });
}

// Monte-Carlo KL between the discrete sender N(a(K e_x - 1), aKI) and the
// Gaussian-mixture receiver whose weights are softmax(logits), per row.
// Each draw in `sender_draws` is a [B x D*K] array of sender samples; the
// sender does not depend on the network, so the draws are constants.
// Per slot, log p_S(y) - log p_R(y) = y_x - logsumexp_k(log p_k + y_k)
// because the mixture components share covariance aKI.
inline Var discrete_flow_kl_rows(Var logits, const std::vector<Tensor>& sender_draws,
                                 const std::vector<int>& classes, std::size_t K) {
  const Tensor& lv = logits.value();
  const std::size_t B = lv.rows(), DK = lv.cols();
  if (sender_draws.empty()) throw UsageError("discrete_flow_kl_rows: need at least one draw");
  if (K == 0 || DK % K != 0 || classes.size() * K != B * DK) {
    throw DimensionError("discrete_flow_kl_rows: logits " + shape_str(lv.shape()) + " vs " +
                         std::to_string(classes.size()) + " classes");
  }
  const std::size_t D = DK / K;
  const auto n_mc = static_cast<double>(sender_draws.size());
  Tensor p = softmax_groups(lv, K);
  // Accumulated mean of the posterior responsibilities softmax(logits + y).
  Tensor resp(lv.shape());
  Tensor y({B, 1});
  std::vector<double> buf(K);
  for (const Tensor& draw : sender_draws) {
    require_same_shape(draw, lv, "discrete_flow_kl_rows draw");
    for (std::size_t r = 0; r < B; ++r) {
      double s = 0.0;
      for (std::size_t d = 0; d < D; ++d) {
        const std::size_t off = r * DK + d * K;
        double mx = -INFINITY;
        for (std::size_t k = 0; k < K; ++k) {
          buf[k] = lv[off + k] + draw[off + k];
          mx = std::max(mx, buf[k]);
        }
        double z = 0.0;
        for (std::size_t k = 0; k < K; ++k) z += (buf[k] = std::exp(buf[k] - mx));
        for (std::size_t k = 0; k < K; ++k) resp[off + k] += buf[k] / z / n_mc;
        double lmx = lv[off];
        for (std::size_t k = 1; k < K; ++k) lmx = std::max(lmx, lv[off + k]);
        double lz = 0.0;
        for (std::size_t k = 0; k < K; ++k) lz += std::exp(lv[off + k] - lmx);
        const double log_mix = (mx + std::log(z)) - (lmx + std::log(lz));
        s += draw[off + static_cast<std::size_t>(classes[r * D + d])] - log_mix;
      }
      y[r] += s / n_mc;
    }
  }
  const std::size_t li = logits.id;
  return logits.graph->record(std::move(y), {li}, [=, p = std::move(p), resp = std::move(resp)](Graph& g, std::size_t self) {
    Tensor* gl = g.grad_buffer(li);
    if (!gl) return;
    const Tensor& gy = g.grad(self);
    for (std::size_t r = 0; r < B; ++r)
      for (std::size_t i = r * DK; i < (r + 1) * DK; ++i) (*gl)[i] += gy[r] * (p[i] - resp[i]);
  });
}

}  // namespace paramrel::nn
