#pragma once

// Tape-based reverse-mode differentiation over the encoder's operator set.
// Nodes are appended in execution order, so the tape is topologically sorted
// by construction and backward() is a single reverse sweep.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "unisync/kernels.hpp"
#include "unisync/tensor.hpp"

namespace unisync {

enum class OpKind {
  leaf,
  conv2d,
  batchnorm2d,
  relu,
  adaptive_avg_pool2d,
  linear,
  reshape,
  add,
  scale,
  sum,
  cosine_rows,
  margin_bce,
  sum_squares,
};

using NodeId = std::size_t;

template <class T>
class Graph {
 public:
  using Value = BasicTensor<T>;
  using BackwardFn = std::function<void(Graph&, NodeId)>;

  struct Node {
    OpKind kind = OpKind::leaf;
    std::vector<NodeId> inputs;
    Value value;
    std::optional<Value> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  NodeId leaf(Value v, bool requires_grad = false) {
    Node n;
    n.value = std::move(v);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  NodeId push(OpKind kind, std::vector<NodeId> inputs, Value value, BackwardFn backward) {
    Node n;
    n.kind = kind;
    for (NodeId i : inputs) {
      UNISYNC_CHECK(i < nodes_.size(), ErrorKind::shape, "graph input refers to a later node");
      n.requires_grad = n.requires_grad || nodes_[i].requires_grad;
    }
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  const Value& value(NodeId id) const { return nodes_.at(id).value; }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }

  /// Gradient slot for accumulation; allocated on first use.
  Value& grad_slot(NodeId id) {
    auto& n = nodes_.at(id);
    if (!n.grad) n.grad.emplace(n.value.dims(), T(0));
    return *n.grad;
  }

  /// Accumulated gradient, or zeros if nothing flowed into the node.
  Value grad(NodeId id) const {
    const auto& n = nodes_.at(id);
    return n.grad ? *n.grad : Value(n.value.dims(), T(0));
  }

  void backward(NodeId loss) {
    UNISYNC_CHECK(loss < nodes_.size(), ErrorKind::shape, "unknown loss node");
    UNISYNC_CHECK(nodes_[loss].value.size() == 1, ErrorKind::shape,
                  "backward needs a scalar loss, got " + dims_to_string(nodes_[loss].value.dims()));
    for (auto& n : nodes_) n.grad.reset();
    grad_slot(loss)[0] = T(1);
    for (std::size_t i = loss + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.requires_grad || !n.grad || !n.backward) continue;
      n.backward(*this, i);
    }
  }

 private:
  std::vector<Node> nodes_;
};

namespace ops {

template <class T>
NodeId conv2d(Graph<T>& g, NodeId x, NodeId w, NodeId b, kernels::Conv2dParams p) {
  auto out = kernels::conv2d(g.value(x), g.value(w), g.value(b), p);
  return g.push(OpKind::conv2d, {x, w, b}, std::move(out), [x, w, b, p](Graph<T>& gr, NodeId self) {
    const auto& go = *gr.node(self).grad;
    auto* gx = gr.requires_grad(x) ? &gr.grad_slot(x) : nullptr;
    auto* gw = gr.requires_grad(w) ? &gr.grad_slot(w) : nullptr;
    auto* gb = gr.requires_grad(b) ? &gr.grad_slot(b) : nullptr;
    kernels::conv2d_backward(gr.value(x), gr.value(w), go, p, gx, gw, gb);
  });
}

/// Train-mode batchnorm: batch statistics, running stats updated in place
/// during the forward pass.
template <class T>
NodeId batchnorm2d_train(Graph<T>& g, NodeId x, NodeId gamma, NodeId beta, BasicTensor<T>& running_mean,
                         BasicTensor<T>& running_var, T eps = T(1e-5), T momentum = T(0.1)) {
  auto cache = std::make_shared<kernels::BatchNormCache<T>>();
  auto out = kernels::batchnorm2d_train(g.value(x), g.value(gamma), g.value(beta), running_mean, running_var, eps,
                                        momentum, *cache);
  return g.push(OpKind::batchnorm2d, {x, gamma, beta}, std::move(out),
                [x, gamma, beta, cache](Graph<T>& gr, NodeId self) {
                  const auto& go = *gr.node(self).grad;
                  kernels::batchnorm2d_train_backward(gr.value(gamma), *cache, go,
                                                      gr.requires_grad(x) ? &gr.grad_slot(x) : nullptr,
                                                      gr.requires_grad(gamma) ? &gr.grad_slot(gamma) : nullptr,
                                                      gr.requires_grad(beta) ? &gr.grad_slot(beta) : nullptr);
                });
}

/// Eval-mode batchnorm: normalizes with the given running stats.
template <class T>
NodeId batchnorm2d_eval(Graph<T>& g, NodeId x, NodeId gamma, NodeId beta, const BasicTensor<T>& running_mean,
                        const BasicTensor<T>& running_var, T eps = T(1e-5)) {
  auto out = kernels::batchnorm2d_eval(g.value(x), g.value(gamma), g.value(beta), running_mean, running_var, eps);
  return g.push(OpKind::batchnorm2d, {x, gamma, beta}, std::move(out),
                [x, gamma, beta, rm = running_mean, rv = running_var, eps](Graph<T>& gr, NodeId self) {
                  const auto& go = *gr.node(self).grad;
                  kernels::batchnorm2d_eval_backward(gr.value(x), gr.value(gamma), rm, rv, eps, go,
                                                     gr.requires_grad(x) ? &gr.grad_slot(x) : nullptr,
                                                     gr.requires_grad(gamma) ? &gr.grad_slot(gamma) : nullptr,
                                                     gr.requires_grad(beta) ? &gr.grad_slot(beta) : nullptr);
                });
}

template <class T>
NodeId relu(Graph<T>& g, NodeId x) {
  auto out = kernels::relu(g.value(x));
  return g.push(OpKind::relu, {x}, std::move(out), [x](Graph<T>& gr, NodeId self) {
    kernels::relu_backward(gr.value(x), *gr.node(self).grad, gr.grad_slot(x));
  });
}

template <class T>
NodeId adaptive_avg_pool2d(Graph<T>& g, NodeId x, std::size_t out_h, std::size_t out_w) {
  auto out = kernels::adaptive_avg_pool2d(g.value(x), out_h, out_w);
  return g.push(OpKind::adaptive_avg_pool2d, {x}, std::move(out), [x](Graph<T>& gr, NodeId self) {
    kernels::adaptive_avg_pool2d_backward(*gr.node(self).grad, gr.grad_slot(x));
  });
}

template <class T>
NodeId linear(Graph<T>& g, NodeId x, NodeId w, NodeId b) {
  auto out = kernels::linear(g.value(x), g.value(w), g.value(b));
  return g.push(OpKind::linear, {x, w, b}, std::move(out), [x, w, b](Graph<T>& gr, NodeId self) {
    kernels::linear_backward(gr.value(x), gr.value(w), *gr.node(self).grad,
                             gr.requires_grad(x) ? &gr.grad_slot(x) : nullptr,
                             gr.requires_grad(w) ? &gr.grad_slot(w) : nullptr,
                             gr.requires_grad(b) ? &gr.grad_slot(b) : nullptr);
  });
}

template <class T>
NodeId reshape(Graph<T>& g, NodeId x, Dims dims) {
  auto out = g.value(x).reshaped(std::move(dims));
  return g.push(OpKind::reshape, {x}, std::move(out), [x](Graph<T>& gr, NodeId self) {
    const auto& go = *gr.node(self).grad;
    auto& gx = gr.grad_slot(x);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
  });
}

/// Elementwise sum of equal-shape tensors (used for residual skips and loss terms).
template <class T>
NodeId add(Graph<T>& g, NodeId a, NodeId b) {
  const auto& va = g.value(a);
  const auto& vb = g.value(b);
  UNISYNC_CHECK(va.dims() == vb.dims(), ErrorKind::shape,
                "add needs equal dims, got " + dims_to_string(va.dims()) + " and " + dims_to_string(vb.dims()));
  BasicTensor<T> out(va.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
  return g.push(OpKind::add, {a, b}, std::move(out), [a, b](Graph<T>& gr, NodeId self) {
    const auto& go = *gr.node(self).grad;
    for (NodeId in : {a, b}) {
      if (!gr.requires_grad(in)) continue;
      auto& gi = gr.grad_slot(in);
      for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i];
    }
  });
}

template <class T>
NodeId scale(Graph<T>& g, NodeId x, T c) {
  BasicTensor<T> out = g.value(x);
  for (auto& v : out.values()) v *= c;
  return g.push(OpKind::scale, {x}, std::move(out), [x, c](Graph<T>& gr, NodeId self) {
    const auto& go = *gr.node(self).grad;
    auto& gx = gr.grad_slot(x);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += c * go[i];
  });
}

template <class T>
NodeId sum(Graph<T>& g, NodeId x) {
  T s = 0;
  for (T v : g.value(x).values()) s += v;
  return g.push(OpKind::sum, {x}, BasicTensor<T>({1}, {s}), [x](Graph<T>& gr, NodeId self) {
    const T go = (*gr.node(self).grad)[0];
    for (auto& v : gr.grad_slot(x).values()) v += go;
  });
}

/// Row-wise cosine similarity of two [N,D] tensors -> [N]. A row with zero
/// norm on either side yields 0 and passes no gradient.
template <class T>
NodeId cosine_rows(Graph<T>& g, NodeId a, NodeId v) {
  const auto& va = g.value(a);
  const auto& vv = g.value(v);
  UNISYNC_CHECK(va.ndim() == 2 && va.dims() == vv.dims(), ErrorKind::shape,
                "cosine_rows needs equal [N,D] inputs, got " + dims_to_string(va.dims()) + " and " +
                    dims_to_string(vv.dims()));
  const std::size_t n = va.dim(0), d = va.dim(1);
  BasicTensor<T> out({n});
  auto norms = std::make_shared<std::vector<T>>(2 * n);
  for (std::size_t r = 0; r < n; ++r) {
    T dot = 0, na = 0, nv = 0;
    for (std::size_t i = 0; i < d; ++i) {
      dot += va[r * d + i] * vv[r * d + i];
      na += va[r * d + i] * va[r * d + i];
      nv += vv[r * d + i] * vv[r * d + i];
    }
    na = std::sqrt(na);
    nv = std::sqrt(nv);
    (*norms)[2 * r] = na;
    (*norms)[2 * r + 1] = nv;
    out[r] = (na > T(0) && nv > T(0)) ? std::clamp(dot / (na * nv), T(-1), T(1)) : T(0);
  }
  return g.push(OpKind::cosine_rows, {a, v}, std::move(out), [a, v, norms, d](Graph<T>& gr, NodeId self) {
    const auto& go = *gr.node(self).grad;
    const auto& p = gr.value(self);
    const auto& xa = gr.value(a);
    const auto& xv = gr.value(v);
    auto* ga = gr.requires_grad(a) ? &gr.grad_slot(a) : nullptr;
    auto* gv = gr.requires_grad(v) ? &gr.grad_slot(v) : nullptr;
    for (std::size_t r = 0; r < go.size(); ++r) {
      const T na = (*norms)[2 * r], nv = (*norms)[2 * r + 1];
      if (!(na > T(0) && nv > T(0))) continue;
      const T inv = T(1) / (na * nv);
      for (std::size_t i = 0; i < d; ++i) {
        const std::size_t k = r * d + i;
        if (ga) (*ga)[k] += go[r] * (xv[k] * inv - p[r] * xa[k] / (na * na));
        if (gv) (*gv)[k] += go[r] * (xa[k] * inv - p[r] * xv[k] / (nv * nv));
      }
    }
  });
}

/// Mean over samples of -[y log p + (1-y) log(1 - max(0, p - m))], with each
/// log argument clamped below at clamp_eps. Clamped or hinge-inactive
/// samples pass zero gradient.
template <class T>
NodeId margin_bce(Graph<T>& g, NodeId p, std::vector<int> labels, std::vector<T> margins, T clamp_eps) {
  const auto& vp = g.value(p);
  const std::size_t n = vp.size();
  UNISYNC_CHECK(n >= 1 && labels.size() == n && margins.size() == n, ErrorKind::shape,
                "margin_bce length mismatch");
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    UNISYNC_CHECK(vp[i] >= T(0) && vp[i] <= T(1), ErrorKind::range, "margin_bce probability outside [0,1]");
    if (labels[i] == 1) {
      total -= std::log(std::max(vp[i], clamp_eps));
    } else {
      const T q = std::max(T(0), vp[i] - margins[i]);
      total -= std::log(std::max(T(1) - q, clamp_eps));
    }
  }
  const T loss = total / static_cast<T>(n);
  return g.push(OpKind::margin_bce, {p}, BasicTensor<T>({1}, {loss}),
                [p, labels = std::move(labels), margins = std::move(margins), clamp_eps](Graph<T>& gr, NodeId self) {
                  const T go = (*gr.node(self).grad)[0];
                  const auto& vp = gr.value(p);
                  auto& gp = gr.grad_slot(p);
                  const T inv_n = T(1) / static_cast<T>(vp.size());
                  for (std::size_t i = 0; i < vp.size(); ++i) {
                    if (labels[i] == 1) {
                      if (vp[i] > clamp_eps) gp[i] -= go * inv_n / vp[i];
                    } else {
                      const T q = vp[i] - margins[i];
                      if (q > T(0) && T(1) - q > clamp_eps) gp[i] += go * inv_n / (T(1) - q);
                    }
                  }
                });
}

/// coeff * sum of squared entries over all inputs.
template <class T>
NodeId sum_squares(Graph<T>& g, std::vector<NodeId> xs, T coeff) {
  T s = 0;
  for (NodeId x : xs)
    for (T v : g.value(x).values()) s += v * v;
  return g.push(OpKind::sum_squares, xs, BasicTensor<T>({1}, {coeff * s}), [xs, coeff](Graph<T>& gr, NodeId self) {
    const T go = (*gr.node(self).grad)[0];
    for (NodeId x : xs) {
      if (!gr.requires_grad(x)) continue;
      const auto& v = gr.value(x);
      auto& gx = gr.grad_slot(x);
      for (std::size_t i = 0; i < v.size(); ++i) gx[i] += T(2) * coeff * go * v[i];
    }
  });
}

}  // namespace ops
}  // namespace unisync
