#pragma once

// Margin BCE plus L2 weight penalty.

#include <cmath>
#include <span>
#include <vector>

#include "unisync/graph.hpp"
#include "unisync/model.hpp"

namespace unisync {

struct LossConfig {
  double lambda = 1e-4;
  double clamp_eps = 1e-7;
};

inline void validate(const LossConfig& c) {
  UNISYNC_CHECK(c.lambda >= 0 && std::isfinite(c.lambda), ErrorKind::config, "lambda must be >= 0");
  UNISYNC_CHECK(c.clamp_eps > 0 && c.clamp_eps < 1e-3, ErrorKind::config, "clamp_eps must lie in (0, 1e-3)");
}

/// -(1/N) sum[y log p + (1-y) log(1 - max(0, p - m))], log arguments clamped
/// at clamp_eps.
inline double margin_bce(std::span<const double> p, std::span<const int> y, std::span<const double> m,
                         double clamp_eps = 1e-7) {
  UNISYNC_CHECK(!p.empty() && p.size() == y.size() && p.size() == m.size(), ErrorKind::shape,
                "margin_bce needs equal, non-empty p/y/m");
  double total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    UNISYNC_CHECK(p[i] >= 0 && p[i] <= 1, ErrorKind::range, "margin_bce probability outside [0,1]");
    UNISYNC_CHECK(y[i] == 0 || y[i] == 1, ErrorKind::range, "labels must be 0 or 1");
    UNISYNC_CHECK(m[i] >= 0 && m[i] < 1, ErrorKind::range, "margins must lie in [0,1)");
    UNISYNC_CHECK(y[i] == 0 || m[i] == 0, ErrorKind::range, "positives carry no margin");
    if (y[i] == 1)
      total -= std::log(std::max(p[i], clamp_eps));
    else
      total -= std::log(std::max(1.0 - std::max(0.0, p[i] - m[i]), clamp_eps));
  }
  return total / static_cast<double>(p.size());
}

/// lambda * sum of squared entries of conv/linear weights.
template <class T>
double l2_penalty(const BasicModelWeights<T>& w, double lambda) {
  double s = 0;
  for (const auto& e : w.entries)
    if (e.role == ParamRole::weight)
      for (T v : e.value.values()) s += static_cast<double>(v) * static_cast<double>(v);
  return lambda * s;
}

/// margin_bce(p) + l2 over the weight leaves in `params`. Labels and margins
/// are per row of `p`.
template <class T, class W>
NodeId total_loss(Graph<T>& g, NodeId p, const std::vector<int>& labels, const std::vector<double>& margins,
                  ParamNodes<T>& params, W& weights, const LossConfig& cfg) {
  validate(cfg);
  UNISYNC_CHECK(labels.size() == margins.size(), ErrorKind::shape, "labels/margins length mismatch");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    UNISYNC_CHECK(labels[i] == 0 || labels[i] == 1, ErrorKind::range, "labels must be 0 or 1");
    UNISYNC_CHECK(margins[i] >= 0 && margins[i] < 1, ErrorKind::range, "margins must lie in [0,1)");
    UNISYNC_CHECK(labels[i] == 0 || margins[i] == 0, ErrorKind::range, "positives carry no margin");
  }
  const NodeId bce = ops::margin_bce(g, p, labels, std::vector<T>(margins.begin(), margins.end()),
                                     static_cast<T>(cfg.clamp_eps));
  if (cfg.lambda == 0) return bce;
  std::vector<NodeId> ws;
  for (std::size_t i = 0; i < weights.entries.size(); ++i)
    if (weights.entries[i].role == ParamRole::weight) ws.push_back(params.get(weights, i));
  return ops::add(g, bce, ops::sum_squares(g, std::move(ws), static_cast<T>(cfg.lambda)));
}

}  // namespace unisync
