#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "unisync/tensor.hpp"

namespace unisync {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Coupled L2: grad += weight_decay * w. Leave at 0 when the loss already
  // carries the L2 term.
  double weight_decay = 0.0;
};

template <class T>
struct BasicAdamState {
  std::uint64_t step = 0;
  std::vector<BasicTensor<T>> m;
  std::vector<BasicTensor<T>> v;

  static BasicAdamState zeros_like(std::span<const BasicTensor<T>> params) {
    BasicAdamState s;
    for (const auto& p : params) {
      s.m.emplace_back(p.dims(), T(0));
      s.v.emplace_back(p.dims(), T(0));
    }
    return s;
  }
};

using AdamState = BasicAdamState<float>;

inline void validate(const AdamConfig& c) {
  UNISYNC_CHECK(c.lr > 0, ErrorKind::config, "adam learning rate must be > 0");
  UNISYNC_CHECK(c.beta1 >= 0 && c.beta1 < 1 && c.beta2 >= 0 && c.beta2 < 1, ErrorKind::config,
                "adam betas must lie in [0,1)");
  UNISYNC_CHECK(c.eps > 0 && c.weight_decay >= 0, ErrorKind::config, "adam eps must be > 0, weight_decay >= 0");
}

/// One bias-corrected Adam update. Moment arithmetic is carried out in double
/// and stored back at T.
template <class T>
void adam_step(std::span<BasicTensor<T>> params, std::span<const BasicTensor<T>> grads, BasicAdamState<T>& state,
               const AdamConfig& config) {
  validate(config);
  UNISYNC_CHECK(params.size() == grads.size() && params.size() == state.m.size() && params.size() == state.v.size(),
                ErrorKind::shape, "adam parameter/gradient/state count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    UNISYNC_CHECK(params[i].dims() == grads[i].dims() && params[i].dims() == state.m[i].dims() &&
                      params[i].dims() == state.v[i].dims(),
                  ErrorKind::shape, "adam shape mismatch at parameter " + std::to_string(i));
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = static_cast<double>(g[k]) + config.weight_decay * static_cast<double>(p[k]);
      const double mk = config.beta1 * static_cast<double>(m[k]) + (1.0 - config.beta1) * gk;
      const double vk = config.beta2 * static_cast<double>(v[k]) + (1.0 - config.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double update = config.lr * (mk / bc1) / (std::sqrt(vk / bc2) + config.eps);
      p[k] = static_cast<T>(static_cast<double>(p[k]) - update);
    }
  }
}

}  // namespace unisync
