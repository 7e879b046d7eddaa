#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace cmo {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct AdamWState {
  std::vector<double> m;
  std::vector<double> v;
  long long step = 0;

  friend bool operator==(const AdamWState&, const AdamWState&) = default;
};

/// One AdamW step in the ascent direction of the objective whose gradient is
/// given. Returns false and leaves params/state untouched if the gradient is
/// not finite.
inline bool apply_update(std::span<double> params, std::span<const double> grad, const AdamWConfig& cfg,
                         AdamWState& state) {
  if (grad.size() != params.size()) throw std::invalid_argument("apply_update: gradient size mismatch");
  for (double g : grad)
    if (!std::isfinite(g)) return false;
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grad[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= cfg.lr * cfg.weight_decay * params[i];
    params[i] += cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
  return true;
}

}  // namespace cmo
