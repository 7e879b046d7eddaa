#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "cmo/flow.hpp"
#include "cmo/policy.hpp"

namespace cmo {

struct PpoConfig {
  double clip_eps = 0.1;
  double beta = 0.015;
  double noise_level = 0.8;  // sigma_t of the KL term
  double dt = 0.1;
};

struct PpoStats {
  double objective = 0.0;
  double max_ratio_deviation = 0.0;  // max |r - 1|
  double clip_fraction = 0.0;
  double mean_kl = 0.0;
  std::size_t terms = 0;
};

/// Clipped surrogate with KL penalty, averaged over stochastic steps per
/// trajectory and then over trajectories. Old-policy log-probs and means come
/// from the trajectory records. If `grad` is non-empty the gradient of the
/// objective with respect to params.theta is accumulated into it. With
/// `only_step` set, just that step index enters the average.
inline PpoStats ppo_gradient(const PolicyParams& params, std::span<const Trajectory> trajectories,
                             std::span<const double> advantages, const PpoConfig& cfg,
                             std::span<double> grad = {}, std::optional<int> only_step = std::nullopt) {
  if (trajectories.size() != advantages.size())
    throw std::invalid_argument("ppo_gradient: one advantage per trajectory required");
  if (trajectories.empty()) throw std::invalid_argument("ppo_gradient: no trajectories");
  if (!grad.empty() && grad.size() != params.theta.size())
    throw std::invalid_argument("ppo_gradient: gradient buffer size mismatch");

  const auto D = static_cast<std::size_t>(params.shape.latent_dim);
  const double N = static_cast<double>(trajectories.size());
  const double g2dt = cfg.noise_level * cfg.noise_level * cfg.dt;
  PpoStats stats;
  std::size_t clipped = 0;
  VelocityCache cache;
  std::vector<double> v(D), mean(D), dmean(D);

  for (std::size_t j = 0; j < trajectories.size(); ++j) {
    const Trajectory& tr = trajectories[j];
    const double adv = advantages[j];
    if (!std::isfinite(adv)) throw std::invalid_argument("ppo_gradient: non-finite advantage");
    std::size_t n_steps = 0;
    for (const auto& s : tr.steps)
      if (s.stochastic && (!only_step || s.index == *only_step)) ++n_steps;
    if (n_steps == 0) throw std::invalid_argument("ppo_gradient: trajectory has no stochastic step to train on");
    const double scale = 1.0 / (N * static_cast<double>(n_steps));

    for (const auto& s : tr.steps) {
      if (!s.stochastic || (only_step && s.index != *only_step)) continue;
      if (!s.log_prob) throw std::invalid_argument("ppo_gradient: stochastic step without log-prob (zero noise)");
      const auto& x = tr.states[static_cast<std::size_t>(s.index)];
      const auto& next = tr.states[static_cast<std::size_t>(s.index) + 1];

      velocity(params, x, s.t, tr.conditioning, v, grad.empty() ? nullptr : &cache);
      transition_mean(x, s.t, cfg.dt, v, cfg.noise_level, mean);
      const double logp = transition_logprob(mean, s.std, next);
      const double ratio = std::exp(logp - *s.log_prob);
      const double clipped_ratio = std::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
      const double unclipped_obj = ratio * adv;
      const double clipped_obj = clipped_ratio * adv;
      const bool through_ratio = unclipped_obj <= clipped_obj;
      const double kl = cfg.beta != 0.0 ? kl_penalty(mean, s.mean, cfg.noise_level, cfg.dt) : 0.0;

      stats.objective += scale * (std::min(unclipped_obj, clipped_obj) - cfg.beta * kl);
      stats.max_ratio_deviation = std::max(stats.max_ratio_deviation, std::abs(ratio - 1.0));
      stats.mean_kl += kl;
      clipped += through_ratio ? 0 : 1;
      ++stats.terms;

      if (grad.empty()) continue;
      // d/d(mean) of the step term, then chain through mean = f(v).
      const double d_ratio = through_ratio ? adv * ratio : 0.0;
      const double inv_var = 1.0 / (s.std * s.std);
      const double dm_dv = transition_mean_dv(s.t, cfg.dt, cfg.noise_level);
      for (std::size_t i = 0; i < D; ++i) {
        const double d_logp = (next[i] - mean[i]) * inv_var;
        const double d_kl = (mean[i] - s.mean[i]) / g2dt;
        dmean[i] = scale * dm_dv * (d_ratio * d_logp - cfg.beta * d_kl);
      }
      velocity_backward(params, cache, dmean, grad);
    }
  }
  if (stats.terms > 0) {
    stats.mean_kl /= static_cast<double>(stats.terms);
    stats.clip_fraction = static_cast<double>(clipped) / static_cast<double>(stats.terms);
  }
  return stats;
}

}  // namespace cmo
