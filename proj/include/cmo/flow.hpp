#pragma once

// Rectified-flow sampling with a stochastic window. Time runs from t = 0
// (noise) to t = 1 (data) along x_t = t * x1 + (1 - t) * x0, x0 ~ N(0, I).

#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "cmo/policy.hpp"
#include "cmo/rng.hpp"

namespace cmo {

struct SamplerConfig {
  int total_steps = 10;
  int sde_steps = 3;
  int window_start = 0;
  double noise_level = 0.8;

  double dt() const { return 1.0 / static_cast<double>(total_steps); }
  double time(int m) const { return static_cast<double>(m) / static_cast<double>(total_steps); }
  bool in_window(int m) const { return m >= window_start && m < window_start + sde_steps; }

  void validate() const {
    if (total_steps < 1) throw std::invalid_argument("sampler: total_steps must be >= 1");
    if (sde_steps < 0 || sde_steps > total_steps) throw std::invalid_argument("sampler: sde_steps must be in [0, T]");
    if (window_start < 0 || window_start + sde_steps > total_steps)
      throw std::invalid_argument("sampler: window must lie inside [0, T)");
    if (!(noise_level >= 0.0) || !std::isfinite(noise_level))
      throw std::invalid_argument("sampler: noise_level must be >= 0");
  }
};

inline constexpr double kScoreTimeMargin = 1e-3;

/// Score of x_t implied by a velocity prediction: x1_hat = x + (1 - t) v and
/// x_t | x1 ~ N(t x1, (1 - t)^2 I) give s = -(x - t v) / (1 - t).
inline void score_from_velocity(std::span<const double> x, double t, std::span<const double> v,
                                std::span<double> out) {
  if (!(t <= 1.0 - kScoreTimeMargin)) throw std::invalid_argument("score_from_velocity: t too close to 1");
  const double inv = 1.0 / (1.0 - t);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = -(x[i] - t * v[i]) * inv;
}

inline std::vector<double> score_from_velocity(std::span<const double> x, double t, std::span<const double> v) {
  std::vector<double> s(x.size());
  score_from_velocity(x, t, v, s);
  return s;
}

inline std::vector<double> ode_step(std::span<const double> x, double dt, std::span<const double> v) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + v[i] * dt;
  return out;
}

struct SdeStep {
  std::vector<double> next;
  std::vector<double> mean;
  double std = 0.0;
};

/// Euler-Maruyama step of dx = [v + g^2/2 s] dt + g dw.
inline SdeStep sde_step(std::span<const double> x, double dt, std::span<const double> v,
                        std::span<const double> score, double g, std::span<const double> noise) {
  if (!(g >= 0.0)) throw std::invalid_argument("sde_step: g must be >= 0");
  SdeStep out{std::vector<double>(x.size()), std::vector<double>(x.size()), g * std::sqrt(dt)};
  const double half_g2 = 0.5 * g * g;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out.mean[i] = x[i] + (v[i] + half_g2 * score[i]) * dt;
    out.next[i] = out.mean[i] + out.std * noise[i];
  }
  return out;
}

/// Transition mean as a function of the velocity only; the same arithmetic
/// as sampling, so recomputed log-probs match recorded ones bit for bit.
inline void transition_mean(std::span<const double> x, double t, double dt, std::span<const double> v, double g,
                            std::span<double> mean) {
  if (!(t <= 1.0 - kScoreTimeMargin)) throw std::invalid_argument("transition_mean: t too close to 1");
  const double inv = 1.0 / (1.0 - t);
  const double half_g2 = 0.5 * g * g;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s = -(x[i] - t * v[i]) * inv;
    mean[i] = x[i] + (v[i] + half_g2 * s) * dt;
  }
}

/// d(mean_i)/d(v_i), identical for all components.
inline double transition_mean_dv(double t, double dt, double g) {
  return dt * (1.0 + 0.5 * g * g * t / (1.0 - t));
}

inline double transition_logprob(std::span<const double> mean, double std, std::span<const double> next) {
  if (!(std > 0.0)) throw std::invalid_argument("transition_logprob: std must be > 0");
  double sq = 0.0;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    const double z = (next[i] - mean[i]) / std;
    sq += z * z;
  }
  const double n = static_cast<double>(mean.size());
  return -0.5 * sq - n * std::log(std) - 0.5 * n * std::log(2.0 * std::numbers::pi);
}

inline double kl_penalty(std::span<const double> mean_new, std::span<const double> mean_old, double sigma_t,
                         double dt) {
  if (!(sigma_t > 0.0)) throw std::invalid_argument("kl_penalty: sigma_t must be > 0");
  if (!(dt > 0.0)) throw std::invalid_argument("kl_penalty: dt must be > 0");
  double sq = 0.0;
  for (std::size_t i = 0; i < mean_new.size(); ++i) {
    const double d = mean_new[i] - mean_old[i];
    sq += d * d;
  }
  return sq / (2.0 * sigma_t * sigma_t * dt);
}

// ---------------------------------------------------------------------------

struct StepRecord {
  int index = 0;
  double t = 0.0;
  bool stochastic = false;
  // Stochastic steps only.
  std::vector<double> mean;
  std::vector<double> noise;
  double std = 0.0;
  std::optional<double> log_prob;  // empty when std == 0
};

struct Trajectory {
  std::vector<std::vector<double>> states;  // x_0 .. x_T
  std::vector<StepRecord> steps;
  std::vector<double> conditioning;

  const std::vector<double>& terminal() const { return states.back(); }
  std::size_t num_logprobs() const {
    std::size_t n = 0;
    for (const auto& s : steps) n += s.log_prob.has_value();
    return n;
  }
};

/// Samples from a given x0. `field(x, t, v_out)` evaluates the velocity.
template <class Field>
Trajectory sample_trajectory_from(Field&& field, std::vector<double> x0, std::span<const double> c,
                                  const SamplerConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t d = x0.size();
  const double dt = cfg.dt();
  Trajectory tr;
  tr.conditioning.assign(c.begin(), c.end());
  tr.states.reserve(static_cast<std::size_t>(cfg.total_steps) + 1);
  tr.states.push_back(std::move(x0));
  tr.steps.reserve(static_cast<std::size_t>(cfg.total_steps));
  std::vector<double> v(d), score(d), noise(d);
  for (int m = 0; m < cfg.total_steps; ++m) {
    const auto& x = tr.states.back();
    const double t = cfg.time(m);
    field(std::span<const double>(x), t, std::span<double>(v));
    StepRecord rec;
    rec.index = m;
    rec.t = t;
    if (cfg.in_window(m)) {
      for (double& e : noise) e = rng.normal();
      score_from_velocity(x, t, v, score);
      SdeStep s = sde_step(x, dt, v, score, cfg.noise_level, noise);
      rec.stochastic = true;
      rec.std = s.std;
      if (s.std > 0.0) rec.log_prob = transition_logprob(s.mean, s.std, s.next);
      rec.mean = std::move(s.mean);
      rec.noise = noise;
      tr.steps.push_back(std::move(rec));
      tr.states.push_back(std::move(s.next));
    } else {
      tr.steps.push_back(std::move(rec));
      tr.states.push_back(ode_step(x, dt, v));
    }
  }
  return tr;
}

template <class Field>
Trajectory sample_trajectory(Field&& field, std::size_t dim, std::span<const double> c, const SamplerConfig& cfg,
                             Rng& rng) {
  std::vector<double> x0(dim);
  for (double& e : x0) e = rng.normal();
  return sample_trajectory_from(std::forward<Field>(field), std::move(x0), c, cfg, rng);
}

inline auto policy_field(const PolicyParams& p, std::span<const double> c) {
  return [&p, c](std::span<const double> x, double t, std::span<double> v) { velocity(p, x, t, c, v); };
}

inline Trajectory sample_trajectory(const PolicyParams& p, std::span<const double> c, const SamplerConfig& cfg,
                                    Rng& rng) {
  return sample_trajectory(policy_field(p, c), static_cast<std::size_t>(p.shape.latent_dim), c, cfg, rng);
}

}  // namespace cmo
