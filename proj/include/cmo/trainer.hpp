#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "cmo/advantage.hpp"
#include "cmo/bench.hpp"
#include "cmo/correlation.hpp"
#include "cmo/flow.hpp"
#include "cmo/optimizer.hpp"
#include "cmo/policy.hpp"
#include "cmo/ppo.hpp"
#include "cmo/rewards.hpp"
#include "cmo/rng.hpp"
#include "cmo/scene.hpp"

namespace cmo {

/// How concept rewards become one scalar advantage per sample.
///  naive_sum: sum rewards first, one group normalization (GRPO-style).
///  uniform:   normalize each concept, average with w = 1/K (GDPO-style).
///  cmo:       normalize each concept, weight by correlation difficulty.
enum class Aggregation { cmo, uniform, naive_sum };

inline const char* to_string(Aggregation a) {
  switch (a) {
    case Aggregation::cmo: return "cmo";
    case Aggregation::uniform: return "uniform";
    case Aggregation::naive_sum: return "naive-sum";
  }
  return "?";
}

inline Aggregation aggregation_from_string(const std::string& s) {
  if (s == "cmo") return Aggregation::cmo;
  if (s == "uniform") return Aggregation::uniform;
  if (s == "naive-sum" || s == "naive_sum") return Aggregation::naive_sum;
  throw std::invalid_argument("unknown aggregation mode '" + s + "' (expected cmo, uniform or naive-sum)");
}

struct TrainConfig {
  std::uint64_t seed = 0;
  int iterations = 200;
  int batch_prompts = 8;
  int group_size = 16;
  Aggregation aggregation = Aggregation::cmo;
  double tau = 0.5;
  double beta = 0.015;
  double clip_eps = 0.1;
  AdamWConfig adam{};
  SamplerConfig sampler{};
  int window_shift_every = 0;  // experimental; 0 keeps the window fixed
  RewardConfig reward{};
  double corr_eps_std = kDefaultStdEps;
  double norm_eps = 1e-8;
  int hidden = 64;
  std::uint64_t codebook_seed = 0;
  // Training prompt pool: single-attribute (k = 1) vs multi-concept (k in [2, train_kmax]).
  int pool_size = 5000;
  double single_ratio = 0.5;
  int train_kmax = 5;
  int workers = 1;

  void validate() const {
    auto fail = [](const std::string& key, const std::string& why) {
      throw std::invalid_argument(key + ": " + why);
    };
    if (iterations < 0) fail("iterations", "must be >= 0");
    if (batch_prompts < 1) fail("batch_prompts", "must be >= 1");
    if (group_size < 2) fail("group_size", "must be >= 2");
    if (!(tau > 0.0)) fail("tau", "must be > 0");
    if (!(beta >= 0.0)) fail("beta", "must be >= 0");
    if (!(clip_eps > 0.0 && clip_eps < 1.0)) fail("clip_eps", "must be in (0, 1)");
    if (!(adam.lr > 0.0)) fail("lr", "must be > 0");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) fail("adam_beta1", "must be in [0, 1)");
    if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) fail("adam_beta2", "must be in [0, 1)");
    if (!(adam.eps > 0.0)) fail("adam_eps", "must be > 0");
    if (!(adam.weight_decay >= 0.0)) fail("weight_decay", "must be >= 0");
    sampler.validate();
    if (sampler.sde_steps < 1) fail("sde_steps", "training needs at least one stochastic step");
    if (!(sampler.noise_level > 0.0)) fail("noise_level", "training needs noise_level > 0");
    if (window_shift_every < 0) fail("window_shift_every", "must be >= 0");
    if (!(reward.margin_frac >= 0.0)) fail("margin_frac", "must be >= 0");
    if (!(reward.depth_eps >= 0.0)) fail("depth_eps", "must be >= 0");
    if (!(reward.inside_threshold > 0.0 && reward.inside_threshold <= 1.0)) fail("inside_threshold", "must be in (0, 1]");
    if (!(reward.outside_threshold > 0.0 && reward.outside_threshold <= 1.0))
      fail("outside_threshold", "must be in (0, 1]");
    if (!(reward.attr_logit_scale > 0.0)) fail("attr_logit_scale", "must be > 0");
    if (!(corr_eps_std > 0.0)) fail("corr_eps_std", "must be > 0");
    if (!(norm_eps > 0.0)) fail("norm_eps", "must be > 0");
    if (hidden < 1) fail("hidden", "must be >= 1");
    if (pool_size < 1) fail("pool_size", "must be >= 1");
    if (!(single_ratio >= 0.0 && single_ratio <= 1.0)) fail("single_ratio", "must be in [0, 1]");
    if (train_kmax < 1 || train_kmax > 7) fail("train_kmax", "must be in [1, 7]");
    if (workers < 1) fail("workers", "must be >= 1");
  }

  PolicyShape policy_shape() const { return {kLatentDim, kCondDim, hidden}; }

  PpoConfig ppo() const { return {clip_eps, beta, sampler.noise_level, sampler.dt()}; }

  /// Sampler for a given iteration, with the window shifted if enabled.
  SamplerConfig sampler_at(int iteration) const {
    SamplerConfig s = sampler;
    if (window_shift_every > 0) {
      const int span = s.total_steps - s.sde_steps + 1;
      s.window_start = (sampler.window_start + iteration / window_shift_every) % span;
    }
    return s;
  }
};

struct TrainerState {
  PolicyParams params;
  AdamWState opt;
  int iteration = 0;  // iterations completed

  static TrainerState initial(const TrainConfig& cfg) {
    return {PolicyParams::init(cfg.policy_shape(), stream_seed(cfg.seed, "init", {})), {}, 0};
  }
};

/// Training prompts: the first round(single_ratio * pool_size) entries are
/// single-attribute prompts (k = 1), the rest have k uniform in [2, train_kmax].
inline std::vector<Prompt> make_prompt_pool(const TrainConfig& cfg, const Codebook& cb) {
  std::vector<Prompt> pool;
  pool.reserve(static_cast<std::size_t>(cfg.pool_size));
  const int n_single = cfg.train_kmax < 2 ? cfg.pool_size
                                          : static_cast<int>(std::lround(cfg.single_ratio * cfg.pool_size));
  for (int n = 0; n < cfg.pool_size; ++n) {
    Rng rng(cfg.seed, "train_pool", {static_cast<std::uint64_t>(n)});
    const int k = n < n_single ? 1 : 2 + static_cast<int>(rng.index(static_cast<std::size_t>(cfg.train_kmax - 1)));
    pool.push_back(gen_prompt(k, rng, cb));
  }
  return pool;
}

inline std::vector<Prompt> sample_batch(std::span<const Prompt> pool, const TrainConfig& cfg, int iteration) {
  Rng rng(cfg.seed, "batch", {static_cast<std::uint64_t>(iteration)});
  std::vector<Prompt> batch;
  for (int i = 0; i < cfg.batch_prompts; ++i) batch.push_back(pool[rng.index(pool.size())]);
  return batch;
}

struct IterationLog {
  int iteration = 0;
  double mean_reward = 0.0;       // over all valid concept rewards
  double full_mark_rate = 0.0;    // samples with every concept on its strict branch
  std::array<double, kConceptTypes> type_mean{};
  std::array<std::size_t, kConceptTypes> type_count{};
  double mean_abs_advantage = 0.0;
  double mean_alpha = 0.0;
  double mean_min_weight = 0.0;
  double mean_max_weight = 0.0;
  double neg_corr_ratio = 0.0;
  bool neg_corr_defined = false;
  double zero_variance_fraction = 0.0;  // saturated (group, concept) columns
  int bypassed_groups = 0;              // padding / invalid-sample bypasses
  int invalid_samples = 0;
  int skipped_updates = 0;
  double first_step_ratio_deviation = 0.0;
  double mean_kl = 0.0;
  double clip_fraction = 0.0;
  double wall_seconds = 0.0;
  std::vector<std::vector<double>> alpha;    // per prompt
  std::vector<std::vector<double>> weights;  // per prompt, as used for aggregation
};

struct NonFiniteParams : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

struct GroupSamples {
  std::vector<Trajectory> trajectories;
  RewardMatrix rewards;
  std::vector<bool> full_mark;
};

inline GroupSamples sample_group(const PolicyParams& params, const Prompt& prompt, const TrainConfig& cfg,
                                 const SamplerConfig& sampler, const Codebook& cb, int iteration, int prompt_index) {
  const auto G = static_cast<std::size_t>(cfg.group_size);
  GroupSamples gs{std::vector<Trajectory>(G), RewardMatrix(G, prompt.size()), std::vector<bool>(G, false)};
  for (std::size_t j = 0; j < G; ++j) {
    Rng rng(cfg.seed, "sample",
            {static_cast<std::uint64_t>(iteration), static_cast<std::uint64_t>(prompt_index), j});
    gs.trajectories[j] = sample_trajectory(params, prompt.conditioning, sampler, rng);
    const RewardVector rv = score_latent(gs.trajectories[j].terminal(), prompt, cb, cfg.reward);
    bool all_pass = true;
    for (std::size_t k = 0; k < prompt.size(); ++k) {
      gs.rewards(j, k) = rv.entries[k].reward;
      gs.rewards.set_valid(j, k, rv.entries[k].valid);
      all_pass = all_pass && pass_concept(prompt.concepts[k], rv.entries[k]);
    }
    gs.full_mark[j] = all_pass;
  }
  return gs;
}

}  // namespace detail

/// One iteration: sample a group per prompt under the current (old) policy,
/// score, weight, compute batch advantages, then one clipped-gradient update
/// per stochastic window step.
inline IterationLog train_iteration(TrainerState& state, const std::vector<Prompt>& batch, const TrainConfig& cfg,
                                    const Codebook& cb) {
  const auto t0 = std::chrono::steady_clock::now();
  const int iteration = state.iteration;
  const SamplerConfig sampler = cfg.sampler_at(iteration);
  const PolicyParams old_params = state.params;
  const std::size_t B = batch.size();

  // Sampling and scoring. Each (prompt, sample) has its own RNG stream, so
  // the split across workers does not change results.
  std::vector<detail::GroupSamples> groups(B);
  const auto workers = static_cast<std::size_t>(std::max(1, std::min<int>(cfg.workers, static_cast<int>(B))));
  if (workers == 1) {
    for (std::size_t i = 0; i < B; ++i)
      groups[i] = detail::sample_group(old_params, batch[i], cfg, sampler, cb, iteration, static_cast<int>(i));
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < B; i += workers)
          groups[i] = detail::sample_group(old_params, batch[i], cfg, sampler, cb, iteration, static_cast<int>(i));
      });
    for (auto& t : pool) t.join();
  }

  IterationLog log;
  log.iteration = iteration;
  std::vector<GroupAdvantages> advs;
  std::vector<ConceptWeights> weights;
  std::vector<RewardMatrix> concept_mats;
  std::size_t n_rewards = 0, n_samples = 0, n_full = 0, n_columns = 0, n_saturated = 0;
  for (std::size_t i = 0; i < B; ++i) {
    const RewardMatrix& R = groups[i].rewards;
    const std::size_t G = R.rows(), K = R.cols();
    for (std::size_t j = 0; j < G; ++j) {
      bool sample_ok = true;
      for (std::size_t k = 0; k < K; ++k) {
        if (!R.valid(j, k)) {
          sample_ok = false;
          continue;
        }
        log.mean_reward += R(j, k);
        ++n_rewards;
        const auto t = static_cast<std::size_t>(batch[i].concepts[k].index());
        log.type_mean[t] += R(j, k);
        ++log.type_count[t];
      }
      log.invalid_samples += sample_ok ? 0 : 1;
      n_full += groups[i].full_mark[j] ? 1 : 0;
      ++n_samples;
    }

    const DifficultyScores alpha = difficulty_scores(R, cfg.corr_eps_std);
    if (alpha.bypass == BypassReason::padding || alpha.bypass == BypassReason::too_few_samples)
      ++log.bypassed_groups;
    const auto moments = column_moments(R);
    for (std::size_t k = 0; k < K; ++k) {
      ++n_columns;
      n_saturated += moments.stddev[k] < cfg.corr_eps_std ? 1 : 0;
    }

    ConceptWeights w;
    if (cfg.aggregation == Aggregation::naive_sum) {
      RewardMatrix S(G, 1);
      for (std::size_t j = 0; j < G; ++j) {
        double s = 0.0;
        bool ok = true;
        for (std::size_t k = 0; k < K; ++k) {
          s += R(j, k);
          ok = ok && R.valid(j, k);
        }
        S(j, 0) = s;
        S.set_valid(j, 0, ok);
      }
      advs.push_back(group_normalize(S, cfg.norm_eps));
      w = uniform_weights(1, cfg.tau);
    } else {
      advs.push_back(group_normalize(R, cfg.norm_eps));
      w = cfg.aggregation == Aggregation::cmo ? concept_weights(alpha.alpha, cfg.tau) : uniform_weights(K, cfg.tau);
    }
    double a_sum = 0.0;
    for (double a : alpha.alpha) a_sum += a;
    log.mean_alpha += a_sum / static_cast<double>(K);
    log.mean_min_weight += *std::min_element(w.w.begin(), w.w.end());
    log.mean_max_weight += *std::max_element(w.w.begin(), w.w.end());
    log.alpha.push_back(alpha.alpha);
    log.weights.push_back(w.w);
    weights.push_back(std::move(w));
    concept_mats.push_back(R);
  }
  const BatchAdvantages batch_adv = weighted_total_advantage(advs, weights, cfg.norm_eps);

  // Flatten trajectories and advantages in (prompt, sample) order.
  std::vector<Trajectory> trajs;
  std::vector<double> adv;
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < groups[i].trajectories.size(); ++j) {
      trajs.push_back(std::move(groups[i].trajectories[j]));
      adv.push_back(batch_adv.total[i][j]);
      log.mean_abs_advantage += std::abs(batch_adv.total[i][j]);
    }

  const PpoConfig ppo = cfg.ppo();
  std::vector<double> grad(state.params.theta.size());
  bool first = true;
  double kl_sum = 0.0, clip_sum = 0.0;
  for (int m = sampler.window_start; m < sampler.window_start + sampler.sde_steps; ++m) {
    std::fill(grad.begin(), grad.end(), 0.0);
    const PpoStats st = ppo_gradient(state.params, trajs, adv, ppo, grad, m);
    if (first) log.first_step_ratio_deviation = st.max_ratio_deviation;
    first = false;
    kl_sum += st.mean_kl;
    clip_sum += st.clip_fraction;
    if (!apply_update(state.params.theta, grad, cfg.adam, state.opt)) ++log.skipped_updates;
  }
  if (!state.params.finite())
    throw NonFiniteParams("non-finite policy parameters after iteration " + std::to_string(iteration));

  const auto steps = static_cast<double>(sampler.sde_steps);
  log.mean_kl = kl_sum / steps;
  log.clip_fraction = clip_sum / steps;
  log.mean_reward = n_rewards ? log.mean_reward / static_cast<double>(n_rewards) : 0.0;
  log.full_mark_rate = static_cast<double>(n_full) / static_cast<double>(n_samples);
  for (int t = 0; t < kConceptTypes; ++t) {
    const auto i = static_cast<std::size_t>(t);
    if (log.type_count[i]) log.type_mean[i] /= static_cast<double>(log.type_count[i]);
  }
  log.mean_abs_advantage /= static_cast<double>(n_samples);
  log.mean_alpha /= static_cast<double>(B);
  log.mean_min_weight /= static_cast<double>(B);
  log.mean_max_weight /= static_cast<double>(B);
  const NegCorrRatio ncr = neg_corr_ratio(concept_mats, cfg.corr_eps_std);
  log.neg_corr_ratio = ncr.ratio;
  log.neg_corr_defined = ncr.defined();
  log.zero_variance_fraction = static_cast<double>(n_saturated) / static_cast<double>(n_columns);
  state.iteration = iteration + 1;
  log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return log;
}

}  // namespace cmo
