#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "cmo/flow.hpp"
#include "cmo/policy.hpp"
#include "cmo/ppo.hpp"
#include "cmo/rng.hpp"

using namespace cmo;

namespace {

struct Fixture {
  PolicyParams old_params;
  std::vector<Trajectory> trajectories;
  SamplerConfig sampler;
  PpoConfig ppo;
};

Fixture make_setup(std::uint64_t seed, int n, int sde_steps) {
  Fixture s;
  s.old_params = PolicyParams::init({4, 2, 4}, seed);
  s.sampler.total_steps = 10;
  s.sampler.sde_steps = sde_steps;
  s.ppo.dt = s.sampler.dt();
  s.ppo.noise_level = s.sampler.noise_level;
  for (int j = 0; j < n; ++j) {
    Rng rng(seed, "ppo_test", {static_cast<std::uint64_t>(j)});
    const std::vector<double> c{rng.normal(), rng.normal()};
    s.trajectories.push_back(sample_trajectory(s.old_params, c, s.sampler, rng));
  }
  return s;
}

PolicyParams perturbed(const PolicyParams& p, double scale, std::uint64_t seed) {
  PolicyParams q = p;
  Rng rng(seed, "perturb", {});
  for (double& v : q.theta) v += scale * rng.normal();
  return q;
}

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double e : v) s += e * e;
  return std::sqrt(s);
}

}  // namespace

TEST(PpoGradient, MatchesFiniteDifferences) {
  int checked = 0;
  for (std::uint64_t inst = 0; checked < 20; ++inst) {
    ASSERT_LT(inst, 200u);
    Fixture s = make_setup(100 + inst, 2, 2);
    const PolicyParams p = perturbed(s.old_params, 0.01, inst);
    Rng rng(inst, "adv", {});
    const std::vector<double> adv{rng.normal(), rng.normal()};
    std::vector<double> grad(p.theta.size(), 0.0);
    const PpoStats st = ppo_gradient(p, s.trajectories, adv, s.ppo, grad);
    // Finite differences are only meaningful away from the clip kink.
    if (st.max_ratio_deviation > 0.8 * s.ppo.clip_eps) continue;
    ++checked;
    std::vector<double> fd(p.theta.size()), diff(p.theta.size());
    const double h = 1e-6;
    for (std::size_t i = 0; i < p.theta.size(); ++i) {
      PolicyParams a = p, b = p;
      a.theta[i] += h;
      b.theta[i] -= h;
      fd[i] = (ppo_gradient(a, s.trajectories, adv, s.ppo).objective -
               ppo_gradient(b, s.trajectories, adv, s.ppo).objective) /
              (2 * h);
      diff[i] = grad[i] - fd[i];
    }
    EXPECT_LE(norm(diff) / std::max(norm(fd), 1e-8), 1e-4) << "instance " << inst;
  }
}

TEST(PpoGradient, RatioIsOneAtOldParameters) {
  Fixture s = make_setup(7, 4, 3);
  const std::vector<double> adv{1.0, -0.5, 0.3, 2.0};
  const PpoStats st = ppo_gradient(s.old_params, s.trajectories, adv, s.ppo);
  EXPECT_EQ(st.max_ratio_deviation, 0.0);
  EXPECT_EQ(st.mean_kl, 0.0);
  EXPECT_EQ(st.clip_fraction, 0.0);
  EXPECT_EQ(st.terms, 12u);
  EXPECT_NEAR(st.objective, (1.0 - 0.5 + 0.3 + 2.0) / 4.0, 1e-12);
}

TEST(PpoGradient, ZeroAdvantageGivesZeroGradientAtOldParameters) {
  Fixture s = make_setup(8, 3, 3);
  const std::vector<double> adv(3, 0.0);
  std::vector<double> grad(s.old_params.theta.size(), 0.0);
  ppo_gradient(s.old_params, s.trajectories, adv, s.ppo, grad);
  for (double g : grad) EXPECT_EQ(g, 0.0);

  PpoConfig no_kl = s.ppo;
  no_kl.beta = 0.0;
  const PolicyParams p = perturbed(s.old_params, 0.05, 3);
  std::fill(grad.begin(), grad.end(), 0.0);
  ppo_gradient(p, s.trajectories, adv, no_kl, grad);
  for (double g : grad) EXPECT_EQ(g, 0.0);
}

TEST(PpoGradient, ClippedTermContributesNothing) {
  int found = 0;
  for (std::uint64_t inst = 0; inst < 500 && found < 5; ++inst) {
    Fixture s = make_setup(300 + inst, 1, 1);
    s.ppo.beta = 0.0;
    const PolicyParams p = perturbed(s.old_params, 0.5, inst);
    const Trajectory& tr = s.trajectories[0];
    const StepRecord& rec = tr.steps[0];
    const auto& x = tr.states[0];
    std::vector<double> mean(4);
    transition_mean(x, rec.t, s.ppo.dt, velocity(p, x, rec.t, tr.conditioning), s.ppo.noise_level, mean);
    const double ratio = std::exp(transition_logprob(mean, rec.std, tr.states[1]) - *rec.log_prob);
    double adv;
    if (ratio > 1.0 + s.ppo.clip_eps)
      adv = 1.0;
    else if (ratio < 1.0 - s.ppo.clip_eps)
      adv = -1.0;
    else
      continue;
    ++found;
    std::vector<double> grad(p.theta.size(), 0.0);
    const std::vector<double> a{adv};
    const PpoStats st = ppo_gradient(p, s.trajectories, a, s.ppo, grad);
    EXPECT_EQ(st.clip_fraction, 1.0);
    for (double g : grad) EXPECT_EQ(g, 0.0);
  }
  EXPECT_EQ(found, 5);
}

TEST(PpoGradient, OnlyStepRestrictsAverage) {
  Fixture s = make_setup(9, 2, 3);
  const std::vector<double> adv{1.0, 1.0};
  EXPECT_EQ(ppo_gradient(s.old_params, s.trajectories, adv, s.ppo, {}, 0).terms, 2u);
  EXPECT_THROW(ppo_gradient(s.old_params, s.trajectories, adv, s.ppo, {}, 5), std::invalid_argument);
}

TEST(PpoGradient, RejectsMismatchedInput) {
  Fixture s = make_setup(10, 2, 2);
  const std::vector<double> one{1.0};
  EXPECT_THROW(ppo_gradient(s.old_params, s.trajectories, one, s.ppo), std::invalid_argument);
  std::vector<double> small(3);
  const std::vector<double> two{1.0, 1.0};
  EXPECT_THROW(ppo_gradient(s.old_params, s.trajectories, two, s.ppo, small), std::invalid_argument);
  const std::vector<Trajectory> none;
  const std::vector<double> empty;
  EXPECT_THROW(ppo_gradient(s.old_params, none, empty, s.ppo), std::invalid_argument);
}
