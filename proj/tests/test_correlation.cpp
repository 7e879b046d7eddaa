#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "cmo/correlation.hpp"
#include "cmo/rng.hpp"
#include "generators.hpp"
#include "oracles.hpp"

using namespace cmo;

namespace {

RewardMatrix from_columns(const std::vector<std::vector<double>>& cols) {
  RewardMatrix R(cols[0].size(), cols.size());
  for (std::size_t k = 0; k < cols.size(); ++k)
    for (std::size_t j = 0; j < cols[k].size(); ++j) R(j, k) = cols[k][j];
  return R;
}

}  // namespace

TEST(Pearson, IdenticalColumns) {
  const auto C = pearson_corr_matrix(from_columns({{0.1, 0.5, 0.2, 0.9}, {0.1, 0.5, 0.2, 0.9}}));
  EXPECT_DOUBLE_EQ(C(0, 1), 1.0);
}

TEST(Pearson, OppositeBinaryColumns) {
  const auto C = pearson_corr_matrix(from_columns({{1, 0, 1, 0}, {0, 1, 0, 1}}));
  EXPECT_DOUBLE_EQ(C(0, 1), -1.0);
}

TEST(Pearson, ReversedRamp) {
  const auto C = pearson_corr_matrix(from_columns({{1.0 / 3, 2.0 / 3, 1.0}, {1.0, 2.0 / 3, 1.0 / 3}}));
  EXPECT_NEAR(C(0, 1), -1.0, 1e-15);
}

TEST(Pearson, ConstantColumnIsUndefined) {
  const auto C = pearson_corr_matrix(from_columns({{1, 1, 1}, {0, 1, 0}}));
  EXPECT_FALSE(C.is_defined(0, 1));
  EXPECT_FALSE(C.is_defined(0, 0));
  EXPECT_TRUE(C.is_defined(1, 1));
  EXPECT_EQ(C(1, 1), 1.0);
}

TEST(Pearson, NeedsTwoSamples) {
  EXPECT_THROW(pearson_corr_matrix(RewardMatrix(1, 3)), std::invalid_argument);
}

TEST(Pearson, MatchesTwoPassOracle) {
  Rng rng(1234);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t G = 2 + rng.index(31), K = 1 + rng.index(8);
    const RewardMatrix R = gen::reward_matrix(rng, G, K);
    const auto C = pearson_corr_matrix(R);
    for (std::size_t a = 0; a < K; ++a) {
      for (std::size_t b = 0; b < K; ++b) {
        EXPECT_EQ(C(a, b), C(b, a));
        EXPECT_EQ(C.is_defined(a, b), C.is_defined(b, a));
        const bool variable = oracle::pstd(R.column(a)) >= kDefaultStdEps && oracle::pstd(R.column(b)) >= kDefaultStdEps;
        ASSERT_EQ(C.is_defined(a, b), variable);
        if (!variable) continue;
        if (a == b) {
          EXPECT_EQ(C(a, a), 1.0);
        } else {
          EXPECT_NEAR(C(a, b), oracle::pearson(R.column(a), R.column(b)), 1e-10);
          EXPECT_LE(std::abs(C(a, b)), 1.0);
        }
      }
    }
  }
}

TEST(Difficulty, ConstantColumnGetsOne) {
  const auto d = difficulty_scores(from_columns({{0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}, {0, 1, 1, 0}}));
  EXPECT_EQ(d.alpha[0], 1.0);
  EXPECT_EQ(d.bypass, BypassReason::none);
}

TEST(Difficulty, AntiCorrelatedPair) {
  const auto d = difficulty_scores(from_columns({{1, 0, 1, 0}, {0, 1, 0, 1}}));
  EXPECT_DOUBLE_EQ(d.alpha[0], -1.0);
  EXPECT_DOUBLE_EQ(d.alpha[1], -1.0);
}

TEST(Difficulty, MeanOverPeers) {
  // Columns: x, x, -x -> C12 = 1, C13 = -1.
  const auto d = difficulty_scores(from_columns({{1, 0, 1, 0}, {1, 0, 1, 0}, {0, 1, 0, 1}}));
  EXPECT_NEAR(d.alpha[0], 0.0, 1e-15);
  EXPECT_NEAR(d.alpha[2], -1.0, 1e-15);
}

TEST(Difficulty, UndefinedPeerCountsAsOne) {
  // alpha_0 = (C01 + 1) / 2 with column 2 constant.
  const auto d = difficulty_scores(from_columns({{1, 0, 1, 0}, {0, 1, 0, 1}, {1, 1, 1, 1}}));
  EXPECT_NEAR(d.alpha[0], 0.0, 1e-15);
  EXPECT_EQ(d.alpha[2], 1.0);
}

TEST(Difficulty, Bypasses) {
  RewardMatrix R = from_columns({{1, 0, 1, 0}, {0, 1, 0, 1}});
  R.set_valid(2, 1, false);
  auto d = difficulty_scores(R);
  EXPECT_EQ(d.bypass, BypassReason::padding);
  EXPECT_EQ(d.alpha, std::vector<double>(2, 1.0));

  d = difficulty_scores(RewardMatrix(1, 3));
  EXPECT_EQ(d.bypass, BypassReason::too_few_samples);
  EXPECT_EQ(d.alpha, std::vector<double>(3, 1.0));

  d = difficulty_scores(from_columns({{1, 0, 1}}));
  EXPECT_EQ(d.bypass, BypassReason::single_concept);
  EXPECT_EQ(d.alpha, std::vector<double>{1.0});
  EXPECT_EQ(concept_weights(d.alpha).w, std::vector<double>{1.0});
}

TEST(Weights, Examples) {
  const std::vector<double> a1{1.0, 0.0};
  auto w = concept_weights(a1, 0.5);
  EXPECT_NEAR(w.w[0], 0.1192, 1e-4);
  EXPECT_NEAR(w.w[1], 0.8808, 1e-4);
  EXPECT_NEAR(w.w[0], 1.0 / (1.0 + std::exp(2.0)), 1e-15);

  const std::vector<double> a2{1.0, -1.0};
  w = concept_weights(a2, 0.5);
  EXPECT_NEAR(w.w[0], 0.0180, 1e-4);
  EXPECT_NEAR(w.w[1], 0.9820, 1e-4);

  const std::vector<double> eq{0.3, 0.3, 0.3, 0.3};
  for (double v : concept_weights(eq, 0.7).w) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Weights, TauOneIsPlainSoftmax) {
  const std::vector<double> a{0.2, -0.5, 0.9};
  const auto ref = oracle::softmax({0.8, 1.5, 0.1});
  const auto w = concept_weights(a, 1.0);
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(w.w[k], ref[k], 1e-15);
}

TEST(Weights, RejectsBadTau) {
  const std::vector<double> a{0.0, 1.0};
  EXPECT_THROW(concept_weights(a, 0.0), std::invalid_argument);
  EXPECT_THROW(concept_weights(a, -1.0), std::invalid_argument);
}

TEST(Weights, PropertiesOnRandomGroups) {
  Rng rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t G = 2 + rng.index(31), K = 1 + rng.index(8);
    const RewardMatrix R = gen::reward_matrix(rng, G, K);
    const double tau = trial % 2 ? 0.5 : rng.uniform(0.05, 3.0);
    const auto d = difficulty_scores(R);
    const auto w = concept_weights(d.alpha, tau);
    double sum = 0.0, lo = 1.0, hi = 0.0;
    for (double v : w.w) {
      EXPECT_GT(v, 0.0);
      sum += v;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
    EXPECT_LE(hi / lo, std::exp(2.0 / tau) * (1 + 1e-12));
    for (std::size_t k = 0; k < K; ++k) {
      EXPECT_GE(d.alpha[k], -1.0);
      EXPECT_LE(d.alpha[k], 1.0);
      if (oracle::pstd(R.column(k)) < kDefaultStdEps) {
        EXPECT_EQ(d.alpha[k], 1.0);
        EXPECT_EQ(w.w[k], lo);
      }
      for (std::size_t l = 0; l < K; ++l)
        if (d.alpha[k] < d.alpha[l] - 1e-12)
          EXPECT_GT(w.w[k], w.w[l]);
        else if (d.alpha[k] < d.alpha[l])
          EXPECT_GE(w.w[k], w.w[l] * (1.0 - 1e-12));
    }
  }
}

TEST(Weights, PermutationEquivariant) {
  Rng rng(78);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t G = 2 + rng.index(20), K = 2 + rng.index(6);
    const RewardMatrix R = gen::reward_matrix(rng, G, K);
    std::vector<std::size_t> perm(K);
    for (std::size_t k = 0; k < K; ++k) perm[k] = k;
    for (std::size_t k = K - 1; k > 0; --k) std::swap(perm[k], perm[rng.index(k + 1)]);
    RewardMatrix P(G, K);
    for (std::size_t j = 0; j < G; ++j)
      for (std::size_t k = 0; k < K; ++k) P(j, k) = R(j, perm[k]);
    const auto a = difficulty_scores(R), b = difficulty_scores(P);
    const auto wa = concept_weights(a.alpha), wb = concept_weights(b.alpha);
    for (std::size_t k = 0; k < K; ++k) {
      EXPECT_NEAR(b.alpha[k], a.alpha[perm[k]], 1e-12);
      EXPECT_NEAR(wb.w[k], wa.w[perm[k]], 1e-12);
    }
  }
}
