#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "cmo/advantage.hpp"
#include "cmo/correlation.hpp"
#include "generators.hpp"
#include "oracles.hpp"

using namespace cmo;

namespace {

RewardMatrix column(const std::vector<double>& c) {
  RewardMatrix R(c.size(), 1);
  for (std::size_t j = 0; j < c.size(); ++j) R(j, 0) = c[j];
  return R;
}

GroupAdvantages from_values(std::size_t G, std::size_t K, std::vector<double> v) {
  return {G, K, std::move(v), std::vector<double>(K), std::vector<double>(K)};
}

}  // namespace

TEST(GroupNormalize, Examples) {
  auto A = group_normalize(column({1, 0, 1, 0}));
  EXPECT_EQ(A.values, (std::vector<double>{1, -1, 1, -1}));
  EXPECT_DOUBLE_EQ(A.mean[0], 0.5);
  EXPECT_DOUBLE_EQ(A.stddev[0], 0.5);

  A = group_normalize(column({0.3, 0.3, 0.3}));
  EXPECT_EQ(A.values, (std::vector<double>{0, 0, 0}));

  A = group_normalize(column({1, 0}));
  EXPECT_EQ(A.values, (std::vector<double>{1, -1}));

  EXPECT_THROW(group_normalize(column({1})), std::invalid_argument);
}

TEST(GroupNormalize, InvalidEntriesGetZero) {
  RewardMatrix R = column({1, 0, 1, 0, 7});
  R.set_valid(4, 0, false);
  const auto A = group_normalize(R);
  EXPECT_EQ(A.values, (std::vector<double>{1, -1, 1, -1, 0}));
}

TEST(GroupNormalize, StandardizedColumnsAndAffineInvariance) {
  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t G = 2 + rng.index(31), K = 1 + rng.index(8);
    const RewardMatrix R = gen::reward_matrix(rng, G, K);
    const auto A = group_normalize(R);
    RewardMatrix S(G, K);
    std::vector<double> a(K), b(K);
    for (std::size_t k = 0; k < K; ++k) {
      a[k] = rng.uniform(0.1, 5.0);
      b[k] = rng.uniform(-2.0, 2.0);
      for (std::size_t j = 0; j < G; ++j) S(j, k) = a[k] * R(j, k) + b[k];
    }
    const auto B = group_normalize(S);
    for (std::size_t k = 0; k < K; ++k) {
      std::vector<double> col(G);
      for (std::size_t j = 0; j < G; ++j) col[j] = A(j, k);
      if (oracle::pstd(R.column(k)) > 1e-7) {
        EXPECT_NEAR(oracle::mean(col), 0.0, 1e-6);
        EXPECT_NEAR(oracle::pstd(col), 1.0, 1e-6);
        for (std::size_t j = 0; j < G; ++j) EXPECT_NEAR(B(j, k), A(j, k), 1e-9);
      } else if (oracle::pstd(R.column(k)) == 0.0) {
        for (double v : col) EXPECT_EQ(v, 0.0);
      }
    }
  }
}

TEST(TotalAdvantage, CancellationGivesZero) {
  const auto A = from_values(4, 2, {1, -1, -1, 1, 1, -1, -1, 1});
  const std::vector<GroupAdvantages> groups{A};
  const std::vector<ConceptWeights> w{uniform_weights(2)};
  const auto T = weighted_total_advantage(groups, w);
  for (double v : T.total[0]) EXPECT_EQ(v, 0.0);
}

TEST(TotalAdvantage, SingleConceptSingleGroupKeepsOrdering) {
  const RewardMatrix R = column({0.2, 0.9, 0.4, 0.4, 0.1});
  const std::vector<GroupAdvantages> groups{group_normalize(R)};
  const std::vector<ConceptWeights> w{uniform_weights(1)};
  const auto T = weighted_total_advantage(groups, w);
  for (std::size_t a = 0; a < 5; ++a) EXPECT_NEAR(T.total[0][a], groups[0].values[a], 1e-7);
}

TEST(TotalAdvantage, Errors) {
  const std::vector<GroupAdvantages> none;
  const std::vector<ConceptWeights> nw;
  EXPECT_THROW(weighted_total_advantage(none, nw), std::invalid_argument);
  const std::vector<GroupAdvantages> g{from_values(2, 2, {1, -1, -1, 1})};
  const std::vector<ConceptWeights> bad{uniform_weights(3)};
  EXPECT_THROW(weighted_total_advantage(g, bad), std::invalid_argument);
}

TEST(TotalAdvantage, BatchStandardizedAndFinite) {
  Rng rng(11);
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t B = 1 + rng.index(4);
    std::vector<GroupAdvantages> groups;
    std::vector<ConceptWeights> weights;
    for (std::size_t i = 0; i < B; ++i) {
      const std::size_t G = 2 + rng.index(15), K = 1 + rng.index(6);
      RewardMatrix R = gen::reward_matrix(rng, G, K);
      if (rng.index(10) == 0) {
        const double c = rng.uniform();
        for (std::size_t k = 0; k < K; ++k) R(0, k) = c;
      }
      if (rng.index(20) == 0)
        for (std::size_t j = 0; j < G; ++j)
          for (std::size_t k = 0; k < K; ++k) R(j, k) = 0.25;
      groups.push_back(group_normalize(R));
      weights.push_back(concept_weights(difficulty_scores(R).alpha, 0.5));
    }
    const auto T = weighted_total_advantage(groups, weights);
    std::vector<double> flat, s;
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t j = 0; j < T.total[i].size(); ++j) {
        ASSERT_TRUE(std::isfinite(T.total[i][j]));
        flat.push_back(T.total[i][j]);
        s.push_back(T.weighted_sum[i][j]);
      }
    // std(A) = sigma_B / (sigma_B + eps), within 1e-6 of 1 once sigma_B >= 1e-2.
    const double sb = oracle::pstd(s);
    if (sb > 1e-8) {
      EXPECT_NEAR(oracle::mean(flat), 0.0, 1e-6);
      EXPECT_NEAR(oracle::pstd(flat), sb / (sb + 1e-8), 1e-9);
    }
    if (sb >= 1e-2) EXPECT_NEAR(oracle::pstd(flat), 1.0, 1e-6);
    // Argmax stability.
    const auto is_max = std::max_element(s.begin(), s.end()) - s.begin();
    EXPECT_EQ(flat[static_cast<std::size_t>(is_max)], *std::max_element(flat.begin(), flat.end()));
  }
}

TEST(TotalAdvantage, UniformWeightsOrderLikeSumOfAdvantages) {
  Rng rng(12);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t B = 1 + rng.index(4);
    std::vector<GroupAdvantages> groups;
    std::vector<ConceptWeights> weights;
    std::vector<double> sum_a;
    const std::size_t K = 2 + rng.index(5);
    for (std::size_t i = 0; i < B; ++i) {
      const std::size_t G = 2 + rng.index(15);
      groups.push_back(group_normalize(gen::reward_matrix(rng, G, K)));
      weights.push_back(uniform_weights(K));
      for (std::size_t j = 0; j < G; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < K; ++k) s += groups.back()(j, k);
        sum_a.push_back(s);
      }
    }
    const auto T = weighted_total_advantage(groups, weights);
    std::vector<double> flat;
    for (const auto& t : T.total) flat.insert(flat.end(), t.begin(), t.end());
    for (std::size_t a = 0; a < flat.size(); ++a)
      for (std::size_t b = 0; b < flat.size(); ++b) {
        if (sum_a[a] < sum_a[b] - 1e-12) EXPECT_LT(flat[a], flat[b]);
        if (std::abs(sum_a[a] - sum_a[b]) <= 1e-12) EXPECT_NEAR(flat[a], flat[b], 1e-9 + 2e-12 / (T.stddev + 1e-8));
      }
  }
}
