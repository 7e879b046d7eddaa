#include <gtest/gtest.h>

#include <vector>

#include "cmo/bench.hpp"
#include "cmo/policy.hpp"
#include "cmo/rng.hpp"

using namespace cmo;

namespace {

RewardMatrix matrix(std::size_t G, std::size_t K, const std::vector<double>& rowmajor) {
  RewardMatrix R(G, K);
  for (std::size_t j = 0; j < G; ++j)
    for (std::size_t k = 0; k < K; ++k) R(j, k) = rowmajor[j * K + k];
  return R;
}

}  // namespace

TEST(GenPrompt, SizesAndConsistency) {
  const Codebook cb = Codebook::standard();
  for (int k = 0; k <= 7; ++k)
    for (std::uint64_t n = 0; n < 200; ++n) {
      Rng rng(5, "gen", {static_cast<std::uint64_t>(k), n});
      const Prompt p = gen_prompt(k, rng, cb);
      ASSERT_EQ(p.size(), static_cast<std::size_t>(k + 1));
      EXPECT_TRUE(std::holds_alternative<Exist>(p.concepts[0]));
      EXPECT_TRUE(prompt_consistent(p.concepts, cb));
    }
  Rng rng(1);
  EXPECT_THROW(gen_prompt(8, rng, cb), std::invalid_argument);
  EXPECT_THROW(gen_prompt(-1, rng, cb), std::invalid_argument);
}

TEST(GenPrompt, DeterministicPerStream) {
  const Codebook cb = Codebook::standard();
  Rng a(3, "g", {4}), b(3, "g", {4});
  EXPECT_EQ(gen_prompt(5, a, cb).concepts, gen_prompt(5, b, cb).concepts);
}

TEST(PromptConsistent, RejectsContradictions) {
  const Codebook cb = Codebook::standard();
  EXPECT_FALSE(prompt_consistent({Exist{0}, Exist{0}}, cb));
  EXPECT_FALSE(prompt_consistent({Exist{0}, Count{0, 2}, Count{0, 3}}, cb));
  EXPECT_FALSE(prompt_consistent({Exist{0}, Exist{1}, Rel2D{0, 1, Relation2D::left}, Rel2D{1, 0, Relation2D::left}}, cb));
  EXPECT_TRUE(prompt_consistent({Exist{0}, Exist{1}, Rel2D{0, 1, Relation2D::left}}, cb));
}

TEST(PassConcept, StrictBranch) {
  EXPECT_TRUE(pass_concept(Count{0, 3}, ConceptScore{1.0, true, -1}));
  EXPECT_FALSE(pass_concept(Count{0, 3}, ConceptScore{0.6, true, -1}));
  EXPECT_FALSE(pass_concept(Rel2D{0, 1, Relation2D::left}, ConceptScore{0.5, true, -1}));
  EXPECT_TRUE(pass_concept(Attr{0, 0, 2}, ConceptScore{0.4, true, 2}));
  EXPECT_FALSE(pass_concept(Attr{0, 0, 2}, ConceptScore{0.9, true, 1}));
  EXPECT_FALSE(pass_concept(Exist{0}, ConceptScore{1.0, false, -1}));
}

TEST(FullMark, Examples) {
  auto g = full_mark_and_fraction({true, true, true});
  EXPECT_TRUE(g.full_mark);
  EXPECT_EQ(g.fraction, 1.0);
  g = full_mark_and_fraction({true, false, true, true});
  EXPECT_FALSE(g.full_mark);
  EXPECT_EQ(g.fraction, 0.75);
  g = full_mark_and_fraction({false});
  EXPECT_FALSE(g.full_mark);
  EXPECT_EQ(g.fraction, 0.0);
  EXPECT_THROW(full_mark_and_fraction({}), std::invalid_argument);
}

TEST(NegCorr, Examples) {
  const std::vector<RewardMatrix> anti{matrix(4, 2, {1, 0, 0, 1, 1, 0, 0, 1})};
  const auto r = neg_corr_ratio(anti);
  EXPECT_EQ(r.ratio, 1.0);
  EXPECT_EQ(r.pairs, 1u);

  const std::vector<RewardMatrix> flat{matrix(3, 2, {1, 0, 1, 0.5, 1, 1})};
  EXPECT_FALSE(neg_corr_ratio(flat).defined());

  const std::vector<RewardMatrix> single{matrix(3, 1, {0, 1, 0})};
  EXPECT_FALSE(neg_corr_ratio(single).defined());

  RewardMatrix invalid = matrix(4, 2, {1, 0, 0, 1, 1, 0, 0, 1});
  invalid.set_valid(0, 1, false);
  const std::vector<RewardMatrix> skip{invalid};
  EXPECT_FALSE(neg_corr_ratio(skip).defined());
}

TEST(NegCorr, IndependentRewardsGiveAboutHalf) {
  Rng rng(21);
  std::vector<RewardMatrix> groups;
  for (int i = 0; i < 500; ++i) {
    RewardMatrix R(10, 3);
    for (std::size_t j = 0; j < 10; ++j)
      for (std::size_t k = 0; k < 3; ++k) R(j, k) = rng.uniform();
    groups.push_back(R);
  }
  EXPECT_NEAR(neg_corr_ratio(groups).ratio, 0.5, 0.1);
}

TEST(NegCorr, InvariantToRowPermutationAndPositiveScaling) {
  Rng rng(22);
  for (int trial = 0; trial < 200; ++trial) {
    RewardMatrix R(8, 4), S(8, 4);
    std::vector<std::size_t> perm{0, 1, 2, 3, 4, 5, 6, 7};
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    for (std::size_t j = 0; j < 8; ++j)
      for (std::size_t k = 0; k < 4; ++k) R(j, k) = rng.uniform();
    for (std::size_t j = 0; j < 8; ++j)
      for (std::size_t k = 0; k < 4; ++k) S(j, k) = 3.0 * R(perm[j], k) + 0.5;
    const std::vector<RewardMatrix> a{R}, b{S};
    const auto x = neg_corr_ratio(a), y = neg_corr_ratio(b);
    EXPECT_EQ(x.negative, y.negative);
    EXPECT_EQ(x.pairs, y.pairs);
  }
}

TEST(Benchmark, SuiteShape) {
  const Codebook cb = Codebook::standard();
  const BenchmarkSuite s = make_suite(7, 5, 3, cb);
  ASSERT_EQ(s.levels.size(), 7u);
  for (std::size_t i = 0; i < 7; ++i) {
    EXPECT_EQ(s.levels[i].k, static_cast<int>(i) + 1);
    EXPECT_EQ(s.levels[i].prompts.size(), 5u);
    for (const auto& p : s.levels[i].prompts) EXPECT_EQ(p.size(), i + 2);
  }
  EXPECT_THROW(make_suite(8, 5, 3, cb), std::invalid_argument);
  EXPECT_THROW(make_suite(3, 0, 3, cb), std::invalid_argument);
}

TEST(Benchmark, DeterministicAndBounded) {
  const Codebook cb = Codebook::standard();
  const BenchmarkSuite suite = make_suite(7, 20, 4, cb);
  const PolicyParams p = PolicyParams::init({}, 1);
  BenchConfig cfg;
  cfg.images = 4;
  cfg.seed = 9;
  const BenchReport a = run_benchmark(p, suite, cb, cfg), b = run_benchmark(p, suite, cb, cfg);
  ASSERT_EQ(a.levels.size(), 7u);
  for (std::size_t i = 0; i < a.levels.size(); ++i) {
    const LevelReport &x = a.levels[i], &y = b.levels[i];
    EXPECT_EQ(x.full_mark, y.full_mark);
    EXPECT_EQ(x.fraction, y.fraction);
    EXPECT_EQ(x.neg_corr.negative, y.neg_corr.negative);
    EXPECT_GE(x.fraction, x.full_mark);
    EXPECT_EQ(x.samples, 80u);
  }
  // Untrained policy: full marks are rare once many concepts are combined.
  EXPECT_LE(a.levels[6].full_mark, 0.05);

  BenchConfig det = cfg;
  det.deterministic = true;
  const BenchReport c = run_benchmark(p, suite, cb, det);
  EXPECT_EQ(c.levels.size(), 7u);
}
