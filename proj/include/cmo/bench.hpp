#pragma once

#include <array>
#include <map>
#include <optional>
#include <tuple>
#include <set>
#include <stdexcept>
#include <utility>
#include <vector>

#include "cmo/correlation.hpp"
#include "cmo/flow.hpp"
#include "cmo/policy.hpp"
#include "cmo/rewards.hpp"
#include "cmo/rng.hpp"
#include "cmo/scene.hpp"

namespace cmo {

// ---------------------------------------------------------------------------
// Prompt consistency

namespace detail {

// Directed "precedes" edges per ordering family; a cycle is a contradiction.
inline bool has_cycle(const std::vector<std::pair<int, int>>& edges) {
  std::map<int, std::vector<int>> adj;
  for (auto [a, b] : edges) adj[a].push_back(b);
  std::map<int, int> state;  // 0 new, 1 on stack, 2 done
  auto dfs = [&](auto&& self, int u) -> bool {
    state[u] = 1;
    for (int w : adj[u]) {
      if (state[w] == 1) return true;
      if (state[w] == 0 && self(self, w)) return true;
    }
    state[u] = 2;
    return false;
  };
  for (const auto& [u, _] : adj)
    if (state[u] == 0 && dfs(dfs, u)) return true;
  return false;
}

}  // namespace detail

/// True if the concepts can in principle be satisfied together: all valid,
/// no duplicates, at most one attribute value per (object, attribute), one
/// count and one size per object, at most one huge and one tiny, one
/// relation per family and object pair, no ordering cycles, and the object
/// budget fits in the slots.
inline bool prompt_consistent(const std::vector<ConceptSpec>& concepts, const Codebook& cb) {
  std::set<std::pair<int, int>> attr_keys;
  std::set<int> count_keys, size_keys;
  std::set<std::tuple<int, int, int>> pair_keys;
  std::array<int, 2> size_dirs{0, 0};
  std::array<std::vector<std::pair<int, int>>, 4> order;  // horizontal, vertical, depth, containment
  std::map<int, int> required;

  for (std::size_t a = 0; a < concepts.size(); ++a) {
    const auto& c = concepts[a];
    if (!concept_valid(c, cb)) return false;
    for (std::size_t b = 0; b < a; ++b)
      if (concepts[b] == c) return false;
    for (int cat : concept_categories(c)) required.try_emplace(cat, 1);

    bool ok = std::visit(
        [&](const auto& v) -> bool {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, Attr>) {
            return attr_keys.insert({v.category, v.attr_category}).second;
          } else if constexpr (std::is_same_v<T, Count>) {
            required[v.category] = v.target_count;
            return count_keys.insert(v.category).second;
          } else if constexpr (std::is_same_v<T, Size>) {
            if (++size_dirs[static_cast<std::size_t>(v.direction)] > 1) return false;
            return size_keys.insert(v.category).second;
          } else if constexpr (std::is_same_v<T, Rel2D>) {
            const bool inclusion = v.relation == Relation2D::inside || v.relation == Relation2D::outside;
            const bool horizontal = v.relation == Relation2D::left || v.relation == Relation2D::right;
            const int family = inclusion ? 2 : (horizontal ? 0 : 1);
            const auto lo = std::min(v.category_i, v.category_j), hi = std::max(v.category_i, v.category_j);
            if (!pair_keys.insert({family, lo, hi}).second) return false;
            switch (v.relation) {
              case Relation2D::left: order[0].push_back({v.category_i, v.category_j}); break;
              case Relation2D::right: order[0].push_back({v.category_j, v.category_i}); break;
              case Relation2D::above: order[1].push_back({v.category_i, v.category_j}); break;
              case Relation2D::below: order[1].push_back({v.category_j, v.category_i}); break;
              case Relation2D::inside: order[3].push_back({v.category_i, v.category_j}); break;
              case Relation2D::outside: break;
            }
            return true;
          } else if constexpr (std::is_same_v<T, Rel3D>) {
            const auto lo = std::min(v.category_i, v.category_j), hi = std::max(v.category_i, v.category_j);
            if (!pair_keys.insert({3, lo, hi}).second) return false;
            if (v.relation == Relation3D::in_front_of) order[2].push_back({v.category_i, v.category_j});
            else order[2].push_back({v.category_j, v.category_i});
            return true;
          } else {
            return true;
          }
        },
        c);
    if (!ok) return false;
  }
  for (const auto& edges : order)
    if (detail::has_cycle(edges)) return false;
  int budget = 0;
  for (const auto& [cat, n] : required) budget += n;
  return budget <= kSlots;
}

/// Random prompt with k + 1 concepts: an Exist base concept plus k drawn from
/// {Attr, Count, Size, Rel2D, Rel3D, Exist(new category)}. Relations only use
/// categories introduced earlier; each draw is rejection-sampled against
/// prompt_consistent.
inline Prompt gen_prompt(int k, Rng& rng, const Codebook& cb) {
  if (k < 0 || k > 7) throw std::invalid_argument("gen_prompt: k must be in [0, 7]");
  std::vector<int> cats{static_cast<int>(rng.index(static_cast<std::size_t>(cb.num_categories())))};
  std::vector<ConceptSpec> concepts{Exist{cats[0]}};
  auto pick = [&](const std::vector<int>& v) { return v[rng.index(v.size())]; };

  for (int n = 0; n < k; ++n) {
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      std::optional<ConceptSpec> c;
      int new_cat = -1;
      switch (rng.index(6)) {
        case 0: {
          const int kind = static_cast<int>(rng.index(static_cast<std::size_t>(cb.num_attributes())));
          const auto nv = cb.attributes[static_cast<std::size_t>(kind)].values.size();
          c = Attr{pick(cats), kind, static_cast<int>(rng.index(nv))};
          break;
        }
        case 1:
          c = Count{pick(cats), 1 + static_cast<int>(rng.index(3))};
          break;
        case 2:
          c = Size{pick(cats), rng.index(2) == 0 ? SizeDirection::huge : SizeDirection::tiny};
          break;
        case 3:
        case 4: {
          if (cats.size() < 2) break;
          const auto i = rng.index(cats.size());
          auto j = rng.index(cats.size() - 1);
          if (j >= i) ++j;
          if (rng.index(2) == 0) {
            c = Rel2D{cats[i], cats[j], static_cast<Relation2D>(rng.index(6))};
          } else {
            c = Rel3D{cats[i], cats[j], static_cast<Relation3D>(rng.index(2))};
          }
          break;
        }
        default: {
          std::vector<int> fresh;
          for (int cat = 0; cat < cb.num_categories(); ++cat)
            if (std::find(cats.begin(), cats.end(), cat) == cats.end()) fresh.push_back(cat);
          if (fresh.empty()) break;
          new_cat = pick(fresh);
          c = Exist{new_cat};
        }
      }
      if (!c) continue;
      concepts.push_back(*c);
      if (prompt_consistent(concepts, cb)) {
        placed = true;
        if (new_cat >= 0) cats.push_back(new_cat);
      } else {
        concepts.pop_back();
      }
    }
    if (!placed) throw std::runtime_error("gen_prompt: no consistent concept after 100 attempts");
  }
  return make_prompt(std::move(concepts));
}

// ---------------------------------------------------------------------------
// Grading

/// Strict-branch grading: a concept passes only on its full-credit branch;
/// attributes pass when the best instance is classified as the target value.
inline bool pass_concept(const ConceptSpec& spec, const ConceptScore& score) {
  if (!score.valid) return false;
  if (const auto* a = std::get_if<Attr>(&spec)) return score.attr_argmax == a->target_value_index;
  return score.reward == 1.0;
}

struct PromptGrade {
  bool full_mark = false;
  double fraction = 0.0;
};

inline PromptGrade full_mark_and_fraction(const std::vector<bool>& passes) {
  if (passes.empty()) throw std::invalid_argument("full_mark_and_fraction: no concepts");
  std::size_t n = 0;
  for (bool p : passes) n += p ? 1 : 0;
  return {n == passes.size(), static_cast<double>(n) / static_cast<double>(passes.size())};
}

struct NegCorrRatio {
  double ratio = 0.0;
  std::size_t negative = 0;
  std::size_t pairs = 0;   // defined pairs
  bool defined() const { return pairs > 0; }
};

/// Fraction of defined concept pairs (k < l) with negative group
/// correlation, pooled over groups. Groups with invalid entries are skipped.
inline NegCorrRatio neg_corr_ratio(std::span<const RewardMatrix> groups, double eps_std = kDefaultStdEps) {
  NegCorrRatio out;
  for (const auto& R : groups) {
    if (R.rows() < 2) throw std::invalid_argument("neg_corr_ratio: every group needs at least 2 samples");
    if (R.cols() < 2 || !R.all_valid()) continue;
    const auto C = pearson_corr_matrix(R, eps_std);
    for (std::size_t k = 0; k < R.cols(); ++k)
      for (std::size_t l = k + 1; l < R.cols(); ++l) {
        if (!C.is_defined(k, l)) continue;
        ++out.pairs;
        if (C(k, l) < 0.0) ++out.negative;
      }
  }
  if (out.pairs > 0) out.ratio = static_cast<double>(out.negative) / static_cast<double>(out.pairs);
  return out;
}

// ---------------------------------------------------------------------------
// Benchmark

struct BenchmarkLevel {
  int k = 1;
  std::vector<Prompt> prompts;
};

struct BenchmarkSuite {
  std::vector<BenchmarkLevel> levels;
  std::uint64_t seed = 0;
};

inline BenchmarkSuite make_suite(int k_max, int per_k, std::uint64_t seed, const Codebook& cb) {
  if (k_max < 1 || k_max > 7) throw std::invalid_argument("make_suite: k_max must be in [1, 7]");
  if (per_k < 1) throw std::invalid_argument("make_suite: per_k must be >= 1");
  BenchmarkSuite suite;
  suite.seed = seed;
  for (int k = 1; k <= k_max; ++k) {
    BenchmarkLevel level{k, {}};
    for (int n = 0; n < per_k; ++n) {
      Rng rng(seed, "bench_prompt", {static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(n)});
      level.prompts.push_back(gen_prompt(k, rng, cb));
    }
    suite.levels.push_back(std::move(level));
  }
  return suite;
}

struct BenchConfig {
  int images = 10;
  bool deterministic = false;  // evaluate the ODE path only
  std::uint64_t seed = 0;
  SamplerConfig sampler;
  RewardConfig reward;
  double corr_eps_std = kDefaultStdEps;
};

struct LevelReport {
  int k = 0;
  double full_mark = 0.0;
  double fraction = 0.0;
  NegCorrRatio neg_corr;
  std::array<std::size_t, kConceptTypes> type_pass{};
  std::array<std::size_t, kConceptTypes> type_total{};
  std::size_t samples = 0;

  double type_pass_rate(int t) const {
    const auto i = static_cast<std::size_t>(t);
    return type_total[i] ? static_cast<double>(type_pass[i]) / static_cast<double>(type_total[i]) : 0.0;
  }
};

struct BenchReport {
  std::vector<LevelReport> levels;
  // Reward matrix per prompt, by level; kept for offline correlation analysis.
  std::vector<std::vector<RewardMatrix>> rewards;
};

inline BenchReport run_benchmark(const PolicyParams& params, const BenchmarkSuite& suite, const Codebook& cb,
                                 const BenchConfig& cfg) {
  if (cfg.images < 1) throw std::invalid_argument("run_benchmark: images must be >= 1");
  SamplerConfig sampler = cfg.sampler;
  if (cfg.deterministic) sampler.sde_steps = 0;
  BenchReport report;
  for (const auto& level : suite.levels) {
    LevelReport lr;
    lr.k = level.k;
    std::vector<RewardMatrix> mats;
    for (std::size_t n = 0; n < level.prompts.size(); ++n) {
      const Prompt& prompt = level.prompts[n];
      RewardMatrix R(static_cast<std::size_t>(cfg.images), prompt.size());
      for (int g = 0; g < cfg.images; ++g) {
        Rng rng(cfg.seed, "bench_sample",
                {static_cast<std::uint64_t>(level.k), n, static_cast<std::uint64_t>(g)});
        const Trajectory tr = sample_trajectory(params, prompt.conditioning, sampler, rng);
        const RewardVector rv = score_latent(tr.terminal(), prompt, cb, cfg.reward);
        std::vector<bool> passes(prompt.size());
        for (std::size_t c = 0; c < prompt.size(); ++c) {
          const auto row = static_cast<std::size_t>(g);
          R(row, c) = rv.entries[c].reward;
          R.set_valid(row, c, rv.entries[c].valid);
          passes[c] = pass_concept(prompt.concepts[c], rv.entries[c]);
          const auto t = static_cast<std::size_t>(prompt.concepts[c].index());
          ++lr.type_total[t];
          lr.type_pass[t] += passes[c] ? 1 : 0;
        }
        const PromptGrade grade = full_mark_and_fraction(passes);
        lr.full_mark += grade.full_mark ? 1.0 : 0.0;
        lr.fraction += grade.fraction;
        ++lr.samples;
      }
      mats.push_back(std::move(R));
    }
    if (lr.samples > 0) {
      lr.full_mark /= static_cast<double>(lr.samples);
      lr.fraction /= static_cast<double>(lr.samples);
    }
    if (cfg.images >= 2) lr.neg_corr = neg_corr_ratio(mats, cfg.corr_eps_std);
    report.levels.push_back(lr);
    report.rewards.push_back(std::move(mats));
  }
  return report;
}

}  // namespace cmo
