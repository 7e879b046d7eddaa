#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "cmo/correlation.hpp"

namespace cmo {

/// Per-concept group-relative advantages of one group (G x K, row-major).
struct GroupAdvantages {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
  std::vector<double> mean;
  std::vector<double> stddev;

  double operator()(std::size_t j, std::size_t k) const { return values[j * cols + k]; }
};

/// Standardizes every reward column within the group using population
/// moments over its valid entries. Saturated columns (std < eps) and invalid
/// entries get advantage 0.
inline GroupAdvantages group_normalize(const RewardMatrix& R, double eps = 1e-8) {
  const std::size_t G = R.rows(), K = R.cols();
  if (G < 2) throw std::invalid_argument("group_normalize: need at least 2 samples per group");
  GroupAdvantages out{G, K, std::vector<double>(G * K, 0.0), std::vector<double>(K, 0.0),
                      std::vector<double>(K, 0.0)};
  for (std::size_t k = 0; k < K; ++k) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t j = 0; j < G; ++j)
      if (R.valid(j, k)) {
        sum += R(j, k);
        ++n;
      }
    if (n == 0) continue;
    const double mu = sum / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t j = 0; j < G; ++j)
      if (R.valid(j, k)) ss += (R(j, k) - mu) * (R(j, k) - mu);
    const double sd = std::sqrt(ss / static_cast<double>(n));
    out.mean[k] = mu;
    out.stddev[k] = sd;
    if (n < 2 || sd < eps) continue;
    for (std::size_t j = 0; j < G; ++j)
      if (R.valid(j, k)) out.values[j * K + k] = (R(j, k) - mu) / sd;
  }
  return out;
}

struct BatchAdvantages {
  std::vector<std::vector<double>> weighted_sum;  // s per group, per sample
  std::vector<std::vector<double>> total;         // batch-normalized
  double mean = 0.0;
  double stddev = 0.0;
};

/// s = sum_k w_k A_k for every sample, then (s - mu_B) / (sigma_B + eps) with
/// population statistics pooled over the whole batch.
inline BatchAdvantages weighted_total_advantage(std::span<const GroupAdvantages> groups,
                                                std::span<const ConceptWeights> weights, double eps = 1e-8) {
  if (groups.empty()) throw std::invalid_argument("weighted_total_advantage: empty batch");
  if (groups.size() != weights.size())
    throw std::invalid_argument("weighted_total_advantage: one weight vector per group required");
  BatchAdvantages out;
  out.weighted_sum.resize(groups.size());
  std::size_t n = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto& A = groups[i];
    const auto& w = weights[i].w;
    if (w.size() != A.cols) throw std::invalid_argument("weighted_total_advantage: weight count != concept count");
    auto& s = out.weighted_sum[i];
    s.assign(A.rows, 0.0);
    for (std::size_t j = 0; j < A.rows; ++j) {
      for (std::size_t k = 0; k < A.cols; ++k) s[j] += w[k] * A(j, k);
      sum += s[j];
    }
    n += A.rows;
  }
  if (n < 2) throw std::invalid_argument("weighted_total_advantage: need at least 2 samples in the batch");
  out.mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (const auto& s : out.weighted_sum)
    for (double v : s) ss += (v - out.mean) * (v - out.mean);
  out.stddev = std::sqrt(ss / static_cast<double>(n));
  out.total.resize(groups.size());
  for (std::size_t i = 0; i < groups.size(); ++i) {
    out.total[i].resize(out.weighted_sum[i].size());
    for (std::size_t j = 0; j < out.weighted_sum[i].size(); ++j)
      out.total[i][j] = (out.weighted_sum[i][j] - out.mean) / (out.stddev + eps);
  }
  return out;
}

}  // namespace cmo
