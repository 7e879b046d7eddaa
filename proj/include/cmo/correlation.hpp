#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace cmo {

/// G x K concept rewards for one group, row-major (row = sample, col = concept),
/// with a per-entry validity flag.
class RewardMatrix {
 public:
  RewardMatrix() = default;
  RewardMatrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), values_(rows * cols, 0.0), valid_(rows * cols, 1) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  bool valid(std::size_t r, std::size_t c) const { return valid_[r * cols_ + c] != 0; }
  void set_valid(std::size_t r, std::size_t c, bool v) { valid_[r * cols_ + c] = v ? 1 : 0; }

  bool all_valid() const {
    return std::all_of(valid_.begin(), valid_.end(), [](char v) { return v != 0; });
  }

  std::vector<double> column(std::size_t c) const {
    std::vector<double> out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
    return out;
  }

  std::span<const double> data() const { return values_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
  std::vector<char> valid_;
};

inline constexpr double kDefaultStdEps = 1e-6;

/// K x K Pearson matrix. Entries touching a column whose population std is
/// below the threshold are undefined.
struct CorrelationMatrix {
  std::size_t k = 0;
  std::vector<double> values;
  std::vector<char> defined;

  double operator()(std::size_t a, std::size_t b) const { return values[a * k + b]; }
  bool is_defined(std::size_t a, std::size_t b) const { return defined[a * k + b] != 0; }
};

/// Population mean and std of each column, single pass (Welford).
struct ColumnMoments {
  std::vector<double> mean;
  std::vector<double> stddev;
};

inline ColumnMoments column_moments(const RewardMatrix& R) {
  const std::size_t G = R.rows(), K = R.cols();
  ColumnMoments m{std::vector<double>(K, 0.0), std::vector<double>(K, 0.0)};
  std::vector<double> m2(K, 0.0);
  for (std::size_t r = 0; r < G; ++r) {
    const double n = static_cast<double>(r + 1);
    for (std::size_t c = 0; c < K; ++c) {
      const double delta = R(r, c) - m.mean[c];
      m.mean[c] += delta / n;
      m2[c] += delta * (R(r, c) - m.mean[c]);
    }
  }
  for (std::size_t c = 0; c < K; ++c) m.stddev[c] = G > 0 ? std::sqrt(std::max(0.0, m2[c]) / static_cast<double>(G)) : 0.0;
  return m;
}

inline CorrelationMatrix pearson_corr_matrix(const RewardMatrix& R, double eps_std = kDefaultStdEps) {
  const std::size_t G = R.rows(), K = R.cols();
  if (G < 2) throw std::invalid_argument("pearson_corr_matrix: need at least 2 samples");
  CorrelationMatrix C{K, std::vector<double>(K * K, 0.0), std::vector<char>(K * K, 0)};

  // Online co-moment accumulation.
  std::vector<double> mean(K, 0.0);
  std::vector<double> co(K * K, 0.0);
  std::vector<double> delta(K);
  for (std::size_t r = 0; r < G; ++r) {
    const double n = static_cast<double>(r + 1);
    for (std::size_t a = 0; a < K; ++a) delta[a] = R(r, a) - mean[a];
    for (std::size_t a = 0; a < K; ++a) mean[a] += delta[a] / n;
    for (std::size_t a = 0; a < K; ++a) {
      const double after = R(r, a) - mean[a];
      for (std::size_t b = 0; b < K; ++b) co[a * K + b] += after * delta[b];
    }
  }
  std::vector<double> sd(K);
  for (std::size_t a = 0; a < K; ++a) sd[a] = std::sqrt(std::max(0.0, co[a * K + a]) / static_cast<double>(G));

  for (std::size_t a = 0; a < K; ++a) {
    for (std::size_t b = a; b < K; ++b) {
      if (sd[a] < eps_std || sd[b] < eps_std) continue;
      double v = 1.0;
      if (a != b) {
        // Average the two accumulation orders, they agree up to rounding.
        const double cov = 0.5 * (co[a * K + b] + co[b * K + a]) / static_cast<double>(G);
        v = std::clamp(cov / (sd[a] * sd[b]), -1.0, 1.0);
      }
      C.values[a * K + b] = C.values[b * K + a] = v;
      C.defined[a * K + b] = C.defined[b * K + a] = 1;
    }
  }
  return C;
}

enum class BypassReason { none, padding, too_few_samples, single_concept };

struct DifficultyScores {
  std::vector<double> alpha;
  BypassReason bypass = BypassReason::none;
};

/// Average correlation of each concept with its peers. Zero-variance columns
/// and undefined peer entries count as the maximum correlation 1.0; invalid
/// entries or G < 2 bypass the whole estimate.
inline DifficultyScores difficulty_scores(const RewardMatrix& R, double eps_std = kDefaultStdEps) {
  const std::size_t K = R.cols();
  DifficultyScores out{std::vector<double>(K, 1.0), BypassReason::none};
  if (!R.all_valid()) {
    out.bypass = BypassReason::padding;
    return out;
  }
  if (R.rows() < 2) {
    out.bypass = BypassReason::too_few_samples;
    return out;
  }
  if (K < 2) {
    out.bypass = BypassReason::single_concept;
    return out;
  }
  const CorrelationMatrix C = pearson_corr_matrix(R, eps_std);
  for (std::size_t k = 0; k < K; ++k) {
    if (!C.is_defined(k, k)) continue;
    double sum = 0.0;
    for (std::size_t l = 0; l < K; ++l) {
      if (l == k) continue;
      sum += C.is_defined(k, l) ? C(k, l) : 1.0;
    }
    out.alpha[k] = std::clamp(sum / static_cast<double>(K - 1), -1.0, 1.0);
  }
  return out;
}

struct ConceptWeights {
  std::vector<double> w;
  double tau = 0.5;
};

/// Softmax over (1 - alpha) / tau.
inline ConceptWeights concept_weights(std::span<const double> alpha, double tau = 0.5) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw std::invalid_argument("concept_weights: tau must be > 0");
  if (alpha.empty()) throw std::invalid_argument("concept_weights: empty alpha");
  ConceptWeights out{std::vector<double>(alpha.size()), tau};
  double mx = -std::numeric_limits<double>::infinity();
  for (double a : alpha) mx = std::max(mx, (1.0 - a) / tau);
  double z = 0.0;
  for (std::size_t k = 0; k < alpha.size(); ++k) {
    out.w[k] = std::exp((1.0 - alpha[k]) / tau - mx);
    z += out.w[k];
  }
  for (double& v : out.w) v /= z;
  return out;
}

inline ConceptWeights uniform_weights(std::size_t K, double tau = 0.5) {
  return {std::vector<double>(K, 1.0 / static_cast<double>(K)), tau};
}

}  // namespace cmo
