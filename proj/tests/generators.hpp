#pragma once

#include "cmo/correlation.hpp"
#include "cmo/rng.hpp"

namespace gen {

// Random G x K reward matrix mixing the shapes rewards actually take:
// continuous, binary, {0, 0.5, 1}, 1/n^2 ladders and constant columns.
inline cmo::RewardMatrix reward_matrix(cmo::Rng& rng, std::size_t G, std::size_t K) {
  cmo::RewardMatrix R(G, K);
  for (std::size_t k = 0; k < K; ++k) {
    const auto kind = rng.index(5);
    const double c = rng.uniform();
    for (std::size_t j = 0; j < G; ++j) {
      double v = 0.0;
      switch (kind) {
        case 0: v = rng.uniform(); break;
        case 1: v = rng.uniform() < 0.5 ? 1.0 : 0.0; break;
        case 2: v = 0.5 * static_cast<double>(rng.index(3)); break;
        case 3: {
          const double d = 1.0 + static_cast<double>(rng.index(4));
          v = 1.0 / (d * d);
          break;
        }
        default: v = c; break;
      }
      R(j, k) = v;
    }
  }
  return R;
}

}  // namespace gen
