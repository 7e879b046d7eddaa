#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "cmo/rng.hpp"
#include "cmo/scene.hpp"

namespace cmo {

struct PolicyShape {
  int latent_dim = kLatentDim;
  int cond_dim = kCondDim;
  int hidden = 64;

  int input_dim() const { return latent_dim + 1 + cond_dim; }
  std::size_t param_count() const {
    const auto in = static_cast<std::size_t>(input_dim());
    const auto h = static_cast<std::size_t>(hidden);
    const auto d = static_cast<std::size_t>(latent_dim);
    return h * in + h + d * h + d;
  }
  friend bool operator==(const PolicyShape&, const PolicyShape&) = default;
};

/// Two-layer tanh perceptron v(x, t, c) -> R^d stored as one flat vector:
/// W1 (hidden x in), b1 (hidden), W2 (d x hidden), b2 (d).
struct PolicyParams {
  PolicyShape shape;
  std::vector<double> theta;

  static PolicyParams init(const PolicyShape& shape, std::uint64_t seed) {
    PolicyParams p{shape, std::vector<double>(shape.param_count())};
    Rng rng(seed, "policy_init", {});
    const double s1 = 1.0 / std::sqrt(static_cast<double>(shape.input_dim()));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(shape.hidden));
    auto w1 = p.w1(), b1 = p.b1(), w2 = p.w2(), b2 = p.b2();
    for (double& v : w1) v = rng.uniform(-s1, s1);
    for (double& v : b1) v = rng.uniform(-s1, s1);
    for (double& v : w2) v = rng.uniform(-s2, s2);
    for (double& v : b2) v = rng.uniform(-s2, s2);
    return p;
  }

  std::span<double> w1() { return slice(0, w1_size()); }
  std::span<double> b1() { return slice(w1_size(), h()); }
  std::span<double> w2() { return slice(w1_size() + h(), w2_size()); }
  std::span<double> b2() { return slice(w1_size() + h() + w2_size(), d()); }
  std::span<const double> w1() const { return cslice(0, w1_size()); }
  std::span<const double> b1() const { return cslice(w1_size(), h()); }
  std::span<const double> w2() const { return cslice(w1_size() + h(), w2_size()); }
  std::span<const double> b2() const { return cslice(w1_size() + h() + w2_size(), d()); }

  bool finite() const {
    for (double v : theta)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const PolicyParams&, const PolicyParams&) = default;

 private:
  std::size_t h() const { return static_cast<std::size_t>(shape.hidden); }
  std::size_t d() const { return static_cast<std::size_t>(shape.latent_dim); }
  std::size_t w1_size() const { return h() * static_cast<std::size_t>(shape.input_dim()); }
  std::size_t w2_size() const { return d() * h(); }
  std::span<double> slice(std::size_t off, std::size_t n) { return std::span<double>(theta).subspan(off, n); }
  std::span<const double> cslice(std::size_t off, std::size_t n) const {
    return std::span<const double>(theta).subspan(off, n);
  }
};

/// Activations kept for the backward pass.
struct VelocityCache {
  std::vector<double> input;
  std::vector<double> hidden;
};

inline void velocity(const PolicyParams& p, std::span<const double> x, double t, std::span<const double> c,
                     std::span<double> out, VelocityCache* cache = nullptr) {
  const auto& s = p.shape;
  if (x.size() != static_cast<std::size_t>(s.latent_dim) || c.size() != static_cast<std::size_t>(s.cond_dim) ||
      out.size() != x.size())
    throw std::invalid_argument("velocity: dimension mismatch");
  VelocityCache local;
  VelocityCache& k = cache ? *cache : local;
  const auto in_dim = static_cast<std::size_t>(s.input_dim());
  const auto H = static_cast<std::size_t>(s.hidden);
  k.input.resize(in_dim);
  std::size_t n = 0;
  for (double v : x) k.input[n++] = v;
  k.input[n++] = t;
  for (double v : c) k.input[n++] = v;
  for (double v : k.input)
    if (!std::isfinite(v)) throw std::invalid_argument("velocity: non-finite input");

  const auto w1 = p.w1(), b1 = p.b1(), w2 = p.w2(), b2 = p.b2();
  k.hidden.resize(H);
  for (std::size_t h = 0; h < H; ++h) {
    const double* row = w1.data() + h * in_dim;
    double acc = b1[h];
    for (std::size_t i = 0; i < in_dim; ++i) acc += row[i] * k.input[i];
    k.hidden[h] = std::tanh(acc);
  }
  for (std::size_t o = 0; o < out.size(); ++o) {
    const double* row = w2.data() + o * H;
    double acc = b2[o];
    for (std::size_t h = 0; h < H; ++h) acc += row[h] * k.hidden[h];
    out[o] = acc;
  }
}

inline std::vector<double> velocity(const PolicyParams& p, std::span<const double> x, double t,
                                    std::span<const double> c) {
  std::vector<double> v(x.size());
  velocity(p, x, t, c, v);
  return v;
}

/// Accumulates d(loss)/d(theta) into grad given d(loss)/dv and the cache of
/// the matching forward pass.
inline void velocity_backward(const PolicyParams& p, const VelocityCache& cache, std::span<const double> dv,
                              std::span<double> grad) {
  const auto& s = p.shape;
  const auto in_dim = static_cast<std::size_t>(s.input_dim());
  const auto H = static_cast<std::size_t>(s.hidden);
  const auto D = static_cast<std::size_t>(s.latent_dim);
  const std::size_t off_b1 = H * in_dim, off_w2 = off_b1 + H, off_b2 = off_w2 + D * H;
  const auto w2 = p.w2();

  std::vector<double> dh(H, 0.0);
  for (std::size_t o = 0; o < D; ++o) {
    const double g = dv[o];
    if (g == 0.0) continue;
    grad[off_b2 + o] += g;
    double* gw = grad.data() + off_w2 + o * H;
    const double* row = w2.data() + o * H;
    for (std::size_t h = 0; h < H; ++h) {
      gw[h] += g * cache.hidden[h];
      dh[h] += g * row[h];
    }
  }
  for (std::size_t h = 0; h < H; ++h) {
    const double dpre = dh[h] * (1.0 - cache.hidden[h] * cache.hidden[h]);
    if (dpre == 0.0) continue;
    grad[off_b1 + h] += dpre;
    double* gw = grad.data() + h * in_dim;
    for (std::size_t i = 0; i < in_dim; ++i) gw[i] += dpre * cache.input[i];
  }
}

}  // namespace cmo
