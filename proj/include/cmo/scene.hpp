#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "cmo/geometry.hpp"
#include "cmo/rng.hpp"

namespace cmo {

using Vec2 = std::array<double, 2>;

inline constexpr int kSlots = 6;
inline constexpr int kSlotWidth = 10;
inline constexpr int kLatentDim = kSlots * kSlotWidth;
inline constexpr int kCondDim = 32;

inline double dot(const Vec2& a, const Vec2& b) { return a[0] * b[0] + a[1] * b[1]; }
inline double norm(const Vec2& a) { return std::hypot(a[0], a[1]); }
inline double logistic(double u) { return 1.0 / (1.0 + std::exp(-u)); }

struct AttributeKind {
  std::string name;
  std::vector<std::string> value_names;
  std::vector<Vec2> values;
};

/// Category and attribute-value prototypes, all unit vectors evenly spaced on
/// the circle. A non-zero seed rotates each ring by a seed-derived phase.
struct Codebook {
  std::vector<std::string> category_names;
  std::vector<Vec2> categories;
  std::vector<AttributeKind> attributes;

  static Codebook standard(std::uint64_t seed = 0) {
    auto ring = [seed](std::size_t n, std::uint64_t ring_id) {
      double phase = 0.0;
      if (seed != 0) {
        Rng r(seed, "codebook", {ring_id});
        phase = r.uniform(0.0, 2.0 * std::numbers::pi / static_cast<double>(n));
      }
      std::vector<Vec2> out(n);
      for (std::size_t j = 0; j < n; ++j) {
        const double a = phase + 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(n);
        out[j] = {std::cos(a), std::sin(a)};
      }
      return out;
    };
    Codebook cb;
    cb.category_names = {"dog", "cat", "car", "tree", "cup", "ball", "chair", "bird"};
    cb.categories = ring(cb.category_names.size(), 0);
    AttributeKind color{"color", {"red", "orange", "yellow", "green", "blue", "purple"}, {}};
    color.values = ring(color.value_names.size(), 1);
    AttributeKind texture{"texture", {"wooden", "metallic", "furry", "glass"}, {}};
    texture.values = ring(texture.value_names.size(), 2);
    cb.attributes = {std::move(color), std::move(texture)};
    return cb;
  }

  int num_categories() const { return static_cast<int>(categories.size()); }
  int num_attributes() const { return static_cast<int>(attributes.size()); }
  bool has_category(int c) const { return c >= 0 && c < num_categories(); }
  bool has_value(int kind, int value) const {
    return kind >= 0 && kind < num_attributes() && value >= 0 &&
           value < static_cast<int>(attributes[static_cast<std::size_t>(kind)].values.size());
  }
};

struct SceneObject {
  int category_id = 0;
  BBox bbox;
  double depth = 0.5;  // 0 = nearest to the camera
  Vec2 attr_embedding{1.0, 0.0};

  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

struct Scene {
  std::vector<SceneObject> objects;
  friend bool operator==(const Scene&, const Scene&) = default;
};

// ---------------------------------------------------------------------------
// Concepts

enum class SizeDirection { huge, tiny };
enum class Relation2D { left, right, above, below, inside, outside };
enum class Relation3D { in_front_of, behind };

struct Exist {
  int category = 0;
  friend bool operator==(const Exist&, const Exist&) = default;
};
struct Attr {
  int category = 0;
  int attr_category = 0;
  int target_value_index = 0;
  friend bool operator==(const Attr&, const Attr&) = default;
};
struct Count {
  int category = 0;
  int target_count = 1;
  friend bool operator==(const Count&, const Count&) = default;
};
struct Size {
  int category = 0;
  SizeDirection direction = SizeDirection::huge;
  friend bool operator==(const Size&, const Size&) = default;
};
struct Rel2D {
  int category_i = 0;
  int category_j = 1;
  Relation2D relation = Relation2D::left;
  friend bool operator==(const Rel2D&, const Rel2D&) = default;
};
struct Rel3D {
  int category_i = 0;
  int category_j = 1;
  Relation3D relation = Relation3D::in_front_of;
  friend bool operator==(const Rel3D&, const Rel3D&) = default;
};

using ConceptSpec = std::variant<Exist, Attr, Count, Size, Rel2D, Rel3D>;

enum class ConceptType { exist = 0, attr, count, size, rel2d, rel3d };
inline constexpr int kConceptTypes = 6;
inline constexpr std::array<const char*, kConceptTypes> kConceptTypeNames = {
    "exist", "attr", "count", "size", "rel2d", "rel3d"};

inline ConceptType concept_type(const ConceptSpec& c) {
  return static_cast<ConceptType>(c.index());
}

/// Categories a concept refers to (one or two).
inline std::vector<int> concept_categories(const ConceptSpec& c) {
  return std::visit(
      [](const auto& v) -> std::vector<int> {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Rel2D> || std::is_same_v<T, Rel3D>)
          return {v.category_i, v.category_j};
        else
          return {v.category};
      },
      c);
}

inline bool concept_valid(const ConceptSpec& c, const Codebook& cb) {
  return std::visit(
      [&](const auto& v) -> bool {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Exist> || std::is_same_v<T, Size>) {
          return cb.has_category(v.category);
        } else if constexpr (std::is_same_v<T, Attr>) {
          return cb.has_category(v.category) && cb.has_value(v.attr_category, v.target_value_index);
        } else if constexpr (std::is_same_v<T, Count>) {
          return cb.has_category(v.category) && v.target_count >= 1;
        } else {
          return cb.has_category(v.category_i) && cb.has_category(v.category_j) &&
                 v.category_i != v.category_j;
        }
      },
      c);
}

struct Prompt {
  std::vector<ConceptSpec> concepts;
  std::vector<double> conditioning;  // kCondDim entries

  std::size_t size() const { return concepts.size(); }
};

/// Sorted distinct categories referenced by the valid concepts of a prompt.
inline std::vector<int> prompt_vocab(const std::vector<ConceptSpec>& concepts, const Codebook& cb) {
  std::vector<int> vocab;
  for (const auto& c : concepts) {
    if (!concept_valid(c, cb)) continue;
    for (int cat : concept_categories(c)) vocab.push_back(cat);
  }
  std::sort(vocab.begin(), vocab.end());
  vocab.erase(std::unique(vocab.begin(), vocab.end()), vocab.end());
  return vocab;
}

// ---------------------------------------------------------------------------
// Prompt conditioning

inline std::uint64_t concept_key(const ConceptSpec& c) {
  auto ids = std::visit(
      [](const auto& v) -> std::array<std::uint64_t, 3> {
        using T = std::decay_t<decltype(v)>;
        auto u = [](auto x) { return static_cast<std::uint64_t>(static_cast<std::int64_t>(x)); };
        if constexpr (std::is_same_v<T, Exist>) return {u(v.category), 0, 0};
        else if constexpr (std::is_same_v<T, Attr>) return {u(v.category), u(v.attr_category), u(v.target_value_index)};
        else if constexpr (std::is_same_v<T, Count>) return {u(v.category), u(v.target_count), 0};
        else if constexpr (std::is_same_v<T, Size>) return {u(v.category), u(v.direction), 0};
        else return {u(v.category_i), u(v.category_j), u(v.relation)};
      },
      c);
  return stream_seed(0x5EEDC0DEULL, "concept", {c.index(), ids[0], ids[1], ids[2]});
}

/// Order-independent conditioning vector: unit-norm per-concept codes summed
/// in key order and scaled by 1/sqrt(K).
inline std::vector<double> prompt_embed(const std::vector<ConceptSpec>& concepts) {
  if (concepts.empty()) throw std::invalid_argument("prompt_embed: empty concept list");
  std::vector<std::uint64_t> keys;
  keys.reserve(concepts.size());
  for (const auto& c : concepts) keys.push_back(concept_key(c));
  std::sort(keys.begin(), keys.end());

  std::vector<double> out(kCondDim, 0.0);
  std::vector<double> code(kCondDim);
  for (std::uint64_t key : keys) {
    Rng r(key);
    double n2 = 0.0;
    for (double& v : code) {
      v = r.normal();
      n2 += v * v;
    }
    const double inv = 1.0 / std::sqrt(n2);
    for (int d = 0; d < kCondDim; ++d) out[static_cast<std::size_t>(d)] += code[static_cast<std::size_t>(d)] * inv;
  }
  const double s = 1.0 / std::sqrt(static_cast<double>(concepts.size()));
  for (double& v : out) v *= s;
  return out;
}

inline Prompt make_prompt(std::vector<ConceptSpec> concepts) {
  Prompt p;
  p.conditioning = prompt_embed(concepts);
  p.concepts = std::move(concepts);
  return p;
}

// ---------------------------------------------------------------------------
// Decoder

/// Decodes a terminal latent into a scene. Per-slot layout:
/// [a, u_x, u_y, u_w, u_h, u_d, k1, k2, v1, v2]; a slot is present iff a > 0
/// and both direction pairs are non-degenerate.
inline Scene decode_scene(std::span<const double> latent, const Codebook& cb,
                          std::span<const int> vocab) {
  if (latent.size() != static_cast<std::size_t>(kLatentDim))
    throw std::invalid_argument("decode_scene: latent dimension must be " + std::to_string(kLatentDim));
  for (double v : latent)
    if (!std::isfinite(v)) throw std::invalid_argument("decode_scene: non-finite latent");
  if (vocab.empty()) throw std::invalid_argument("decode_scene: empty vocabulary");
  for (int c : vocab)
    if (!cb.has_category(c)) throw std::invalid_argument("decode_scene: vocabulary category not in codebook");

  Scene scene;
  for (int s = 0; s < kSlots; ++s) {
    const double* z = latent.data() + s * kSlotWidth;
    if (!(z[0] > 0.0)) continue;
    const Vec2 k{z[6], z[7]};
    const Vec2 v{z[8], z[9]};
    const double nk = norm(k);
    const double nv = norm(v);
    if (nk < 1e-9 || nv < 1e-9) continue;

    const double cx = logistic(z[1]);
    const double cy = logistic(z[2]);
    const double w = 0.05 + 0.45 * logistic(z[3]);
    const double h = 0.05 + 0.45 * logistic(z[4]);

    SceneObject obj;
    obj.bbox = {std::clamp(cx - 0.5 * w, 0.0, 1.0), std::clamp(cy - 0.5 * h, 0.0, 1.0),
                std::clamp(cx + 0.5 * w, 0.0, 1.0), std::clamp(cy + 0.5 * h, 0.0, 1.0)};
    obj.depth = logistic(z[5]);

    const Vec2 kn{k[0] / nk, k[1] / nk};
    double best = -2.0;
    for (int c : vocab) {
      const double score = dot(kn, cb.categories[static_cast<std::size_t>(c)]);
      if (score > best) {
        best = score;
        obj.category_id = c;
      }
    }
    obj.attr_embedding = {v[0] / nv, v[1] / nv};
    scene.objects.push_back(obj);
  }
  return scene;
}

}  // namespace cmo
