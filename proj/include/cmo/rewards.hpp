#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "cmo/geometry.hpp"
#include "cmo/scene.hpp"

namespace cmo {

enum class AttrRewardMode { contrastive, cosine };

struct RewardConfig {
  double margin_frac = 0.1;         // 2D tolerance relative to the smaller box side
  double inside_threshold = 0.95;   // A_{i∩j} / A_i
  double outside_threshold = 0.1;   // A_{i∩j} / min(A_i, A_j)
  double depth_eps = 0.02;
  AttrRewardMode attr_mode = AttrRewardMode::contrastive;
  double attr_logit_scale = 10.0;
};

struct ConceptScore {
  double reward = 0.0;
  bool valid = true;
  // Attr only: candidate index the best instance classifies as, -1 if absent.
  int attr_argmax = -1;
};

struct RewardVector {
  std::vector<ConceptScore> entries;

  std::size_t size() const { return entries.size(); }
  double operator[](std::size_t k) const { return entries[k].reward; }
  bool all_valid() const {
    return std::all_of(entries.begin(), entries.end(), [](const ConceptScore& e) { return e.valid; });
  }
};

// ---------------------------------------------------------------------------
// Individual concept rewards

inline int count_category(const Scene& scene, int category) {
  return static_cast<int>(std::count_if(scene.objects.begin(), scene.objects.end(),
                                        [&](const SceneObject& o) { return o.category_id == category; }));
}

inline double existence_reward(const Scene& scene, int category) {
  return count_category(scene, category) > 0 ? 1.0 : 0.0;
}

namespace detail {
inline void require_unit(const Vec2& v, const char* what) {
  const double n = norm(v);
  if (!(n > 0.0)) throw std::invalid_argument(std::string(what) + ": zero-norm vector");
  if (std::abs(n - 1.0) > 1e-6) throw std::invalid_argument(std::string(what) + ": vector is not unit-norm");
}
}  // namespace detail

inline double attribute_reward_cosine(const Vec2& f_img, const Vec2& f_text) {
  detail::require_unit(f_img, "attribute_reward_cosine");
  detail::require_unit(f_text, "attribute_reward_cosine");
  return std::max(0.0, dot(f_img, f_text));
}

/// Softmax probability of the target candidate under logits scale * <f_img, f_v>.
inline double attribute_reward_contrastive(const Vec2& f_img, std::span<const Vec2> candidates,
                                           std::size_t target_index, double logit_scale) {
  if (candidates.size() < 2) throw std::invalid_argument("attribute_reward_contrastive: need at least 2 candidates");
  if (target_index >= candidates.size()) throw std::invalid_argument("attribute_reward_contrastive: bad target index");
  if (!(logit_scale > 0.0)) throw std::invalid_argument("attribute_reward_contrastive: logit scale must be > 0");
  double mx = -std::numeric_limits<double>::infinity();
  for (const auto& c : candidates) mx = std::max(mx, logit_scale * dot(f_img, c));
  double denom = 0.0;
  for (const auto& c : candidates) denom += std::exp(logit_scale * dot(f_img, c) - mx);
  return std::exp(logit_scale * dot(f_img, candidates[target_index]) - mx) / denom;
}

inline double numeracy_reward(int count, int target) {
  if (count < 0 || target < 1) throw std::invalid_argument("numeracy_reward: need count >= 0 and target >= 1");
  const double dev = std::abs(count - target) + 1.0;
  return 1.0 / (dev * dev);
}

/// 1/rank^2 where rank is 1-based in descending (huge) or ascending (tiny)
/// area order; ties share the best rank.
inline double size_reward(std::span<const double> areas, std::size_t target, SizeDirection dir) {
  if (target >= areas.size()) throw std::invalid_argument("size_reward: target index out of range");
  const double a = areas[target];
  std::size_t better = 0;
  for (double other : areas)
    if (dir == SizeDirection::huge ? other > a : other < a) ++better;
  const double rank = static_cast<double>(better + 1);
  return 1.0 / (rank * rank);
}

inline double spatial2d_reward(const BBox& bi, const BBox& bj, Relation2D rel, double margin_frac = 0.1) {
  const PairGeometry g = bbox_geometry(bi, bj);
  const double tx = margin_frac * std::min(g.width_i, g.width_j);
  const double ty = margin_frac * std::min(g.height_i, g.height_j);
  switch (rel) {
    case Relation2D::left:
      if (bi.x_max < bj.x_min + tx && g.overlap_y) return 1.0;
      return g.center_i[0] < g.center_j[0] ? 0.5 : 0.0;
    case Relation2D::right:
      if (bi.x_min > bj.x_max - tx && g.overlap_y) return 1.0;
      return g.center_i[0] > g.center_j[0] ? 0.5 : 0.0;
    case Relation2D::above:
      if (bi.y_max < bj.y_min + ty && g.overlap_x) return 1.0;
      return g.center_i[1] < g.center_j[1] ? 0.5 : 0.0;
    case Relation2D::below:
      if (bi.y_min > bj.y_max - ty && g.overlap_x) return 1.0;
      return g.center_i[1] > g.center_j[1] ? 0.5 : 0.0;
    default:
      throw std::invalid_argument("spatial2d_reward: inclusion relations go through inclusion_reward");
  }
}

inline double inclusion_reward(const BBox& bi, const BBox& bj, Relation2D rel, double inside_threshold = 0.95,
                               double outside_threshold = 0.1) {
  const PairGeometry g = bbox_geometry(bi, bj);
  if (rel == Relation2D::inside) {
    const double ratio = g.area_i > 0.0 ? g.intersection / g.area_i : 1.0;
    return ratio >= inside_threshold ? 1.0 : 0.0;
  }
  if (rel == Relation2D::outside) {
    const double m = std::min(g.area_i, g.area_j);
    const double ratio = m > 0.0 ? g.intersection / m : 0.0;
    return ratio < outside_threshold ? 1.0 : 0.0;
  }
  throw std::invalid_argument("inclusion_reward: relation must be inside or outside");
}

inline double depth_relation_reward(double di, double dj, Relation3D rel, double eps = 0.02) {
  if (rel == Relation3D::in_front_of) {
    if (di < dj - eps) return 1.0;
    return di < dj ? 0.5 : 0.0;
  }
  if (di > dj + eps) return 1.0;
  return di > dj ? 0.5 : 0.0;
}

// ---------------------------------------------------------------------------
// Dispatcher

namespace detail {

inline std::vector<const SceneObject*> instances(const Scene& s, int category) {
  std::vector<const SceneObject*> out;
  for (const auto& o : s.objects)
    if (o.category_id == category) out.push_back(&o);
  return out;
}

inline ConceptScore score_one(const Scene& scene, const ConceptSpec& spec, const Codebook& cb,
                              const RewardConfig& cfg) {
  ConceptScore out;
  if (!concept_valid(spec, cb)) {
    out.valid = false;
    return out;
  }
  std::visit(
      [&](const auto& c) {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, Exist>) {
          out.reward = existence_reward(scene, c.category);
        } else if constexpr (std::is_same_v<T, Count>) {
          out.reward = numeracy_reward(count_category(scene, c.category), c.target_count);
        } else if constexpr (std::is_same_v<T, Attr>) {
          const auto& kind = cb.attributes[static_cast<std::size_t>(c.attr_category)];
          const auto target = static_cast<std::size_t>(c.target_value_index);
          for (const SceneObject* o : instances(scene, c.category)) {
            const double r = cfg.attr_mode == AttrRewardMode::contrastive
                                 ? attribute_reward_contrastive(o->attr_embedding, kind.values, target,
                                                                cfg.attr_logit_scale)
                                 : attribute_reward_cosine(o->attr_embedding, kind.values[target]);
            if (out.attr_argmax < 0 || r > out.reward) {
              out.reward = r;
              std::size_t best = 0;
              for (std::size_t v = 1; v < kind.values.size(); ++v)
                if (dot(o->attr_embedding, kind.values[v]) > dot(o->attr_embedding, kind.values[best])) best = v;
              out.attr_argmax = static_cast<int>(best);
            }
          }
        } else if constexpr (std::is_same_v<T, Size>) {
          std::vector<double> areas;
          std::ptrdiff_t target = -1;
          for (const auto& o : scene.objects) {
            const double a = o.bbox.area();
            if (o.category_id == c.category) {
              const bool better = target < 0 || (c.direction == SizeDirection::huge
                                                     ? a > areas[static_cast<std::size_t>(target)]
                                                     : a < areas[static_cast<std::size_t>(target)]);
              if (better) target = static_cast<std::ptrdiff_t>(areas.size());
            }
            areas.push_back(a);
          }
          if (target >= 0) out.reward = size_reward(areas, static_cast<std::size_t>(target), c.direction);
        } else if constexpr (std::is_same_v<T, Rel2D>) {
          for (const SceneObject* a : instances(scene, c.category_i))
            for (const SceneObject* b : instances(scene, c.category_j)) {
              const double r = (c.relation == Relation2D::inside || c.relation == Relation2D::outside)
                                   ? inclusion_reward(a->bbox, b->bbox, c.relation, cfg.inside_threshold,
                                                      cfg.outside_threshold)
                                   : spatial2d_reward(a->bbox, b->bbox, c.relation, cfg.margin_frac);
              out.reward = std::max(out.reward, r);
            }
        } else {
          for (const SceneObject* a : instances(scene, c.category_i))
            for (const SceneObject* b : instances(scene, c.category_j))
              out.reward = std::max(out.reward, depth_relation_reward(a->depth, b->depth, c.relation, cfg.depth_eps));
        }
      },
      spec);
  return out;
}

}  // namespace detail

/// One reward per prompt concept, in prompt order. Concepts on objects that
/// are absent score 0; malformed concepts are flagged invalid.
inline RewardVector score_concepts(const Scene& scene, const Prompt& prompt, const Codebook& cb,
                                   const RewardConfig& cfg = {}) {
  RewardVector rv;
  rv.entries.reserve(prompt.concepts.size());
  for (const auto& c : prompt.concepts) rv.entries.push_back(detail::score_one(scene, c, cb, cfg));
  return rv;
}

}  // namespace cmo

namespace cmo {

/// Decodes a terminal latent with the prompt's vocabulary and scores it. A
/// decode failure yields all-invalid entries instead of an exception.
inline RewardVector score_latent(std::span<const double> latent, const Prompt& prompt, const Codebook& cb,
                                 const RewardConfig& cfg = {}) {
  try {
    const auto vocab = prompt_vocab(prompt.concepts, cb);
    return score_concepts(decode_scene(latent, cb, vocab), prompt, cb, cfg);
  } catch (const std::invalid_argument&) {
    RewardVector rv;
    rv.entries.assign(prompt.concepts.size(), ConceptScore{0.0, false, -1});
    return rv;
  }
}

}  // namespace cmo
