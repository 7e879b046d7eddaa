#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmo/correlation.hpp"
#include "cmo/rng.hpp"
#include "cmo/scene.hpp"
#include "cmo/trainer.hpp"

namespace cmo {

using json = nlohmann::json;

/// Shortest round-trip decimal form.
inline std::string fmt_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Scene / concept / prompt JSON

inline const char* to_string(SizeDirection d) { return d == SizeDirection::huge ? "huge" : "tiny"; }

inline const char* to_string(Relation2D r) {
  static constexpr const char* names[] = {"left", "right", "above", "below", "inside", "outside"};
  return names[static_cast<int>(r)];
}

inline const char* to_string(Relation3D r) { return r == Relation3D::in_front_of ? "in_front_of" : "behind"; }

namespace detail {

inline int lookup_name(const json& j, const std::vector<std::string>& names, const char* what) {
  if (j.is_number_integer()) return j.get<int>();
  if (!j.is_string()) throw std::invalid_argument(std::string(what) + ": expected a name or an index");
  const auto s = j.get<std::string>();
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == s) return static_cast<int>(i);
  throw std::invalid_argument(std::string(what) + ": unknown name '" + s + "'");
}

inline std::vector<std::string> attribute_names(const Codebook& cb) {
  std::vector<std::string> out;
  for (const auto& a : cb.attributes) out.push_back(a.name);
  return out;
}

inline const json& field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw std::invalid_argument(std::string("missing field '") + key + "'");
  return j.at(key);
}

template <class E, std::size_t N>
E parse_enum(const json& j, const std::array<const char*, N>& names, const char* what) {
  const auto s = j.get<std::string>();
  for (std::size_t i = 0; i < N; ++i)
    if (s == names[i]) return static_cast<E>(i);
  throw std::invalid_argument(std::string(what) + ": unknown value '" + s + "'");
}

}  // namespace detail

inline json to_json(const ConceptSpec& c, const Codebook& cb) {
  auto cat = [&](int id) -> json {
    return cb.has_category(id) ? json(cb.category_names[static_cast<std::size_t>(id)]) : json(id);
  };
  json j;
  j["type"] = kConceptTypeNames[c.index()];
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Exist>) {
          j["category"] = cat(v.category);
        } else if constexpr (std::is_same_v<T, Attr>) {
          j["category"] = cat(v.category);
          j["attr_category"] = v.attr_category >= 0 && v.attr_category < cb.num_attributes()
                                   ? json(cb.attributes[static_cast<std::size_t>(v.attr_category)].name)
                                   : json(v.attr_category);
          j["target_value_index"] = v.target_value_index;
        } else if constexpr (std::is_same_v<T, Count>) {
          j["category"] = cat(v.category);
          j["target_count"] = v.target_count;
        } else if constexpr (std::is_same_v<T, Size>) {
          j["category"] = cat(v.category);
          j["direction"] = to_string(v.direction);
        } else {
          j["category_i"] = cat(v.category_i);
          j["category_j"] = cat(v.category_j);
          j["relation"] = to_string(v.relation);
        }
      },
      c);
  return j;
}

inline ConceptSpec concept_from_json(const json& j, const Codebook& cb) {
  using detail::field;
  const auto type = field(j, "type").get<std::string>();
  auto cat = [&](const char* key) { return detail::lookup_name(field(j, key), cb.category_names, key); };
  if (type == "exist") return Exist{cat("category")};
  if (type == "attr")
    return Attr{cat("category"), detail::lookup_name(field(j, "attr_category"), detail::attribute_names(cb), "attr_category"),
                field(j, "target_value_index").get<int>()};
  if (type == "count") return Count{cat("category"), field(j, "target_count").get<int>()};
  if (type == "size") {
    static constexpr std::array<const char*, 2> names{"huge", "tiny"};
    return Size{cat("category"), detail::parse_enum<SizeDirection>(field(j, "direction"), names, "direction")};
  }
  if (type == "rel2d") {
    static constexpr std::array<const char*, 6> names{"left", "right", "above", "below", "inside", "outside"};
    return Rel2D{cat("category_i"), cat("category_j"),
                 detail::parse_enum<Relation2D>(field(j, "relation"), names, "relation")};
  }
  if (type == "rel3d") {
    static constexpr std::array<const char*, 2> names{"in_front_of", "behind"};
    return Rel3D{cat("category_i"), cat("category_j"),
                 detail::parse_enum<Relation3D>(field(j, "relation"), names, "relation")};
  }
  throw std::invalid_argument("unknown concept type '" + type + "'");
}

inline json to_json(const Prompt& p, const Codebook& cb) {
  json j;
  j["concepts"] = json::array();
  for (const auto& c : p.concepts) j["concepts"].push_back(to_json(c, cb));
  j["conditioning"] = p.conditioning;
  return j;
}

/// Conditioning is always recomputed from the concepts; a stored vector that
/// disagrees is rejected.
inline Prompt prompt_from_json(const json& j, const Codebook& cb) {
  const json& arr = detail::field(j, "concepts");
  if (!arr.is_array() || arr.empty()) throw std::invalid_argument("prompt: 'concepts' must be a non-empty array");
  std::vector<ConceptSpec> concepts;
  for (const auto& c : arr) concepts.push_back(concept_from_json(c, cb));
  for (const auto& c : concepts)
    if (!concept_valid(c, cb)) throw std::invalid_argument("prompt: concept references unknown category or value");
  Prompt p = make_prompt(std::move(concepts));
  if (j.contains("conditioning") && j.at("conditioning").get<std::vector<double>>() != p.conditioning)
    throw std::invalid_argument("prompt: stored conditioning does not match the concepts");
  return p;
}

inline json to_json(const Scene& s) {
  json j;
  j["objects"] = json::array();
  for (const auto& o : s.objects) {
    j["objects"].push_back({{"category_id", o.category_id},
                            {"bbox",
                             {{"x_min", o.bbox.x_min},
                              {"y_min", o.bbox.y_min},
                              {"x_max", o.bbox.x_max},
                              {"y_max", o.bbox.y_max}}},
                            {"depth", o.depth},
                            {"attr_embedding", {o.attr_embedding[0], o.attr_embedding[1]}}});
  }
  return j;
}

inline Scene scene_from_json(const json& j, const Codebook& cb) {
  using detail::field;
  Scene s;
  const json& objs = field(j, "objects");
  if (!objs.is_array()) throw std::invalid_argument("scene: 'objects' must be an array");
  if (objs.size() > static_cast<std::size_t>(kSlots))
    throw std::invalid_argument("scene: more than " + std::to_string(kSlots) + " objects");
  for (const auto& oj : objs) {
    SceneObject o;
    o.category_id = detail::lookup_name(field(oj, "category_id"), cb.category_names, "category_id");
    if (!cb.has_category(o.category_id)) throw std::invalid_argument("scene: category_id out of range");
    const json& b = field(oj, "bbox");
    o.bbox = {field(b, "x_min").get<double>(), field(b, "y_min").get<double>(), field(b, "x_max").get<double>(),
              field(b, "y_max").get<double>()};
    require_valid(o.bbox);
    o.depth = field(oj, "depth").get<double>();
    if (!(o.depth >= 0.0 && o.depth <= 1.0)) throw std::invalid_argument("scene: depth must be in [0, 1]");
    const auto e = field(oj, "attr_embedding").get<std::vector<double>>();
    if (e.size() != 2) throw std::invalid_argument("scene: attr_embedding must have 2 entries");
    o.attr_embedding = {e[0], e[1]};
    if (std::abs(norm(o.attr_embedding) - 1.0) > 1e-9) throw std::invalid_argument("scene: attr_embedding must be unit-norm");
    s.objects.push_back(o);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Reward CSV: header row of concept labels, one row per sample. An empty or
// "nan" cell marks an invalid reward.

struct LabeledRewards {
  std::vector<std::string> labels;
  RewardMatrix rewards;
};

namespace detail {
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}
}  // namespace detail

inline LabeledRewards parse_reward_csv(const std::string& text) {
  std::stringstream ss(text);
  std::string line;
  std::vector<std::string> labels;
  std::vector<std::vector<std::string>> rows;
  while (std::getline(ss, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto cells = detail::split_csv_line(line);
    if (labels.empty()) {
      labels = std::move(cells);
      continue;
    }
    if (cells.size() != labels.size())
      throw std::invalid_argument("reward csv: row " + std::to_string(rows.size() + 1) + " has " +
                                  std::to_string(cells.size()) + " cells, expected " + std::to_string(labels.size()));
    rows.push_back(std::move(cells));
  }
  if (labels.empty()) throw std::invalid_argument("reward csv: missing header row");
  RewardMatrix R(rows.size(), labels.size());
  for (std::size_t g = 0; g < rows.size(); ++g)
    for (std::size_t k = 0; k < labels.size(); ++k) {
      const std::string& cell = rows[g][k];
      if (cell.empty() || cell == "nan" || cell == "NaN") {
        R.set_valid(g, k, false);
        continue;
      }
      double v = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (res.ec != std::errc{} || res.ptr != cell.data() + cell.size())
        throw std::invalid_argument("reward csv: bad number '" + cell + "'");
      R(g, k) = v;
      R.set_valid(g, k, std::isfinite(v));
    }
  return {std::move(labels), std::move(R)};
}

inline std::string format_reward_csv(const RewardMatrix& R, const std::vector<std::string>& labels) {
  std::string out;
  for (std::size_t k = 0; k < labels.size(); ++k) out += (k ? "," : "") + labels[k];
  out += "\n";
  for (std::size_t g = 0; g < R.rows(); ++g) {
    for (std::size_t k = 0; k < R.cols(); ++k) {
      if (k) out += ",";
      if (R.valid(g, k)) out += fmt_double(R(g, k));
    }
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Run configuration: flat `key = value` lines, `#` comments. Strings are
// double-quoted. Unknown keys, duplicates and type mismatches are errors.

struct RunConfig {
  TrainConfig train;
  std::string output_dir = "runs/default";
  int checkpoint_every = 50;

  void validate() const {
    train.validate();
    if (output_dir.empty()) throw std::invalid_argument("output_dir: must not be empty");
    if (checkpoint_every < 0) throw std::invalid_argument("checkpoint_every: must be >= 0");
  }
};

namespace detail {

enum class Kind { integer, unsigned_integer, real, string };

struct ConfigField {
  const char* key;
  Kind kind;
  bool fingerprinted;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

inline long long parse_int(const std::string& key, const std::string& v) {
  long long x = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), x);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
    throw std::invalid_argument(key + ": expected an integer, got '" + v + "'");
  return x;
}

inline int parse_int32(const std::string& key, const std::string& v) {
  const long long x = parse_int(key, v);
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max())
    throw std::invalid_argument(key + ": integer out of range");
  return static_cast<int>(x);
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t x = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), x);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
    throw std::invalid_argument(key + ": expected a non-negative integer, got '" + v + "'");
  return x;
}

inline double parse_real(const std::string& key, const std::string& v) {
  double x = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), x);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size() || !std::isfinite(x))
    throw std::invalid_argument(key + ": expected a number, got '" + v + "'");
  return x;
}

#define CMO_INT(name, member, fp)                                                                        \
  ConfigField{name, Kind::integer, fp, [](const RunConfig& c) { return std::to_string(c.member); },      \
              [](RunConfig& c, const std::string& v) { c.member = parse_int32(name, v); }}
#define CMO_U64(name, member, fp)                                                                        \
  ConfigField{name, Kind::unsigned_integer, fp, [](const RunConfig& c) { return std::to_string(c.member); }, \
              [](RunConfig& c, const std::string& v) { c.member = parse_u64(name, v); }}
#define CMO_REAL(name, member, fp)                                                                       \
  ConfigField{name, Kind::real, fp, [](const RunConfig& c) { return fmt_double(c.member); },             \
              [](RunConfig& c, const std::string& v) { c.member = parse_real(name, v); }}

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = {
      CMO_U64("seed", train.seed, true),
      CMO_INT("iterations", train.iterations, false),
      CMO_INT("batch_prompts", train.batch_prompts, true),
      CMO_INT("group_size", train.group_size, true),
      ConfigField{"aggregation", Kind::string, true,
                  [](const RunConfig& c) { return std::string(to_string(c.train.aggregation)); },
                  [](RunConfig& c, const std::string& v) {
                    try {
                      c.train.aggregation = aggregation_from_string(v);
                    } catch (const std::invalid_argument& e) {
                      throw std::invalid_argument(std::string("aggregation: ") + e.what());
                    }
                  }},
      CMO_REAL("tau", train.tau, true),
      CMO_REAL("beta", train.beta, true),
      CMO_REAL("clip_eps", train.clip_eps, true),
      CMO_REAL("lr", train.adam.lr, true),
      CMO_REAL("adam_beta1", train.adam.beta1, true),
      CMO_REAL("adam_beta2", train.adam.beta2, true),
      CMO_REAL("adam_eps", train.adam.eps, true),
      CMO_REAL("weight_decay", train.adam.weight_decay, true),
      CMO_INT("total_steps", train.sampler.total_steps, true),
      CMO_INT("sde_steps", train.sampler.sde_steps, true),
      CMO_INT("window_start", train.sampler.window_start, true),
      CMO_REAL("noise_level", train.sampler.noise_level, true),
      CMO_INT("window_shift_every", train.window_shift_every, true),
      CMO_REAL("margin_frac", train.reward.margin_frac, true),
      CMO_REAL("inside_threshold", train.reward.inside_threshold, true),
      CMO_REAL("outside_threshold", train.reward.outside_threshold, true),
      CMO_REAL("depth_eps", train.reward.depth_eps, true),
      ConfigField{"attr_mode", Kind::string, true,
                  [](const RunConfig& c) {
                    return std::string(c.train.reward.attr_mode == AttrRewardMode::contrastive ? "contrastive"
                                                                                               : "cosine");
                  },
                  [](RunConfig& c, const std::string& v) {
                    if (v == "contrastive") c.train.reward.attr_mode = AttrRewardMode::contrastive;
                    else if (v == "cosine") c.train.reward.attr_mode = AttrRewardMode::cosine;
                    else throw std::invalid_argument("attr_mode: expected contrastive or cosine, got '" + v + "'");
                  }},
      CMO_REAL("attr_logit_scale", train.reward.attr_logit_scale, true),
      CMO_REAL("corr_eps_std", train.corr_eps_std, true),
      CMO_REAL("norm_eps", train.norm_eps, true),
      CMO_INT("hidden", train.hidden, true),
      CMO_U64("codebook_seed", train.codebook_seed, true),
      CMO_INT("pool_size", train.pool_size, true),
      CMO_REAL("single_ratio", train.single_ratio, true),
      CMO_INT("train_kmax", train.train_kmax, true),
      CMO_INT("workers", train.workers, false),
      ConfigField{"output_dir", Kind::string, false, [](const RunConfig& c) { return c.output_dir; },
                  [](RunConfig& c, const std::string& v) { c.output_dir = v; }},
      CMO_INT("checkpoint_every", checkpoint_every, false),
  };
  return fields;
}

#undef CMO_INT
#undef CMO_U64
#undef CMO_REAL

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"' || ch == '\\') out += '\\';
    out += ch;
  }
  return out + "\"";
}

}  // namespace detail

/// Applies `key = value` lines on top of `base`. Validation is left to the caller.
inline RunConfig parse_config(const std::string& text, RunConfig base = {}) {
  const auto& fields = detail::config_fields();
  std::map<std::string, int> seen;
  std::stringstream ss(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(ss, raw)) {
    ++lineno;
    std::string line = detail::trim(raw);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));

    const detail::ConfigField* f = nullptr;
    for (const auto& cand : fields)
      if (key == cand.key) f = &cand;
    if (!f) throw std::invalid_argument(key + ": unknown key");
    if (seen.count(key)) throw std::invalid_argument(key + ": duplicate key (line " + std::to_string(lineno) + ")");
    seen[key] = lineno;

    if (f->kind == detail::Kind::string) {
      if (value.size() < 2 || value.front() != '"')
        throw std::invalid_argument(key + ": expected a quoted string");
      std::string out;
      std::size_t i = 1;
      for (; i < value.size() && value[i] != '"'; ++i) {
        if (value[i] == '\\' && i + 1 < value.size()) ++i;
        out += value[i];
      }
      if (i >= value.size()) throw std::invalid_argument(key + ": unterminated string");
      const std::string rest = detail::trim(value.substr(i + 1));
      if (!rest.empty() && rest[0] != '#') throw std::invalid_argument(key + ": trailing characters after string");
      value = out;
    } else {
      const auto hash = value.find('#');
      if (hash != std::string::npos) value = detail::trim(value.substr(0, hash));
      if (!value.empty() && value.front() == '"') throw std::invalid_argument(key + ": expected a number, got a string");
    }
    f->set(base, value);
  }
  return base;
}

inline RunConfig load_config(const std::string& path) {
  RunConfig cfg = parse_config(read_file(path));
  cfg.validate();
  return cfg;
}

/// Every key with its effective value, in a fixed order; parses back to the same config.
inline std::string echo_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : detail::config_fields()) {
    const std::string v = f.get(cfg);
    out += std::string(f.key) + " = " + (f.kind == detail::Kind::string ? detail::quote(v) : v) + "\n";
  }
  return out;
}

/// Hash over the keys that change what a run computes. Iteration count,
/// output location, checkpoint cadence and worker count are excluded.
inline std::string config_fingerprint(const RunConfig& cfg) {
  std::string text;
  for (const auto& f : detail::config_fields())
    if (f.fingerprinted) text += std::string(f.key) + "=" + f.get(cfg) + ";";
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(text)));
  return buf;
}

}  // namespace cmo
