#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cmo/bench.hpp"
#include "cmo/io.hpp"
#include "cmo/trainer.hpp"

namespace cmo {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
  RunConfig config;
  TrainerState state;
};

inline json checkpoint_json(const RunConfig& cfg, const TrainerState& st) {
  json j;
  j["format"] = "cmo-checkpoint";
  j["version"] = 1;
  j["iteration"] = st.iteration;
  j["fingerprint"] = config_fingerprint(cfg);
  j["config"] = echo_config(cfg);
  j["shape"] = {{"latent_dim", st.params.shape.latent_dim},
                {"cond_dim", st.params.shape.cond_dim},
                {"hidden", st.params.shape.hidden}};
  j["theta"] = st.params.theta;
  j["adam"] = {{"m", st.opt.m}, {"v", st.opt.v}, {"step", st.opt.step}};
  return j;
}

inline void save_checkpoint(const std::string& path, const RunConfig& cfg, const TrainerState& st) {
  write_file(path, checkpoint_json(cfg, st).dump() + "\n");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw std::runtime_error("checkpoint '" + path + "': " + e.what());
  }
  if (j.value("format", "") != "cmo-checkpoint" || j.value("version", 0) != 1)
    throw std::runtime_error("checkpoint '" + path + "': unsupported format");
  Checkpoint ck;
  ck.config = parse_config(j.at("config").get<std::string>());
  ck.config.validate();
  if (config_fingerprint(ck.config) != j.at("fingerprint").get<std::string>())
    throw std::runtime_error("checkpoint '" + path + "': config fingerprint mismatch");
  const PolicyShape shape{j.at("shape").at("latent_dim").get<int>(), j.at("shape").at("cond_dim").get<int>(),
                          j.at("shape").at("hidden").get<int>()};
  if (!(shape == ck.config.train.policy_shape()))
    throw std::runtime_error("checkpoint '" + path + "': policy shape does not match its config");
  ck.state.params.shape = shape;
  ck.state.params.theta = j.at("theta").get<std::vector<double>>();
  if (ck.state.params.theta.size() != shape.param_count())
    throw std::runtime_error("checkpoint '" + path + "': parameter count mismatch");
  ck.state.opt.m = j.at("adam").at("m").get<std::vector<double>>();
  ck.state.opt.v = j.at("adam").at("v").get<std::vector<double>>();
  ck.state.opt.step = j.at("adam").at("step").get<long long>();
  ck.state.iteration = j.at("iteration").get<int>();
  return ck;
}

// ---------------------------------------------------------------------------
// Metrics CSV

inline std::string metrics_header() {
  std::string h = "iteration,mean_reward,full_mark_rate";
  for (const char* t : kConceptTypeNames) h += std::string(",reward_") + t;
  h += ",mean_abs_advantage,mean_alpha,mean_min_weight,mean_max_weight,neg_corr_ratio,neg_corr_defined,"
       "zero_variance_fraction,bypassed_groups,invalid_samples,skipped_updates,first_step_ratio_deviation,"
       "mean_kl,clip_fraction";
  return h;
}

inline std::string metrics_row(const IterationLog& l) {
  std::string r = std::to_string(l.iteration) + "," + fmt_double(l.mean_reward) + "," + fmt_double(l.full_mark_rate);
  for (std::size_t t = 0; t < kConceptTypeNames.size(); ++t)
    r += "," + (l.type_count[t] ? fmt_double(l.type_mean[t]) : std::string("nan"));
  r += "," + fmt_double(l.mean_abs_advantage) + "," + fmt_double(l.mean_alpha) + "," + fmt_double(l.mean_min_weight) +
       "," + fmt_double(l.mean_max_weight) + "," + fmt_double(l.neg_corr_ratio) + "," +
       (l.neg_corr_defined ? "1" : "0") + "," + fmt_double(l.zero_variance_fraction) + "," +
       std::to_string(l.bypassed_groups) + "," + std::to_string(l.invalid_samples) + "," +
       std::to_string(l.skipped_updates) + "," + fmt_double(l.first_step_ratio_deviation) + "," +
       fmt_double(l.mean_kl) + "," + fmt_double(l.clip_fraction);
  return r;
}

// ---------------------------------------------------------------------------
// Training driver

struct TrainOutcome {
  TrainerState state;
  std::vector<IterationLog> logs;  // iterations run in this call
  bool halted_non_finite = false;
  std::string diagnostic_checkpoint;
};

inline std::string checkpoint_path(const RunConfig& cfg, int iteration, const std::string& suffix = "") {
  return (fs::path(cfg.output_dir) / "checkpoints" / ("ckpt_" + std::to_string(iteration) + suffix + ".json")).string();
}

/// Runs iterations state.iteration .. cfg.train.iterations, writing
/// metrics.csv, config.toml and checkpoints under cfg.output_dir. With
/// `resume`, metric rows at or past the resume point are discarded first.
inline TrainOutcome train(const RunConfig& cfg, const std::optional<std::string>& resume = std::nullopt,
                          std::ostream* progress = nullptr) {
  cfg.validate();
  const TrainConfig& tc = cfg.train;
  if (tc.group_size < 8)
    std::cerr << "warning: group_size = " << tc.group_size
              << " is below 8; group statistics are unreliable and training may collapse\n";

  const fs::path out(cfg.output_dir);
  fs::create_directories(out / "checkpoints");
  write_file((out / "config.toml").string(), echo_config(cfg));

  TrainOutcome res;
  if (resume) {
    Checkpoint ck = load_checkpoint(*resume);
    if (config_fingerprint(ck.config) != config_fingerprint(cfg))
      throw std::runtime_error("resume: checkpoint was written by a different configuration");
    res.state = std::move(ck.state);
  } else {
    res.state = TrainerState::initial(tc);
  }

  // Rewrite metrics.csv, keeping rows from before the resume point.
  const std::string metrics_path = (out / "metrics.csv").string();
  std::vector<std::string> kept;
  if (resume && fs::exists(metrics_path)) {
    std::stringstream ss(read_file(metrics_path));
    std::string line;
    while (std::getline(ss, line)) {
      if (line.empty() || line[0] == '#' || line.rfind("iteration,", 0) == 0) continue;
      if (std::stoi(line.substr(0, line.find(','))) < res.state.iteration) kept.push_back(line);
    }
  }
  std::ofstream metrics(metrics_path, std::ios::binary | std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot write '" + metrics_path + "'");
  metrics << "# aggregation=" << to_string(tc.aggregation) << " fingerprint=" << config_fingerprint(cfg) << "\n"
          << metrics_header() << "\n";
  for (const auto& l : kept) metrics << l << "\n";
  metrics.flush();

  const Codebook cb = Codebook::standard(tc.codebook_seed);
  const std::vector<Prompt> pool = make_prompt_pool(tc, cb);

  if (res.state.iteration >= tc.iterations) {
    save_checkpoint(checkpoint_path(cfg, res.state.iteration), cfg, res.state);
    return res;
  }
  while (res.state.iteration < tc.iterations) {
    const int it = res.state.iteration;
    IterationLog log;
    try {
      log = train_iteration(res.state, sample_batch(pool, tc, it), tc, cb);
    } catch (const NonFiniteParams& e) {
      res.halted_non_finite = true;
      res.diagnostic_checkpoint = checkpoint_path(cfg, it, "_nonfinite");
      save_checkpoint(res.diagnostic_checkpoint, cfg, res.state);
      std::cerr << "error: " << e.what() << "; diagnostic checkpoint " << res.diagnostic_checkpoint << "\n";
      return res;
    }
    metrics << metrics_row(log) << "\n";
    metrics.flush();
    if (progress && (it % 10 == 0 || it + 1 == tc.iterations))
      *progress << "iter " << it << " reward " << fmt_double(log.mean_reward) << " full_mark "
                << fmt_double(log.full_mark_rate) << " neg_corr " << fmt_double(log.neg_corr_ratio) << "\n";
    res.logs.push_back(std::move(log));
    const bool last = res.state.iteration == tc.iterations;
    if (last || (cfg.checkpoint_every > 0 && res.state.iteration % cfg.checkpoint_every == 0))
      save_checkpoint(checkpoint_path(cfg, res.state.iteration), cfg, res.state);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Benchmark report CSV

inline std::string report_header() {
  std::string h = "k,full_mark,fraction,neg_corr_ratio,neg_corr_pairs,samples";
  for (const char* t : kConceptTypeNames) h += std::string(",pass_") + t;
  return h;
}

inline std::string report_row(const LevelReport& l) {
  std::string r = std::to_string(l.k) + "," + fmt_double(l.full_mark) + "," + fmt_double(l.fraction) + "," +
                  fmt_double(l.neg_corr.ratio) + "," + std::to_string(l.neg_corr.pairs) + "," +
                  std::to_string(l.samples);
  for (int t = 0; t < kConceptTypes; ++t)
    r += "," + (l.type_total[static_cast<std::size_t>(t)] ? fmt_double(l.type_pass_rate(t)) : std::string("nan"));
  return r;
}

inline std::string format_report(const BenchReport& report) {
  std::string out = report_header() + "\n";
  for (const auto& l : report.levels) out += report_row(l) + "\n";
  return out;
}

/// Labels for the columns of a prompt's reward matrix, e.g. "count:dog".
inline std::vector<std::string> concept_labels(const Prompt& p, const Codebook& cb) {
  std::vector<std::string> out;
  for (const auto& c : p.concepts) {
    std::string label = kConceptTypeNames[c.index()];
    for (int cat : concept_categories(c))
      label += ":" + (cb.has_category(cat) ? cb.category_names[static_cast<std::size_t>(cat)] : std::to_string(cat));
    out.push_back(label);
  }
  return out;
}

}  // namespace cmo
