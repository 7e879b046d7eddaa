#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cmo/advantage.hpp"
#include "cmo/bench.hpp"
#include "cmo/correlation.hpp"
#include "cmo/io.hpp"
#include "cmo/rewards.hpp"
#include "cmo/run.hpp"

namespace {

using namespace cmo;
namespace fs = std::filesystem;

json matrix_json(const std::vector<double>& values, std::size_t rows, std::size_t cols,
                 const std::vector<char>* defined = nullptr) {
  json out = json::array();
  for (std::size_t r = 0; r < rows; ++r) {
    json row = json::array();
    for (std::size_t c = 0; c < cols; ++c) {
      if (defined && !(*defined)[r * cols + c]) row.push_back(nullptr);
      else row.push_back(values[r * cols + c]);
    }
    out.push_back(std::move(row));
  }
  return out;
}

const char* bypass_name(BypassReason b) {
  switch (b) {
    case BypassReason::none: return "none";
    case BypassReason::padding: return "padding";
    case BypassReason::too_few_samples: return "too_few_samples";
    case BypassReason::single_concept: return "single_concept";
  }
  return "?";
}

int cmd_score(const std::string& scene_path, const std::string& prompt_path, std::uint64_t codebook_seed) {
  const Codebook cb = Codebook::standard(codebook_seed);
  const Scene scene = scene_from_json(json::parse(read_file(scene_path)), cb);
  const Prompt prompt = prompt_from_json(json::parse(read_file(prompt_path)), cb);
  const RewardVector rv = score_concepts(scene, prompt, cb);
  json out;
  out["concepts"] = json::array();
  std::vector<bool> passes;
  for (std::size_t k = 0; k < prompt.size(); ++k) {
    const bool pass = pass_concept(prompt.concepts[k], rv.entries[k]);
    passes.push_back(pass);
    json e = {{"concept", to_json(prompt.concepts[k], cb)},
              {"reward", rv.entries[k].reward},
              {"valid", rv.entries[k].valid},
              {"pass", pass}};
    if (rv.entries[k].attr_argmax >= 0) e["attr_argmax"] = rv.entries[k].attr_argmax;
    out["concepts"].push_back(std::move(e));
  }
  const PromptGrade grade = full_mark_and_fraction(passes);
  out["full_mark"] = grade.full_mark;
  out["fraction"] = grade.fraction;
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_weights(const std::string& path, double tau, bool with_advantages, double eps_std) {
  const LabeledRewards lr = parse_reward_csv(read_file(path));
  const RewardMatrix& R = lr.rewards;
  const std::size_t K = R.cols();
  const DifficultyScores alpha = difficulty_scores(R, eps_std);
  const ConceptWeights w = concept_weights(alpha.alpha, tau);
  json out;
  out["labels"] = lr.labels;
  out["samples"] = R.rows();
  out["alpha"] = alpha.alpha;
  out["bypass"] = bypass_name(alpha.bypass);
  out["tau"] = tau;
  out["weights"] = w.w;
  if (R.rows() >= 2 && R.all_valid()) {
    const CorrelationMatrix C = pearson_corr_matrix(R, eps_std);
    out["correlation"] = matrix_json(C.values, K, K, &C.defined);
  } else {
    out["correlation"] = nullptr;
  }
  if (with_advantages) {
    const GroupAdvantages A = group_normalize(R);
    const std::vector<GroupAdvantages> groups{A};
    const std::vector<ConceptWeights> weights{w};
    const BatchAdvantages total = weighted_total_advantage(groups, weights);
    out["advantages"] = matrix_json(A.values, A.rows, A.cols);
    out["total_advantage"] = total.total[0];
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed, std::optional<std::string> out_dir,
              std::optional<std::string> resume) {
  RunConfig cfg = parse_config(config_path.empty() ? std::string() : read_file(config_path));
  if (seed) cfg.train.seed = *seed;
  if (out_dir) cfg.output_dir = *out_dir;
  cfg.validate();
  const TrainOutcome res = train(cfg, resume, &std::cerr);
  if (res.halted_non_finite) return 1;
  std::cout << (fs::path(cfg.output_dir) / "metrics.csv").string() << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, int kmax, int per_k, int images, bool deterministic,
             std::optional<std::uint64_t> seed, const std::string& out_path, const std::string& dump_dir) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const TrainConfig& tc = ck.config.train;
  const Codebook cb = Codebook::standard(tc.codebook_seed);
  const std::uint64_t s = seed.value_or(tc.seed);
  const BenchmarkSuite suite = make_suite(kmax, per_k, s, cb);
  BenchConfig bc;
  bc.images = images;
  bc.deterministic = deterministic;
  bc.seed = s;
  bc.sampler = tc.sampler;
  bc.reward = tc.reward;
  bc.corr_eps_std = tc.corr_eps_std;
  const BenchReport report = run_benchmark(ck.state.params, suite, cb, bc);
  const std::string text =
      "# checkpoint=" + ckpt_path + " iteration=" + std::to_string(ck.state.iteration) + " aggregation=" +
      to_string(tc.aggregation) + " mode=" + (deterministic ? "ode" : "sde") + " grading=strict-branch\n" +
      format_report(report);
  if (out_path.empty()) {
    std::cout << text;
  } else {
    const fs::path parent = fs::path(out_path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
    write_file(out_path, text);
  }
  if (!dump_dir.empty()) {
    fs::create_directories(dump_dir);
    for (std::size_t l = 0; l < suite.levels.size(); ++l)
      for (std::size_t n = 0; n < suite.levels[l].prompts.size(); ++n) {
        const std::string name =
            "rewards_k" + std::to_string(suite.levels[l].k) + "_p" + std::to_string(n) + ".csv";
        write_file((fs::path(dump_dir) / name).string(),
                   format_reward_csv(report.rewards[l][n], concept_labels(suite.levels[l].prompts[n], cb)));
      }
  }
  return 0;
}

// Groups reward files by concept count K and reports the negative-correlation
// ratio per complexity level k = K - 1.
int cmd_analyze(const std::string& dir, double eps_std) {
  if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: '" + dir + "'");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no .csv reward files in '" + dir + "'");
  std::map<std::size_t, std::vector<RewardMatrix>> by_k;
  for (const auto& f : files) {
    LabeledRewards lr = parse_reward_csv(read_file(f.string()));
    if (lr.rewards.cols() == 0) continue;
    if (lr.rewards.rows() < 2) throw std::runtime_error(f.string() + ": fewer than 2 samples");
    by_k[lr.rewards.cols() - 1].push_back(std::move(lr.rewards));
  }
  std::cout << "k,groups,pairs,negative,neg_corr_ratio,defined\n";
  for (const auto& [k, mats] : by_k) {
    const NegCorrRatio r = neg_corr_ratio(mats, eps_std);
    std::cout << k << "," << mats.size() << "," << r.pairs << "," << r.negative << "," << fmt_double(r.ratio) << ","
              << (r.defined() ? 1 : 0) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Correlation-weighted multi-reward optimization on a synthetic scene task"};
  app.require_subcommand(1);

  std::string scene_path, prompt_path;
  std::uint64_t codebook_seed = 0;
  auto* score = app.add_subcommand("score", "Score a scene against a prompt; prints a JSON reward breakdown");
  score->add_option("--scene", scene_path, "Scene JSON")->required()->check(CLI::ExistingFile);
  score->add_option("--prompt", prompt_path, "Prompt JSON")->required()->check(CLI::ExistingFile);
  score->add_option("--codebook-seed", codebook_seed, "Codebook seed");

  std::string rewards_path;
  double tau = 0.5, eps_std = kDefaultStdEps;
  bool with_adv = false;
  auto* weights = app.add_subcommand("weights", "Correlation, difficulty and weights for one G x K reward CSV");
  weights->add_option("--rewards", rewards_path, "Reward CSV (header row of concept labels)")
      ->required()
      ->check(CLI::ExistingFile);
  weights->add_option("--tau", tau, "Softmax temperature")->check(CLI::PositiveNumber);
  weights->add_option("--eps-std", eps_std, "Std threshold below which a column counts as constant");
  weights->add_flag("--advantages", with_adv, "Also print per-concept and total advantages");

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir, resume;
  auto* trn = app.add_subcommand("train", "Train the policy; writes metrics.csv and checkpoints");
  trn->add_option("--config", config_path, "run.toml (absent keys take defaults)")->check(CLI::ExistingFile);
  trn->add_option("--seed", seed, "Master seed (overrides the config)");
  trn->add_option("--out", out_dir, "Output directory (overrides the config)");
  trn->add_option("--resume", resume, "Checkpoint to resume from")->check(CLI::ExistingFile);

  std::string ckpt_path, report_path, dump_dir;
  int kmax = 7, per_k = 50, images = 10;
  bool deterministic = false;
  std::optional<std::uint64_t> eval_seed;
  auto* ev = app.add_subcommand("eval", "Benchmark a checkpoint; writes report.csv");
  ev->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required()->check(CLI::ExistingFile);
  ev->add_option("--kmax", kmax, "Hardest level")->check(CLI::Range(1, 7));
  ev->add_option("--per-k", per_k, "Prompts per level")->check(CLI::PositiveNumber);
  ev->add_option("--images", images, "Samples per prompt")->check(CLI::PositiveNumber);
  ev->add_flag("--deterministic", deterministic, "Evaluate the ODE path");
  ev->add_option("--seed", eval_seed, "Suite and sampling seed (default: the checkpoint's seed)");
  ev->add_option("--out", report_path, "Report CSV path (default: stdout)");
  ev->add_option("--dump-rewards", dump_dir, "Directory for per-prompt reward CSVs");

  std::string rewards_dir;
  auto* an = app.add_subcommand("analyze", "Negative-correlation ratio by complexity from stored reward CSVs");
  an->add_option("--rewards-dir", rewards_dir, "Directory of reward CSVs")->required();
  an->add_option("--eps-std", eps_std, "Std threshold below which a column counts as constant");

  if (argc > 1 && argv[1][0] != '-') {
    const std::string sub = argv[1];
    const auto subs = app.get_subcommands([](const CLI::App*) { return true; });
    if (std::none_of(subs.begin(), subs.end(), [&](const CLI::App* s) { return s->get_name() == sub; })) {
      std::cerr << app.help() << "error: unknown subcommand '" << sub << "'\n";
      return 2;
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help() << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*score) return cmd_score(scene_path, prompt_path, codebook_seed);
    if (*weights) return cmd_weights(rewards_path, tau, with_adv, eps_std);
    if (*trn) return cmd_train(config_path, seed, out_dir, resume);
    if (*ev) return cmd_eval(ckpt_path, kmax, per_k, images, deterministic, eval_seed, report_path, dump_dir);
    if (*an) return cmd_analyze(rewards_dir, eps_std);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error: " << msg << "\n";
    return 1;
  }
  return 2;
}
