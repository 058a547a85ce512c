// Copyright 2026 The turncredit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// turncredit: train, score, eval, plot, sweep and fixture subcommands.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "turncredit/harness.hpp"
#include "turncredit/text.hpp"

namespace fs = std::filesystem;
using namespace turncredit;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string algo;
  std::string reward_source;
  std::optional<double> lambda_s;
  std::optional<int> max_turns;
  std::optional<int> runs;
  std::optional<int> steps;
  std::string out;
  std::vector<std::string> sets;
};

void add_overrides(CLI::App* app, Overrides& o, bool with_runs) {
  app->add_option("--config", o.config, "Flat key=value config file")->check(CLI::ExistingFile);
  app->add_option("--seed", o.seed, "Training seed");
  app->add_option("--algo", o.algo, "grpo-or | grpo-mr | mt-grpo | ppo-or | ppo-mr | mt-ppo");
  app->add_option("--reward-source", o.reward_source, "verifiable | judge");
  app->add_option("--lambda-s", o.lambda_s, "Search count penalty");
  app->add_option("--max-turns", o.max_turns, "Turn limit N_max");
  app->add_option("--steps", o.steps, "Training steps");
  if (with_runs) app->add_option("--runs", o.runs, "Independent runs (seeds seed..seed+runs-1)");
  app->add_option("--out", o.out, "Output directory");
  app->add_option("--set", o.sets, "Extra key=value override, repeatable");
}

RunConfig resolve(const Overrides& o) {
  std::string text = o.config.empty() ? run_config_to_text(RunConfig{}) : run_config_to_text(load_run_config(o.config));
  auto put = [&text](const std::string& k, const std::string& v) { text += k + "=" + v + "\n"; };
  if (o.seed) put("seed", std::to_string(*o.seed));
  if (!o.algo.empty()) put("algo", o.algo);
  if (!o.reward_source.empty()) put("reward_source", o.reward_source);
  if (o.lambda_s) put("lambda_s", std::to_string(*o.lambda_s));
  if (o.max_turns) put("max_turns", std::to_string(*o.max_turns));
  if (o.runs) put("runs", std::to_string(*o.runs));
  if (o.steps) put("steps", std::to_string(*o.steps));
  if (!o.out.empty()) put("out", o.out);
  for (const auto& s : o.sets) text += s + "\n";
  RunConfig cfg = parse_run_config(text);
  cfg.train.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Turn-level credit assignment for multi-turn search agents"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  Overrides train_o;
  auto* train = app.add_subcommand("train", "Train one or more runs and write metrics, validation and checkpoints");
  add_overrides(train, train_o, true);

  std::string score_in, score_out, score_profile = "search_agent", score_source = "verifiable", score_level = "turn";
  double score_lambda = kDefaultLambdaS;
  JudgeOptions score_judge;
  auto* score = app.add_subcommand("score", "Score transcript lines (JSON) into per-turn reward breakdowns");
  score->add_option("input", score_in, "Transcript file, '-' for stdin")->required();
  score->add_option("-o,--output", score_out, "Output file (default stdout)");
  score->add_option("--profile", score_profile, "search_agent | two_turn_tool");
  score->add_option("--reward-source", score_source, "verifiable | judge");
  score->add_option("--level", score_level, "Judge level: outcome | turn");
  score->add_option("--lambda-s", score_lambda, "Search count penalty");
  score->add_option("--judge-retries", score_judge.retries, "Extra judge attempts");
  score->add_option("--judge-timeout", score_judge.timeout_s, "Judge request timeout in seconds");

  Overrides eval_o;
  std::string eval_ckpt, eval_policy = "checkpoint", eval_split = "val";
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint or scripted policy on a task split");
  add_overrides(eval, eval_o, false);
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file");
  eval->add_option("--policy", eval_policy, "checkpoint | oracle | never-answer | random-init");
  eval->add_option("--split", eval_split, "train | val | all");

  std::vector<std::string> plot_runs;
  PlotOptions plot_opts;
  std::string plot_out = plot_opts.out.string();
  auto* plot = app.add_subcommand("plot", "Plot mean curves with min-max bands across runs");
  plot->add_option("runs", plot_runs, "Run directories (or parents of run_* directories)")->required();
  plot->add_option("--ema", plot_opts.ema, "EMA factor in (0, 1]; 1 keeps raw curves");
  plot->add_option("--out", plot_out, "Output directory for SVGs and summary.csv");

  Overrides sweep_o;
  SweepOptions sweep_opts;
  auto* sweep = app.add_subcommand("sweep", "Train one member per parameter value, concurrently");
  add_overrides(sweep, sweep_o, true);
  sweep->add_option("--param", sweep_opts.param, "Config key to sweep");
  sweep->add_option("--values", sweep_opts.values, "Values, comma separated")->delimiter(',');

  Overrides fx_o;
  std::string fx_out = "fixture";
  auto* fixture = app.add_subcommand("fixture", "Export the synthetic corpus and tasks and print the checksum");
  fixture->add_option("--config", fx_o.config, "Flat key=value config file")->check(CLI::ExistingFile);
  fixture->add_option("--set", fx_o.sets, "Extra key=value override, repeatable");
  fixture->add_option("--out", fx_out, "Output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      const RunConfig cfg = resolve(train_o);
      for (const auto& r : cmd_train(cfg)) {
        const auto& v = r.validation;
        std::cout << r.dir.string() << ": " << r.metrics.size() << " steps";
        if (!v.empty()) std::cout << ", val outcome_reward " << v.back().second.outcome_reward;
        std::cout << "\n";
      }
    } else if (*score) {
      ScoreOptions opts;
      opts.profile = parse_profile(score_profile);
      opts.source = parse_reward_source(score_source);
      if (score_level == "outcome") {
        opts.level = JudgeLevel::kOutcome;
      } else if (score_level == "turn") {
        opts.level = JudgeLevel::kTurn;
      } else {
        throw std::invalid_argument("--level must be outcome or turn");
      }
      opts.lambda_s = score_lambda;
      opts.judge = score_judge;
      std::unique_ptr<JudgeClient> client;
      if (opts.source == RewardSource::kJudge) client = judge_client_from_env(opts.judge);
      std::ifstream file;
      if (score_in != "-") {
        file.open(score_in);
        if (!file) throw std::runtime_error("cannot read " + score_in);
      }
      std::ofstream out_file;
      if (!score_out.empty()) {
        out_file.open(score_out);
        if (!out_file) throw std::runtime_error("cannot write " + score_out);
      }
      std::istream& in = score_in == "-" ? std::cin : file;
      std::ostream& out = score_out.empty() ? std::cout : out_file;
      const ScoreStats stats = cmd_score(in, out, std::cerr, opts, client.get());
      std::cerr << "scored " << stats.scored << ", failed " << stats.failed << "\n";
      return stats.failed > 0 ? 1 : 0;
    } else if (*eval) {
      EvalRequest req;
      req.config = resolve(eval_o);
      req.checkpoint = eval_ckpt;
      req.policy = parse_eval_policy(eval_policy);
      req.split = eval_split;
      print_eval_table(std::cout, cmd_eval(req));
    } else if (*plot) {
      plot_opts.out = plot_out;
      std::vector<fs::path> runs(plot_runs.begin(), plot_runs.end());
      cmd_plot(runs, plot_opts);
      std::cout << "wrote " << plot_opts.out.string() << "\n";
    } else if (*sweep) {
      const RunConfig cfg = resolve(sweep_o);
      for (const auto& d : cmd_sweep(cfg, sweep_opts)) std::cout << d.string() << "\n";
    } else if (*fixture) {
      const RunConfig cfg = resolve(fx_o);
      const FixtureSplit split = load_fixture(cfg);
      fs::create_directories(fx_out);
      std::ofstream corpus(fs::path(fx_out) / "corpus.jsonl");
      for (const auto& d : split.fixture.corpus.documents()) corpus << corpus_line(d) << "\n";
      std::ofstream tasks(fs::path(fx_out) / "tasks.jsonl");
      for (const auto& t : split.fixture.tasks) tasks << task_line(t) << "\n";
      std::ofstream(fs::path(fx_out) / "checksum.txt") << split.checksum << "\n";
      std::cout << split.checksum << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
