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

// Run configuration, training runs, and the score/eval/plot/sweep commands.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "turncredit/env.hpp"
#include "turncredit/judge.hpp"
#include "turncredit/optim.hpp"

namespace turncredit {

inline constexpr std::string_view kVersion = "0.1.0";

struct RunConfig {
  TrainConfig train;
  std::uint64_t fixture_seed = 7;
  int n_docs = 500;
  int n_train = 200;
  int n_val = 50;
  std::string fixture_checksum;  // empty skips the check
  int eval_every = 10;
  int checkpoint_every = 50;
  int runs = 1;
  std::string out = "runs/default";
  JudgeOptions judge;
};

// Flat key=value text; '#' starts a comment. Throws std::invalid_argument on
// an unknown key or a malformed line.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_to_text(const RunConfig& cfg);

struct FixtureSplit {
  Fixture fixture;  // n_train + n_val tasks
  std::vector<const EnvTask*> train;
  std::vector<const EnvTask*> val;
  std::string checksum;  // over the corpus and the training tasks
};

// Throws std::runtime_error when cfg.fixture_checksum is set and differs.
FixtureSplit load_fixture(const RunConfig& cfg);
std::string training_fixture_checksum(const Fixture& fx, int n_train);

// Column order of metrics.csv and validation.csv.
const std::vector<std::string>& metrics_columns();
const std::vector<std::string>& validation_columns();

struct RunResult {
  std::filesystem::path dir;
  std::vector<StepMetrics> metrics;
  std::vector<std::pair<int, EvalSummary>> validation;
};

// One seeded run into `dir`: metrics.csv, validation.csv, config.txt,
// run.json, and checkpoints.
RunResult train_run(const RunConfig& cfg, const FixtureSplit& split, const std::filesystem::path& dir);

// cfg.runs runs with seeds seed, seed+1, ...; a single run writes directly to
// cfg.out, several runs to cfg.out/run_<i>.
std::vector<RunResult> cmd_train(const RunConfig& cfg);

struct ScoreOptions {
  ProfileMode profile = ProfileMode::kSearchAgent;
  RewardSource source = RewardSource::kVerifiable;
  JudgeLevel level = JudgeLevel::kTurn;
  double lambda_s = kDefaultLambdaS;
  JudgeOptions judge;
};

struct ScoreStats {
  int scored = 0;
  int failed = 0;
};

// One JSON record per input line on `out`; per-line failures are reported on
// `err` and processing continues.
ScoreStats cmd_score(std::istream& in, std::ostream& out, std::ostream& err, const ScoreOptions& opts,
                     JudgeClient* judge = nullptr);

enum class EvalPolicy { kCheckpoint, kOracle, kNeverAnswer, kRandomInit };
EvalPolicy parse_eval_policy(std::string_view name);

struct EvalRequest {
  RunConfig config;
  std::string checkpoint;  // required for kCheckpoint
  EvalPolicy policy = EvalPolicy::kCheckpoint;
  std::string split = "val";  // train | val | all
};

EvalSummary cmd_eval(const EvalRequest& req);
void print_eval_table(std::ostream& out, const EvalSummary& s);

struct PlotOptions {
  double ema = 0.9;  // s_t = ema * x_t + (1 - ema) * s_{t-1}; 1.0 keeps the raw curve
  std::filesystem::path out = "plots";
};

std::vector<double> ema_smooth(const std::vector<double>& xs, double factor);

// Expands run directories (a directory holding run_* subdirectories counts as
// all of them), writes one SVG per metric and summary.csv.
void cmd_plot(const std::vector<std::filesystem::path>& runs, const PlotOptions& opts);

struct SweepOptions {
  std::string param = "lambda_s";
  std::vector<std::string> values = {"0", "0.1"};
};

// One cmd_train per value into cfg.out/<param>=<value>.
std::vector<std::filesystem::path> cmd_sweep(const RunConfig& cfg, const SweepOptions& opts);

}  // namespace turncredit
