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

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "json.hpp"
#include "turncredit/harness.hpp"

namespace turncredit {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("turncredit_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int count_lines(const fs::path& p) {
  std::ifstream in(p);
  int n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

RunConfig small_config(const fs::path& out) {
  RunConfig cfg = parse_run_config(
      "# small fixture\n"
      "n_docs=120\n"
      "n_train=24\n"
      "n_val=8\n"
      "steps=50\n"
      "eval_every=25\n"
      "checkpoint_every=25\n");
  cfg.out = out.string();
  return cfg;
}

TEST(Config, ParsesKnownKeys) {
  const RunConfig cfg = parse_run_config("algo = ppo-or\n  seed=11 # trailing\n\nlambda_s=0\nn_val=3\n");
  EXPECT_EQ(cfg.train.algo, Algorithm::kPpoOr);
  EXPECT_EQ(cfg.train.seed, 11u);
  EXPECT_EQ(cfg.train.lambda_s, 0.0);
  EXPECT_EQ(cfg.n_val, 3);
  const RunConfig back = parse_run_config(run_config_to_text(cfg));
  EXPECT_EQ(run_config_to_text(back), run_config_to_text(cfg));
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(parse_run_config("no_such_key=1\n"), std::invalid_argument);
  EXPECT_THROW(parse_run_config("steps=ten\n"), std::invalid_argument);
  EXPECT_THROW(parse_run_config("n_docs=5x\n"), std::invalid_argument);
  EXPECT_THROW(parse_run_config("justtext\n"), std::invalid_argument);
}

TEST(Fixture, ChecksumPinned) {
  RunConfig cfg = small_config(scratch("fx"));
  const FixtureSplit a = load_fixture(cfg);
  EXPECT_EQ(a.train.size(), 24u);
  EXPECT_EQ(a.val.size(), 8u);
  cfg.fixture_checksum = a.checksum;
  EXPECT_NO_THROW(load_fixture(cfg));
  cfg.fixture_checksum = "0000000000000000";
  EXPECT_THROW(load_fixture(cfg), std::runtime_error);
}

TEST(Fixture, ValidationDoesNotChangeTrainingChecksum) {
  RunConfig cfg = small_config(scratch("fx2"));
  const std::string a = load_fixture(cfg).checksum;
  cfg.n_val = 30;
  EXPECT_EQ(load_fixture(cfg).checksum, a);
}

TEST(Train, SmokeRunWritesArtifacts) {
  const fs::path dir = scratch("smoke");
  const auto results = cmd_train(small_config(dir));
  ASSERT_EQ(results.size(), 1u);
  EXPECT_EQ(count_lines(dir / "metrics.csv"), 51);
  EXPECT_EQ(count_lines(dir / "validation.csv"), 4);  // header, steps 0, 25, 50
  EXPECT_TRUE(fs::exists(dir / "checkpoint_25.txt"));
  EXPECT_TRUE(fs::exists(dir / "checkpoint_final.txt"));
  EXPECT_TRUE(fs::exists(dir / "config.txt"));
  const auto run = nlohmann::json::parse(testing::read_file((dir / "run.json").string()));
  EXPECT_EQ(run.at("algo"), "mt-ppo");
  EXPECT_EQ(run.at("fixture_checksum").get<std::string>().size(), 16u);
}

TEST(Train, IdenticalConfigIdenticalOutputs) {
  const fs::path a = scratch("det_a");
  const fs::path b = scratch("det_b");
  RunConfig ca = small_config(a);
  ca.train.steps = 20;
  RunConfig cb = ca;
  cb.out = b.string();
  cmd_train(ca);
  cmd_train(cb);
  for (const char* f : {"metrics.csv", "validation.csv", "checkpoint_final.txt"}) {
    EXPECT_EQ(testing::read_file((a / f).string()), testing::read_file((b / f).string())) << f;
  }
}

TEST(Train, MultipleRunsUseSubdirectories) {
  const fs::path dir = scratch("multi");
  RunConfig cfg = small_config(dir);
  cfg.train.steps = 5;
  cfg.runs = 2;
  const auto results = cmd_train(cfg);
  ASSERT_EQ(results.size(), 2u);
  EXPECT_TRUE(fs::exists(dir / "run_0" / "metrics.csv"));
  EXPECT_TRUE(fs::exists(dir / "run_1" / "metrics.csv"));
  EXPECT_NE(testing::read_file((dir / "run_0" / "metrics.csv").string()),
            testing::read_file((dir / "run_1" / "metrics.csv").string()));
}

TEST(Sweep, OneDirectoryPerValue) {
  const fs::path dir = scratch("sweep");
  RunConfig cfg = small_config(dir);
  cfg.train.steps = 5;
  const auto dirs = cmd_sweep(cfg, {"lambda_s", {"0", "0.1"}});
  ASSERT_EQ(dirs.size(), 2u);
  EXPECT_TRUE(fs::exists(dir / "lambda_s=0" / "metrics.csv"));
  EXPECT_TRUE(fs::exists(dir / "lambda_s=0.1" / "metrics.csv"));
  EXPECT_NE(testing::read_file((dir / "lambda_s=0" / "config.txt").string()).find("lambda_s=0\n"),
            std::string::npos);
  EXPECT_THROW(cmd_sweep(cfg, {"lambda_s", {}}), std::invalid_argument);
}

TEST(Score, FixtureFile) {
  std::ifstream in(testing::data_path("search_agent_rollouts.jsonl"));
  std::ostringstream out, err;
  const ScoreStats st = cmd_score(in, out, err, {});
  EXPECT_EQ(st.failed, 0);
  EXPECT_EQ(st.scored, 2);
  std::istringstream lines(out.str());
  std::string first;
  std::getline(lines, first);
  const auto j = nlohmann::json::parse(first);
  EXPECT_EQ(j.at("task_id"), "throne");
  EXPECT_EQ(j.at("turn_rewards"), nlohmann::json::array({0.0, -0.1, 1.0}));
}

TEST(Score, TwoTurnProfile) {
  std::ifstream in(testing::data_path("two_turn_rollouts.jsonl"));
  std::ostringstream out, err;
  ScoreOptions opts;
  opts.profile = ProfileMode::kTwoTurnTool;
  const ScoreStats st = cmd_score(in, out, err, opts);
  EXPECT_EQ(st.failed, 0);
  EXPECT_EQ(st.scored, 3);
}

TEST(Score, EmptyAndBadLines) {
  std::istringstream empty("");
  std::ostringstream out, err;
  EXPECT_EQ(cmd_score(empty, out, err, {}).scored, 0);
  EXPECT_TRUE(out.str().empty());
  std::istringstream bad("{not json}\n\n{\"task_id\":\"x\"}\n");
  const ScoreStats st = cmd_score(bad, out, err, {});
  EXPECT_EQ(st.failed, 2);
  EXPECT_NE(err.str().find("line 1:"), std::string::npos);
  EXPECT_NE(err.str().find("line 3:"), std::string::npos);
}

TEST(Score, JudgeMock) {
  std::ifstream in(testing::data_path("search_agent_rollouts.jsonl"));
  std::ostringstream out, err;
  ScoreOptions opts;
  opts.source = RewardSource::kJudge;
  opts.level = JudgeLevel::kOutcome;
  MockJudgeClient judge({"<score>1.0</score>"});
  const ScoreStats st = cmd_score(in, out, err, opts, &judge);
  EXPECT_EQ(st.scored, 2);
  std::istringstream lines(out.str());
  for (std::string line; std::getline(lines, line);) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("scores"), nlohmann::json::array({1.0}));
    EXPECT_EQ(j.at("attempts"), 1);
    EXPECT_EQ(j.at("level"), "outcome");
  }
  std::ifstream again(testing::data_path("search_agent_rollouts.jsonl"));
  EXPECT_EQ(cmd_score(again, out, err, opts, nullptr).failed, 2);
}

TEST(Eval, ScriptedBaselines) {
  EvalRequest req;
  req.config = small_config(scratch("eval"));
  req.policy = EvalPolicy::kOracle;
  const EvalSummary oracle = cmd_eval(req);
  EXPECT_EQ(oracle.episodes, 8);
  EXPECT_EQ(oracle.answer_rate, 1.0);
  EXPECT_EQ(oracle.format_rate, 1.0);
  req.policy = EvalPolicy::kNeverAnswer;
  req.split = "all";
  const EvalSummary never = cmd_eval(req);
  EXPECT_EQ(never.episodes, 32);
  EXPECT_EQ(never.format_rate, 0.0);
  EXPECT_EQ(never.outcome_reward, -1.0);
  req.split = "test";
  EXPECT_THROW(cmd_eval(req), std::invalid_argument);
  EXPECT_THROW(parse_eval_policy("best"), std::invalid_argument);
  std::ostringstream table;
  print_eval_table(table, oracle);
  EXPECT_NE(table.str().find("outcome_reward"), std::string::npos);
}

TEST(Eval, CheckpointMatchesTrainingValidation) {
  const fs::path dir = scratch("eval_ckpt");
  RunConfig cfg = small_config(dir);
  cfg.train.steps = 25;
  const auto res = cmd_train(cfg).front();
  EvalRequest req;
  req.config = cfg;
  req.checkpoint = (dir / "checkpoint_final.txt").string();
  const EvalSummary s = cmd_eval(req);
  EXPECT_DOUBLE_EQ(s.outcome_reward, res.validation.back().second.outcome_reward);
  req.checkpoint.clear();
  EXPECT_THROW(cmd_eval(req), std::invalid_argument);
}

TEST(Plot, EmaAndBands) {
  EXPECT_EQ(ema_smooth({1.0, 3.0, 2.0}, 1.0), (std::vector<double>{1.0, 3.0, 2.0}));
  const auto s = ema_smooth({0.0, 1.0}, 0.5);
  EXPECT_DOUBLE_EQ(s[1], 0.5);
  EXPECT_THROW(ema_smooth({1.0}, 0.0), std::invalid_argument);
  EXPECT_THROW(ema_smooth({1.0}, 1.5), std::invalid_argument);

  const fs::path dir = scratch("plot");
  RunConfig cfg = small_config(dir / "run");
  cfg.train.steps = 10;
  cmd_train(cfg);
  PlotOptions opts;
  opts.out = dir / "plots";
  cmd_plot({dir / "run"}, opts);
  EXPECT_TRUE(fs::exists(opts.out / "train_outcome_reward.svg"));
  EXPECT_TRUE(fs::exists(opts.out / "val_outcome_reward.svg"));
  std::ifstream summary(opts.out / "summary.csv");
  std::string line;
  std::getline(summary, line);
  while (std::getline(summary, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    ASSERT_EQ(f.size(), 7u);
    EXPECT_EQ(f[2], "1");
    EXPECT_EQ(f[5], f[6]);  // one run: the band collapses
    EXPECT_EQ(f[4], f[5]);
  }
  EXPECT_THROW(cmd_plot({dir / "missing"}, opts), std::runtime_error);
}

}  // namespace
}  // namespace turncredit
