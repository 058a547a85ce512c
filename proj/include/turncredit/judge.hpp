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

// LLM-as-judge prompts, reply parsing, and the judge service clients.

#pragma once

#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "turncredit/rewards.hpp"
#include "turncredit/transcript.hpp"

namespace turncredit {

enum class JudgeLevel { kOutcome, kTurn };

struct JudgeRequest {
  std::string prompt_text;
  std::string turns_text;
  std::string ground_truth_text;
  int expected_turns = 1;
  JudgeLevel level = JudgeLevel::kOutcome;
};

struct JudgeVerdict {
  std::string reasoning;
  std::vector<double> scores;
  bool parse_ok = false;
  int attempts = 0;
  bool fallback = false;
};

// Raw templates with the {prompt_text}, {turns_text}, {ground_truth_text}
// and (turn level) {len(turns)} slots still in place.
std::string_view outcome_template();
std::string_view turn_template();

// Throws std::invalid_argument when `gold` is empty.
JudgeRequest make_judge_request(const Trajectory& traj, const std::vector<std::string>& gold, JudgeLevel level);

// Throws std::invalid_argument for a wrong level or a missing ground truth.
std::string build_outcome_prompt(const JudgeRequest& req);
// Throws std::invalid_argument for a wrong level or expected_turns < 1.
std::string build_turn_prompt(const JudgeRequest& req);
std::string build_prompt(const JudgeRequest& req);

// Never throws; failures set parse_ok = false and leave `scores` empty.
JudgeVerdict parse_judge_reply(std::string_view reply, int expected, JudgeLevel level);

// Scores used when the judge never produced a parseable reply: 0.0 at the
// outcome level; format-only verifiable rewards per turn at the turn level.
std::vector<double> fallback_scores(JudgeLevel level, const Trajectory& traj);

class JudgeUnavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class JudgeClient {
 public:
  virtual ~JudgeClient() = default;
  // Returns the judge's output text; throws JudgeUnavailable on transport
  // failure.
  virtual std::string complete(const std::string& prompt) = 0;
};

// Replies come from a script file, separated by lines holding only "---".
// After the last reply the last one repeats. Safe for concurrent use.
class MockJudgeClient : public JudgeClient {
 public:
  explicit MockJudgeClient(std::vector<std::string> replies);
  static std::unique_ptr<MockJudgeClient> from_file(const std::string& path);
  static std::vector<std::string> parse_script(std::string_view text);

  std::string complete(const std::string& prompt) override;
  int calls() const;

 private:
  std::vector<std::string> replies_;
  mutable std::mutex mu_;
  std::size_t cursor_ = 0;
  int calls_ = 0;
};

// POSTs {"model", "input"} as JSON and reads {"output"}.
class HttpJudgeClient : public JudgeClient {
 public:
  HttpJudgeClient(std::string endpoint, std::string api_key, std::string model, double timeout_s);
  std::string complete(const std::string& prompt) override;

 private:
  std::string base_;
  std::string path_;
  std::string api_key_;
  std::string model_;
  double timeout_s_;
};

struct JudgeOptions {
  int retries = 2;
  double timeout_s = 30.0;
  std::string model = "judge";
};

// JUDGE_ENDPOINT selects the client: "mock:<script-file>" or an http(s) URL.
// JUDGE_API_KEY is sent as a bearer token. Throws JudgeUnavailable when
// JUDGE_ENDPOINT is unset.
std::unique_ptr<JudgeClient> judge_client_from_env(const JudgeOptions& opts);

// Sends the prompt, retrying on parse failures and transport errors up to
// `opts.retries` extra times. Transport failure on every attempt throws
// JudgeUnavailable; parse failure on every attempt returns the fallback.
JudgeVerdict judge_call(const JudgeRequest& req, JudgeClient& client, const JudgeOptions& opts,
                        const Trajectory& traj);

// Judge-sourced rewards: the outcome level fills R^O only; the turn level
// fills R^I_1..R^I_{K-1} and R^O from the per-turn scores.
RewardBreakdown judge_breakdown(const Trajectory& traj, const std::vector<std::string>& gold, JudgeLevel level,
                                JudgeClient& client, const JudgeOptions& opts);

}  // namespace turncredit
