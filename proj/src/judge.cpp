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

#include "turncredit/judge.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

#include "httplib.h"
#include "json.hpp"
#include "turncredit/text.hpp"

namespace turncredit {
namespace {

constexpr std::string_view kOutcomeTemplate =
    R"(You are an expert evaluator for multi-turn search-augmented reasoning systems.
Given a user prompt, ground truth answer, and multi-turn generated response,
determine whether the final answer matches the ground truth.

## EVALUATION TASK

Evaluate whether the multi-turn response provides a correct final answer that
matches the ground truth.

## SCORING CRITERIA

Score 1.0 (Correct):
- The answer within <answer></answer> tags matches the ground truth.

Score 0.0 (Incorrect):
- No <answer></answer> tags found, or
- The answer within <answer></answer> tags does not match the ground truth, or
- The answer in <answer> tag exceeds 5 tokens.

## OUTPUT FORMAT

Provide your evaluation using this format:

- <reasoning> Your step-by-step reasoning about whether the
  answer matches the ground truth </reasoning>
- <score> 1.0 or 0.0 </score>

REQUIREMENTS:
- First provide reasoning, then the score.
- Score must be exactly 1.0 or 0.0.

## EVALUATION DATA

{prompt_text}
{turns_text}
{ground_truth_text}

## Your Evaluation
)";

constexpr std::string_view kTurnTemplate =
    R"(You are an expert evaluator for multi-turn search-augmented reasoning systems.
Given a user prompt, ground truth answer, and multi-turn generated response,
evaluate each turn's effectiveness and compliance.

## EVALUATION TASK

Assess each turn's format compliance, content quality, and contribution toward
the ground truth answer.

## SCORING CRITERIA

FINAL TURN (Last Turn) - Score Range: [-1.0 to 1.0]

Format Compliance:
- Required: <think>...</think><answer>...</answer> (tags only, once each, in order)
- Answer in <answer> tag must not exceed 5 tokens

Answer Correctness:
- Correct and complete answer in <answer> tag that matches the ground truth

Scoring Rules:
- If format is incorrect: Final Turn Score = -1.0
- If format is correct, answer is incorrect: Final Turn Score = 0.2
- If format is correct, answer is correct: Final Turn Score = 1.0

INTERMEDIATE TURNS - Score Range: [-1.0 to 1.0]

Format Compliance:
- Required: <think>...</think><search>...</search>
  <information>...</information> (tags only, once each, in order)
- Correct format: +0.1
- Incorrect format: -0.2

Information Quality:
- Relevant information in <information> tag that helps toward the ground truth answer (e.g., ground truth exists in the retrieved result within <information> tag): +0.3
- Irrelevant or unhelpful information in <information> tag: +0.0

Search Efficiency Penalty:
- Number of searches = Total count of <search> tags across all turns from Turn 1 up to and including the current turn
- Search penalty = Number of searches × (-0.1)
- Encourages finding answers with fewer searches

Intermediate Turn Score = Format Compliance + Information Quality + Search Penalty

## OUTPUT FORMAT

Provide your evaluation using ONLY these XML tags:

<reasoning>
Systematically evaluate each turn: check format compliance,
assess content quality, calculate scores with clear explanations
</reasoning>

<score>
Turn1: X.X
Turn2: X.X
Turn3: X.X
...
</score>

REQUIREMENTS:
- Must provide exactly {len(turns)} scores (one per turn)
- Use decimal format (e.g., 0.5, -0.3, 1.0)
- Use only the specified XML tags, no additional text

## EVALUATION DATA

{prompt_text}
{turns_text}
{ground_truth_text}
TURNS TO EVALUATE: {len(turns)}

## Your Evaluation
)";

// Single left-to-right pass, so slot markers inside the data are left alone.
std::string fill(std::string_view tmpl, const std::map<std::string, std::string>& slots) {
  std::string out;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    bool replaced = false;
    if (tmpl[i] == '{') {
      for (const auto& [name, value] : slots) {
        const std::string marker = "{" + name + "}";
        if (tmpl.substr(i, marker.size()) == marker) {
          out += value;
          i += marker.size();
          replaced = true;
          break;
        }
      }
    }
    if (!replaced) out += tmpl[i++];
  }
  return out;
}

std::optional<std::string_view> block(std::string_view text, std::string_view tag) {
  const std::string open = "<" + std::string(tag) + ">";
  const std::string close = "</" + std::string(tag) + ">";
  const auto b = text.find(open);
  if (b == std::string_view::npos) return std::nullopt;
  const auto e = text.find(close, b + open.size());
  if (e == std::string_view::npos) return std::nullopt;
  return text.substr(b + open.size(), e - b - open.size());
}

std::optional<double> parse_number(std::string_view s) {
  static const std::regex number(R"([-+]?(\d+(\.\d*)?|\.\d+))");
  const std::string str(trim(s));
  if (!std::regex_match(str, number)) return std::nullopt;
  return std::stod(str);
}

}  // namespace

std::string_view outcome_template() { return kOutcomeTemplate; }
std::string_view turn_template() { return kTurnTemplate; }

JudgeRequest make_judge_request(const Trajectory& traj, const std::vector<std::string>& gold, JudgeLevel level) {
  if (gold.empty()) throw std::invalid_argument("judge request: missing ground truth");
  JudgeRequest req;
  req.level = level;
  req.prompt_text = "User prompt: " + traj.prompt;
  for (std::size_t k = 0; k < traj.turns.size(); ++k) {
    if (k > 0) req.turns_text += "\n";
    req.turns_text += "Turn " + std::to_string(k + 1) + ":\n" + std::string(trim(traj.turns[k].text));
  }
  req.ground_truth_text = "Ground truth: ";
  for (std::size_t i = 0; i < gold.size(); ++i) req.ground_truth_text += (i ? " | " : "") + gold[i];
  req.expected_turns = static_cast<int>(traj.turns.size());
  return req;
}

std::string build_outcome_prompt(const JudgeRequest& req) {
  if (req.level != JudgeLevel::kOutcome) throw std::invalid_argument("build_outcome_prompt: request is turn level");
  if (trim(req.ground_truth_text).empty()) throw std::invalid_argument("build_outcome_prompt: missing ground truth");
  return fill(kOutcomeTemplate, {{"prompt_text", req.prompt_text},
                                 {"turns_text", req.turns_text},
                                 {"ground_truth_text", req.ground_truth_text}});
}

std::string build_turn_prompt(const JudgeRequest& req) {
  if (req.level != JudgeLevel::kTurn) throw std::invalid_argument("build_turn_prompt: request is outcome level");
  if (req.expected_turns < 1) throw std::invalid_argument("build_turn_prompt: expected_turns must be >= 1");
  if (trim(req.ground_truth_text).empty()) throw std::invalid_argument("build_turn_prompt: missing ground truth");
  return fill(kTurnTemplate, {{"prompt_text", req.prompt_text},
                              {"turns_text", req.turns_text},
                              {"ground_truth_text", req.ground_truth_text},
                              {"len(turns)", std::to_string(req.expected_turns)}});
}

std::string build_prompt(const JudgeRequest& req) {
  return req.level == JudgeLevel::kOutcome ? build_outcome_prompt(req) : build_turn_prompt(req);
}

JudgeVerdict parse_judge_reply(std::string_view reply, int expected, JudgeLevel level) {
  JudgeVerdict v;
  if (const auto r = block(reply, "reasoning")) v.reasoning = std::string(trim(*r));
  const auto score = block(reply, "score");
  if (!score) return v;

  if (level == JudgeLevel::kOutcome) {
    const auto x = parse_number(*score);
    if (x && (*x == 1.0 || *x == 0.0)) {
      v.scores = {*x};
      v.parse_ok = true;
    }
    return v;
  }

  if (expected < 1) return v;
  static const std::regex line_re(R"(Turn\s*(\d+)\s*:\s*(\S+))");
  std::vector<std::optional<double>> slots(static_cast<std::size_t>(expected));
  std::istringstream lines{std::string(*score)};
  for (std::string line; std::getline(lines, line);) {
    const std::string t(trim(line));
    if (t.empty()) continue;
    std::smatch m;
    if (!std::regex_match(t, m, line_re) || m[1].length() > 6) return v;
    const long n = std::stol(m[1].str());
    const auto x = parse_number(m[2].str());
    if (!x || n < 1 || n > expected || slots[n - 1]) return v;
    slots[n - 1] = std::clamp(*x, -1.0, 1.0);
  }
  std::vector<double> scores;
  for (const auto& s : slots) {
    if (!s) return v;
    scores.push_back(*s);
  }
  v.scores = std::move(scores);
  v.parse_ok = true;
  return v;
}

std::vector<double> fallback_scores(JudgeLevel level, const Trajectory& traj) {
  if (level == JudgeLevel::kOutcome) return {0.0};
  const TagProfile& profile = TagProfile::of(traj.mode);
  std::vector<double> out;
  for (std::size_t k = 0; k + 1 < traj.turns.size(); ++k) out.push_back(intermediate_format(traj.turns[k], profile));
  if (!traj.turns.empty()) {
    const bool ok = extract_answer(traj).has_value() && outcome_format(traj.turns.back(), profile);
    out.push_back(ok ? kOutcomeWellFormed : kOutcomeMalformed);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Clients

MockJudgeClient::MockJudgeClient(std::vector<std::string> replies) : replies_(std::move(replies)) {
  if (replies_.empty()) throw std::invalid_argument("MockJudgeClient: script has no replies");
}

std::vector<std::string> MockJudgeClient::parse_script(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  bool any = false;
  std::istringstream in{std::string(text)};
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line == "---") {
      out.push_back(current);
      current.clear();
      any = false;
      continue;
    }
    if (any) current += "\n";
    current += line;
    any = true;
  }
  if (any) out.push_back(current);
  return out;
}

std::unique_ptr<MockJudgeClient> MockJudgeClient::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw JudgeUnavailable("mock judge: cannot open script " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return std::make_unique<MockJudgeClient>(parse_script(ss.str()));
}

std::string MockJudgeClient::complete(const std::string& /*prompt*/) {
  std::lock_guard<std::mutex> lock(mu_);
  ++calls_;
  const std::string& r = replies_[std::min(cursor_, replies_.size() - 1)];
  if (cursor_ < replies_.size()) ++cursor_;
  return r;
}

int MockJudgeClient::calls() const {
  std::lock_guard<std::mutex> lock(mu_);
  return calls_;
}

HttpJudgeClient::HttpJudgeClient(std::string endpoint, std::string api_key, std::string model, double timeout_s)
    : api_key_(std::move(api_key)), model_(std::move(model)), timeout_s_(timeout_s) {
  const auto scheme = endpoint.find("://");
  if (scheme == std::string::npos) throw std::invalid_argument("judge endpoint must be an http(s) URL: " + endpoint);
  const auto slash = endpoint.find('/', scheme + 3);
  base_ = endpoint.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : endpoint.substr(slash);
}

std::string HttpJudgeClient::complete(const std::string& prompt) {
  httplib::Client cli(base_);
  if (!cli.is_valid()) throw JudgeUnavailable("judge endpoint not supported: " + base_);
  const auto secs = static_cast<time_t>(timeout_s_);
  const auto usecs = static_cast<time_t>((timeout_s_ - static_cast<double>(secs)) * 1e6);
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  cli.set_write_timeout(secs, usecs);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
  const nlohmann::json body = {{"model", model_}, {"input", prompt}};
  const auto res = cli.Post(path_, headers, body.dump(), "application/json");
  if (!res) throw JudgeUnavailable("judge request failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw JudgeUnavailable("judge returned HTTP " + std::to_string(res->status));
  const auto j = nlohmann::json::parse(res->body, nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("output") || !j["output"].is_string()) {
    throw JudgeUnavailable("judge response lacks an output string");
  }
  return j["output"].get<std::string>();
}

std::unique_ptr<JudgeClient> judge_client_from_env(const JudgeOptions& opts) {
  const char* endpoint = std::getenv("JUDGE_ENDPOINT");
  if (endpoint == nullptr || *endpoint == '\0') throw JudgeUnavailable("JUDGE_ENDPOINT is not set");
  const std::string ep(endpoint);
  if (starts_with(ep, "mock:")) return MockJudgeClient::from_file(ep.substr(5));
  const char* key = std::getenv("JUDGE_API_KEY");
  return std::make_unique<HttpJudgeClient>(ep, key ? key : "", opts.model, opts.timeout_s);
}

JudgeVerdict judge_call(const JudgeRequest& req, JudgeClient& client, const JudgeOptions& opts,
                        const Trajectory& traj) {
  const std::string prompt = build_prompt(req);
  const int attempts = 1 + std::max(0, opts.retries);
  bool any_reply = false;
  std::string last_error;
  JudgeVerdict v;
  for (int a = 1; a <= attempts; ++a) {
    std::string reply;
    try {
      reply = client.complete(prompt);
    } catch (const JudgeUnavailable& e) {
      last_error = e.what();
      continue;
    }
    any_reply = true;
    v = parse_judge_reply(reply, req.expected_turns, req.level);
    v.attempts = a;
    if (v.parse_ok) return v;
  }
  if (!any_reply) {
    throw JudgeUnavailable("judge unavailable after " + std::to_string(attempts) + " attempts: " + last_error);
  }
  v.attempts = attempts;
  v.scores = fallback_scores(req.level, traj);
  v.fallback = true;
  return v;
}

RewardBreakdown judge_breakdown(const Trajectory& traj, const std::vector<std::string>& gold, JudgeLevel level,
                                JudgeClient& client, const JudgeOptions& opts) {
  RewardBreakdown br;
  br.profile = traj.mode;
  const std::size_t k_turns = traj.turns.size();
  br.intermediate.resize(k_turns > 0 ? k_turns - 1 : 0);
  const auto answer = extract_answer(traj);
  br.outcome.exact_match = answer && outcome_exact_match(*answer, gold);
  br.outcome.format_ok = answer && !traj.turns.empty() && outcome_format(traj.turns.back(), TagProfile::of(traj.mode));
  if (k_turns == 0) return br;
  const JudgeVerdict v = judge_call(make_judge_request(traj, gold, level), client, opts, traj);
  if (level == JudgeLevel::kOutcome) {
    br.outcome.value = v.scores.at(0);
    return br;
  }
  for (std::size_t k = 0; k + 1 < k_turns; ++k) br.intermediate[k].total = v.scores.at(k);
  br.outcome.value = v.scores.at(k_turns - 1);
  return br;
}

}  // namespace turncredit
