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

#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "turncredit/transcript.hpp"

namespace turncredit {

// Search-agent reward constants.
inline constexpr double kOutcomeCorrect = 1.0;
inline constexpr double kOutcomeWellFormed = 0.2;
inline constexpr double kOutcomeMalformed = -1.0;
inline constexpr double kRetrievalHit = 0.3;
inline constexpr double kTurnFormatOk = 0.1;
inline constexpr double kTurnFormatBad = -0.2;
inline constexpr double kDefaultLambdaS = 0.1;

// Two-turn tool-agent reward constants.
inline constexpr double kToolExecution = 0.2;
inline constexpr double kResultPresence = 0.5;
inline constexpr double kAnswerPresence = 0.5;
inline constexpr double kExactMatch = 1.0;
inline constexpr double kXmlFormatScale = 0.2;
inline constexpr double kTagUsageScale = 0.2;

struct IntermediateReward {
  // search agent
  double retrieval = 0.0;
  double format = 0.0;
  double search_penalty = 0.0;
  // two-turn tool agent
  double tool_execution = 0.0;
  double result_presence = 0.0;

  double total = 0.0;
};

struct OutcomeReward {
  bool exact_match = false;  // f_em
  bool format_ok = false;    // f_format
  // two-turn tool agent components
  double answer_presence = 0.0;
  double exact_match_reward = 0.0;
  double xml_format = 0.0;
  double tag_usage = 0.0;

  double value = 0.0;  // R^O
};

struct RewardBreakdown {
  ProfileMode profile = ProfileMode::kSearchAgent;
  std::vector<IntermediateReward> intermediate;  // turns 1..K-1
  OutcomeReward outcome;

  // R^I_1, ..., R^I_{K-1}, R^O.
  std::vector<double> turn_rewards() const;
  double tool_execution() const { return intermediate.empty() ? 0.0 : intermediate.front().tool_execution; }
};

struct RewardConfig {
  double lambda_s = kDefaultLambdaS;
  std::vector<std::string> gold_answers;
};

// Content of the first answer span of the final turn.
std::optional<std::string> extract_answer(const Trajectory& traj);

bool outcome_exact_match(std::string_view answer, const std::vector<std::string>& gold);
bool outcome_format(const TurnSegment& final_turn, const TagProfile& profile = TagProfile::search_agent());
double outcome_reward(bool exact_match, bool format_ok);
double retrieval_existence(std::string_view info_text, const std::vector<std::string>& gold);
double intermediate_format(const TurnSegment& turn, const TagProfile& profile = TagProfile::search_agent());
double search_count_penalty(int n_search, double lambda_s);

RewardBreakdown score_trajectory(const Trajectory& traj, const RewardConfig& cfg);

// Two-turn tool profile pieces, exposed for tests.
bool tool_executed(const TurnSegment& first_turn);
double xml_format_score(const std::vector<std::string_view>& messages);
double tag_usage_score(const std::vector<std::string_view>& messages);

RewardBreakdown score_two_turn(const Trajectory& traj, const std::vector<std::string>& gold);

// Dispatches on the trajectory's profile.
RewardBreakdown score(const Trajectory& traj, const RewardConfig& cfg);

struct EvalFlags {
  bool answer = false;
  bool format = false;
  bool retrieval = false;
};

EvalFlags evaluation_metrics(const Trajectory& traj, const std::vector<std::string>& gold);

}  // namespace turncredit
