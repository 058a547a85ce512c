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

#include "turncredit/rewards.hpp"

#include <array>

#include "json.hpp"
#include "turncredit/text.hpp"

namespace turncredit {
namespace {

// Event sequence must be exactly open/close of each tag, in order.
bool exact_tag_sequence(const TurnSegment& turn, std::initializer_list<std::string_view> tags) {
  if (turn.events.size() != 2 * tags.size()) return false;
  std::size_t i = 0;
  for (std::string_view tag : tags) {
    const TagEvent& open = turn.events[i++];
    const TagEvent& close = turn.events[i++];
    if (open.closing || open.name != tag || !close.closing || close.name != tag) return false;
  }
  return true;
}

bool any_gold_in(std::string_view text, const std::vector<std::string>& gold) {
  for (const auto& g : gold) {
    if (contains_normalized(text, g)) return true;
  }
  return false;
}

std::string_view feedback_content(const TurnSegment& turn, const TagProfile& profile) {
  for (const auto& span : turn.spans) {
    if (span.name == profile.feedback_tag && span.open_pos >= turn.feedback_begin) return turn.content(span);
  }
  return {};
}

}  // namespace

std::vector<double> RewardBreakdown::turn_rewards() const {
  std::vector<double> out;
  out.reserve(intermediate.size() + 1);
  for (const auto& r : intermediate) out.push_back(r.total);
  out.push_back(outcome.value);
  return out;
}

std::optional<std::string> extract_answer(const Trajectory& traj) {
  if (traj.turns.empty()) return std::nullopt;
  const auto content = traj.turns.back().first_content(TagProfile::of(traj.mode).answer_tag);
  if (!content) return std::nullopt;
  return std::string(*content);
}

bool outcome_exact_match(std::string_view answer, const std::vector<std::string>& gold) {
  const std::string a = normalize_answer(answer);
  if (a.empty()) return false;
  for (const auto& g : gold) {
    if (normalize_answer(g) == a) return true;
  }
  return false;
}

bool outcome_format(const TurnSegment& final_turn, const TagProfile& profile) {
  return exact_tag_sequence(final_turn, {profile.reasoning_tag, profile.answer_tag});
}

double outcome_reward(bool exact_match, bool format_ok) {
  if (!format_ok) return kOutcomeMalformed;
  return exact_match ? kOutcomeCorrect : kOutcomeWellFormed;
}

double retrieval_existence(std::string_view info_text, const std::vector<std::string>& gold) {
  return any_gold_in(info_text, gold) ? kRetrievalHit : 0.0;
}

double intermediate_format(const TurnSegment& turn, const TagProfile& profile) {
  return exact_tag_sequence(turn, {profile.reasoning_tag, profile.action_tag, profile.feedback_tag}) ? kTurnFormatOk
                                                                                                    : kTurnFormatBad;
}

double search_count_penalty(int n_search, double lambda_s) { return -lambda_s * static_cast<double>(n_search); }

RewardBreakdown score_trajectory(const Trajectory& traj, const RewardConfig& cfg) {
  const TagProfile& profile = TagProfile::search_agent();
  RewardBreakdown br;
  br.profile = ProfileMode::kSearchAgent;
  if (traj.turns.empty()) {
    br.outcome.value = kOutcomeMalformed;
    return br;
  }
  const int k_turns = static_cast<int>(traj.turns.size());
  for (int k = 0; k + 1 < k_turns; ++k) {
    const TurnSegment& turn = traj.turns[k];
    IntermediateReward r;
    r.retrieval = retrieval_existence(feedback_content(turn, profile), cfg.gold_answers);
    r.format = intermediate_format(turn, profile);
    r.search_penalty = search_count_penalty(count_searches(traj, k + 1), cfg.lambda_s);
    r.total = r.retrieval + r.format + r.search_penalty;
    br.intermediate.push_back(r);
  }
  const auto answer = extract_answer(traj);
  br.outcome.exact_match = answer && outcome_exact_match(*answer, cfg.gold_answers);
  br.outcome.format_ok = answer && outcome_format(traj.turns.back(), profile);
  br.outcome.value = outcome_reward(br.outcome.exact_match, br.outcome.format_ok);
  return br;
}

bool tool_executed(const TurnSegment& first_turn) {
  const TagProfile& profile = TagProfile::two_turn_tool();
  const TagSpan* tool = nullptr;
  for (const auto& span : first_turn.spans) {
    if (span.name == profile.action_tag && span.open_pos < first_turn.feedback_begin) {
      tool = &span;
      break;
    }
  }
  if (tool == nullptr || !first_turn.has_feedback()) return false;
  const auto call = nlohmann::json::parse(first_turn.content(*tool), nullptr, false);
  if (call.is_discarded() || !call.is_object()) return false;
  if (!call.contains("name") || !call["name"].is_string()) return false;
  if (!call.contains("args") || !call["args"].is_object()) return false;
  const std::string_view result = trim(feedback_content(first_turn, profile));
  return !starts_with(result, "Error:");
}

double xml_format_score(const std::vector<std::string_view>& messages) {
  if (messages.empty()) return 0.0;
  double sum = 0.0;
  for (std::string_view msg : messages) {
    const Trajectory parsed = parse_turns(msg, TagProfile::two_turn_tool());
    std::array<bool, 2> present{false, false};
    bool spacing_ok = true;
    for (const auto& turn : parsed.turns) {
      for (const auto& span : turn.spans) {
        const bool reasoning = span.name == "reasoning";
        const bool action = span.name == "tool" || span.name == "answer";
        if (!reasoning && !action) continue;
        present[reasoning ? 0 : 1] = true;
        const std::string_view c = turn.content(span);
        if (trim(c).size() != c.size()) spacing_ok = false;
      }
    }
    const std::string_view s = trim(msg);
    double score = 0.0;
    const int n_present = static_cast<int>(present[0]) + static_cast<int>(present[1]);
    if (n_present > 0) score += 0.4 * n_present / 2.0;
    if (spacing_ok) score += 0.2;
    if (starts_with(s, "<reasoning>")) score += 0.2;
    if (s.ends_with("</tool>") || s.ends_with("</answer>")) score += 0.2;
    sum += score;
  }
  return kXmlFormatScale * sum / static_cast<double>(messages.size());
}

double tag_usage_score(const std::vector<std::string_view>& messages) {
  if (messages.empty()) return 0.0;
  double sum = 0.0;
  for (std::string_view msg : messages) {
    int checked = 0;
    int correct = 0;
    for (std::string_view tag : {"reasoning", "tool", "answer"}) {
      int opens = 0;
      int closes = 0;
      for (const auto& tok : tokenize(msg)) {
        if (!tok.is_tag || tok.tag_name != tag) continue;
        (tok.closing ? closes : opens) += 1;
      }
      if (opens + closes == 0) continue;
      ++checked;
      if (opens == 1 && closes == 1) ++correct;
    }
    if (checked > 0) sum += static_cast<double>(correct) / checked;
  }
  return kTagUsageScale * sum / static_cast<double>(messages.size());
}

RewardBreakdown score_two_turn(const Trajectory& traj, const std::vector<std::string>& gold) {
  const TagProfile& profile = TagProfile::two_turn_tool();
  RewardBreakdown br;
  br.profile = ProfileMode::kTwoTurnTool;
  if (traj.turns.empty()) return br;
  for (std::size_t k = 0; k + 1 < traj.turns.size(); ++k) {
    const TurnSegment& turn = traj.turns[k];
    IntermediateReward r;
    // Only the first turn may call the tool.
    if (k == 0) {
      r.tool_execution = tool_executed(turn) ? kToolExecution : 0.0;
      r.result_presence = any_gold_in(feedback_content(turn, profile), gold) ? kResultPresence : 0.0;
    }
    r.total = r.tool_execution + r.result_presence;
    br.intermediate.push_back(r);
  }
  const auto answer = extract_answer(traj);
  br.outcome.exact_match = answer && outcome_exact_match(*answer, gold);
  br.outcome.format_ok = answer && outcome_format(traj.turns.back(), profile);
  br.outcome.answer_presence = answer && any_gold_in(*answer, gold) ? kAnswerPresence : 0.0;
  br.outcome.exact_match_reward = br.outcome.exact_match ? kExactMatch : 0.0;
  std::vector<std::string_view> messages;
  for (const auto& turn : traj.turns) {
    if (!trim(turn.policy_text()).empty()) messages.push_back(turn.policy_text());
  }
  br.outcome.xml_format = xml_format_score(messages);
  br.outcome.tag_usage = tag_usage_score(messages);
  br.outcome.value = br.outcome.answer_presence + br.outcome.exact_match_reward + br.outcome.xml_format +
                     br.outcome.tag_usage;
  return br;
}

RewardBreakdown score(const Trajectory& traj, const RewardConfig& cfg) {
  return traj.mode == ProfileMode::kSearchAgent ? score_trajectory(traj, cfg)
                                                : score_two_turn(traj, cfg.gold_answers);
}

EvalFlags evaluation_metrics(const Trajectory& traj, const std::vector<std::string>& gold) {
  EvalFlags flags;
  if (traj.turns.empty()) return flags;
  const TagProfile& profile = TagProfile::of(traj.mode);
  const auto answer = extract_answer(traj);
  flags.answer = answer && outcome_exact_match(*answer, gold);
  flags.format = outcome_format(traj.turns.back(), profile);
  for (std::size_t k = 0; k + 1 < traj.turns.size(); ++k) {
    if (intermediate_format(traj.turns[k], profile) != kTurnFormatOk) flags.format = false;
  }
  for (const auto& turn : traj.turns) {
    if (any_gold_in(feedback_content(turn, profile), gold)) flags.retrieval = true;
  }
  return flags;
}

}  // namespace turncredit
