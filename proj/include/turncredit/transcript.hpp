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

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace turncredit {

enum class ProfileMode { kSearchAgent, kTwoTurnTool };

// Tag vocabulary of one agent protocol. The search agent uses
// think/search/information/answer; the two-turn tool agent uses
// reasoning/tool/result/answer.
struct TagProfile {
  ProfileMode mode = ProfileMode::kSearchAgent;
  std::string reasoning_tag;
  std::string action_tag;
  std::string feedback_tag;
  std::string answer_tag;

  static const TagProfile& search_agent();
  static const TagProfile& two_turn_tool();
  static const TagProfile& of(ProfileMode mode);

  bool allows(std::string_view name) const;
  std::vector<std::string> allowed() const;
};

std::string_view profile_name(ProfileMode mode);
ProfileMode parse_profile(std::string_view name);

// One tokenizer piece. Whitespace preceding a token belongs to it, so the
// concatenation of all pieces is the input text.
struct Token {
  std::size_t begin = 0;
  std::size_t end = 0;
  bool is_tag = false;
  bool closing = false;
  std::string tag_name;
};

// Word runs, single punctuation characters, and strict tags (`<name>` or
// `</name>` with no whitespace inside the angle brackets).
std::vector<Token> tokenize(std::string_view text);

struct TagEvent {
  std::string name;
  bool closing = false;
  std::size_t pos = 0;  // offset of '<' within the turn text
  bool known = false;
};

struct TagSpan {
  std::string name;
  std::size_t open_pos = 0;
  std::size_t content_begin = 0;
  std::size_t content_end = 0;
  std::size_t close_end = 0;
  bool known = false;
};

struct TurnSegment {
  std::size_t offset = 0;  // into Trajectory::raw
  std::string text;
  std::size_t feedback_begin = 0;  // into text; == text.size() when there is no feedback
  std::vector<std::string> policy_tokens;
  std::vector<std::string> feedback_tokens;
  std::vector<bool> loss_mask;
  std::vector<TagEvent> events;
  std::vector<TagSpan> spans;

  std::size_t token_count() const { return policy_tokens.size() + feedback_tokens.size(); }
  bool has_feedback() const { return !feedback_tokens.empty(); }
  std::string_view policy_text() const { return std::string_view(text).substr(0, feedback_begin); }
  std::string_view feedback_text() const { return std::string_view(text).substr(feedback_begin); }

  std::string_view content(const TagSpan& span) const;
  int count_spans(std::string_view name) const;
  std::optional<std::string_view> first_content(std::string_view name) const;
};

struct Trajectory {
  std::string task_id;
  std::string prompt;
  std::string raw;
  ProfileMode mode = ProfileMode::kSearchAgent;
  std::vector<TurnSegment> turns;
  bool terminal = false;

  std::size_t token_count() const;
  // Index of the first token of each turn in the flattened token sequence.
  std::vector<std::size_t> turn_token_offsets() const;
  std::vector<std::string> tokens() const;
};

// Splits a completion into turns. A turn ends with its feedback span or at end
// of text; malformed or unknown tags are recorded, never rejected.
Trajectory parse_turns(std::string_view raw, const TagProfile& profile, std::string task_id = {},
                       std::string prompt = {});

std::vector<bool> loss_mask(const Trajectory& traj);

// Number of paired action spans (search/tool) in turns 1..upto_turn.
int count_searches(const Trajectory& traj, int upto_turn);

// One line of the transcript exchange format.
struct TranscriptRecord {
  std::string task_id;
  std::string prompt;
  std::string completion;
  std::vector<std::string> gold_answers;
};

TranscriptRecord parse_transcript_line(std::string_view line);
std::string to_transcript_line(const TranscriptRecord& record);

}  // namespace turncredit
