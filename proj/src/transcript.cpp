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

#include "turncredit/transcript.hpp"

#include <cctype>
#include <stdexcept>

#include "json.hpp"

namespace turncredit {
namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool is_word(char c) {
  const auto u = static_cast<unsigned char>(c);
  return std::isalnum(u) != 0 || u >= 0x80;
}

bool is_tag_name_start(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_'; }
bool is_tag_name_char(char c) { return is_tag_name_start(c) || (c >= '0' && c <= '9'); }

// Matches a strict tag at text[i]; returns its length or 0.
std::size_t match_tag(std::string_view text, std::size_t i, bool& closing, std::string& name) {
  if (text[i] != '<') return 0;
  std::size_t j = i + 1;
  closing = j < text.size() && text[j] == '/';
  if (closing) ++j;
  if (j >= text.size() || !is_tag_name_start(text[j])) return 0;
  const std::size_t name_begin = j;
  while (j < text.size() && is_tag_name_char(text[j])) ++j;
  if (j >= text.size() || text[j] != '>') return 0;
  name.assign(text.substr(name_begin, j - name_begin));
  return j + 1 - i;
}

void pair_spans(TurnSegment& turn) {
  std::vector<bool> used(turn.events.size(), false);
  for (std::size_t j = 0; j < turn.events.size(); ++j) {
    const TagEvent& open = turn.events[j];
    if (open.closing) continue;
    for (std::size_t k = j + 1; k < turn.events.size(); ++k) {
      const TagEvent& e = turn.events[k];
      if (e.name != open.name) continue;
      if (!e.closing) break;
      if (used[k]) break;
      used[k] = true;
      TagSpan span;
      span.name = open.name;
      span.open_pos = open.pos;
      span.content_begin = open.pos + open.name.size() + 2;
      span.content_end = e.pos;
      span.close_end = e.pos + e.name.size() + 3;
      span.known = open.known;
      turn.spans.push_back(std::move(span));
      break;
    }
  }
}

TurnSegment make_turn(std::string_view raw, const std::vector<Token>& tokens, std::size_t first,
                      std::size_t feedback_first, std::size_t last, const TagProfile& profile) {
  TurnSegment turn;
  turn.offset = tokens[first].begin;
  const std::size_t end = tokens[last].end;
  turn.text.assign(raw.substr(turn.offset, end - turn.offset));
  turn.feedback_begin = feedback_first <= last ? tokens[feedback_first].begin - turn.offset : turn.text.size();
  for (std::size_t i = first; i <= last; ++i) {
    const Token& t = tokens[i];
    std::string piece(raw.substr(t.begin, t.end - t.begin));
    const bool feedback = i >= feedback_first;
    if (feedback) {
      turn.feedback_tokens.push_back(std::move(piece));
    } else {
      turn.policy_tokens.push_back(std::move(piece));
    }
    turn.loss_mask.push_back(!feedback);
    if (t.is_tag) {
      std::size_t lt = t.begin;
      while (raw[lt] != '<') ++lt;
      turn.events.push_back({t.tag_name, t.closing, lt - turn.offset, profile.allows(t.tag_name)});
    }
  }
  pair_spans(turn);
  return turn;
}

}  // namespace

const TagProfile& TagProfile::search_agent() {
  static const TagProfile p{ProfileMode::kSearchAgent, "think", "search", "information", "answer"};
  return p;
}

const TagProfile& TagProfile::two_turn_tool() {
  static const TagProfile p{ProfileMode::kTwoTurnTool, "reasoning", "tool", "result", "answer"};
  return p;
}

const TagProfile& TagProfile::of(ProfileMode mode) {
  return mode == ProfileMode::kSearchAgent ? search_agent() : two_turn_tool();
}

bool TagProfile::allows(std::string_view name) const {
  return name == reasoning_tag || name == action_tag || name == feedback_tag || name == answer_tag;
}

std::vector<std::string> TagProfile::allowed() const {
  return {reasoning_tag, action_tag, feedback_tag, answer_tag};
}

std::string_view profile_name(ProfileMode mode) {
  return mode == ProfileMode::kSearchAgent ? "search_agent" : "two_turn_tool";
}

ProfileMode parse_profile(std::string_view name) {
  if (name == "search_agent") return ProfileMode::kSearchAgent;
  if (name == "two_turn_tool" || name == "two_turn") return ProfileMode::kTwoTurnTool;
  throw std::invalid_argument("unknown profile: " + std::string(name));
}

std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    const std::size_t begin = i;
    while (i < n && is_space(text[i])) ++i;
    if (i == n) {
      // Trailing whitespace joins the previous token.
      if (tokens.empty()) {
        tokens.push_back(Token{begin, n, false, false, {}});
      } else {
        tokens.back().end = n;
      }
      break;
    }
    Token tok;
    tok.begin = begin;
    bool closing = false;
    std::string name;
    if (const std::size_t len = match_tag(text, i, closing, name); len > 0) {
      tok.is_tag = true;
      tok.closing = closing;
      tok.tag_name = std::move(name);
      i += len;
    } else if (is_word(text[i])) {
      while (i < n && is_word(text[i])) ++i;
    } else {
      ++i;
    }
    tok.end = i;
    tokens.push_back(std::move(tok));
  }
  return tokens;
}

std::string_view TurnSegment::content(const TagSpan& span) const {
  return std::string_view(text).substr(span.content_begin, span.content_end - span.content_begin);
}

int TurnSegment::count_spans(std::string_view name) const {
  int n = 0;
  for (const auto& s : spans) n += s.name == name ? 1 : 0;
  return n;
}

std::optional<std::string_view> TurnSegment::first_content(std::string_view name) const {
  for (const auto& s : spans) {
    if (s.name == name) return content(s);
  }
  return std::nullopt;
}

std::size_t Trajectory::token_count() const {
  std::size_t n = 0;
  for (const auto& t : turns) n += t.token_count();
  return n;
}

std::vector<std::size_t> Trajectory::turn_token_offsets() const {
  std::vector<std::size_t> out;
  out.reserve(turns.size());
  std::size_t n = 0;
  for (const auto& t : turns) {
    out.push_back(n);
    n += t.token_count();
  }
  return out;
}

std::vector<std::string> Trajectory::tokens() const {
  std::vector<std::string> out;
  for (const auto& t : turns) {
    out.insert(out.end(), t.policy_tokens.begin(), t.policy_tokens.end());
    out.insert(out.end(), t.feedback_tokens.begin(), t.feedback_tokens.end());
  }
  return out;
}

Trajectory parse_turns(std::string_view raw, const TagProfile& profile, std::string task_id, std::string prompt) {
  Trajectory traj;
  traj.task_id = std::move(task_id);
  traj.prompt = std::move(prompt);
  traj.raw.assign(raw);
  traj.mode = profile.mode;

  const std::vector<Token> tokens = tokenize(raw);
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::size_t first = 0;
  std::size_t feedback_first = kNone;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const Token& t = tokens[i];
    if (!t.is_tag || t.tag_name != profile.feedback_tag) continue;
    if (!t.closing && feedback_first == kNone) {
      feedback_first = i;
    } else if (t.closing && feedback_first != kNone) {
      traj.turns.push_back(make_turn(raw, tokens, first, feedback_first, i, profile));
      first = i + 1;
      feedback_first = kNone;
    }
  }
  if (first < tokens.size()) {
    traj.turns.push_back(make_turn(raw, tokens, first, feedback_first, tokens.size() - 1, profile));
  }
  traj.terminal = !traj.turns.empty() && traj.turns.back().count_spans(profile.answer_tag) > 0;
  return traj;
}

std::vector<bool> loss_mask(const Trajectory& traj) {
  std::vector<bool> mask;
  mask.reserve(traj.token_count());
  for (const auto& t : traj.turns) mask.insert(mask.end(), t.loss_mask.begin(), t.loss_mask.end());
  return mask;
}

int count_searches(const Trajectory& traj, int upto_turn) {
  if (upto_turn < 1 || upto_turn > static_cast<int>(traj.turns.size())) {
    throw std::out_of_range("count_searches: turn index " + std::to_string(upto_turn) + " outside 1.." +
                            std::to_string(traj.turns.size()));
  }
  const std::string& tag = TagProfile::of(traj.mode).action_tag;
  int n = 0;
  for (int k = 0; k < upto_turn; ++k) n += traj.turns[k].count_spans(tag);
  return n;
}

TranscriptRecord parse_transcript_line(std::string_view line) {
  const auto j = nlohmann::json::parse(line);
  TranscriptRecord r;
  r.task_id = j.value("task_id", std::string{});
  r.prompt = j.value("prompt", std::string{});
  r.completion = j.at("completion").get<std::string>();
  if (j.contains("gold_answers")) r.gold_answers = j.at("gold_answers").get<std::vector<std::string>>();
  return r;
}

std::string to_transcript_line(const TranscriptRecord& record) {
  nlohmann::json j;
  j["task_id"] = record.task_id;
  j["prompt"] = record.prompt;
  j["completion"] = record.completion;
  j["gold_answers"] = record.gold_answers;
  return j.dump();
}

}  // namespace turncredit
