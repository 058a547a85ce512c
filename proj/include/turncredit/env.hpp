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

// Synthetic multi-turn search environment: an entity/relation corpus, a
// bag-of-words retriever, the turn transition, and chain/tree rollouts.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "turncredit/rng.hpp"
#include "turncredit/transcript.hpp"

namespace turncredit {

struct Fact {
  std::string subject;
  std::string relation;
  std::string value;
};

struct Document {
  int doc_id = 0;
  std::string title;
  std::string body;
  std::vector<Fact> facts;
};

class Corpus {
 public:
  Corpus() = default;
  // Requires unique doc_ids in ascending order.
  explicit Corpus(std::vector<Document> docs);

  const std::vector<Document>& documents() const { return docs_; }
  std::size_t size() const { return docs_.size(); }
  const Document& doc(int doc_id) const;

  struct Posting {
    int doc_index;
    int term_frequency;
  };
  const std::vector<Posting>& postings(const std::string& term) const;

 private:
  std::vector<Document> docs_;
  std::unordered_map<std::string, std::vector<Posting>> index_;
};

struct EnvTask {
  std::string task_id;
  std::string question;
  std::vector<std::string> gold_answers;
  std::vector<int> supporting_docs;
  int hop_count = 1;
  std::string entity;
  std::vector<std::string> relations;  // one per hop; the last one is asked

  const std::string& final_relation() const { return relations.back(); }
};

struct Fixture {
  Corpus corpus;
  std::vector<EnvTask> tasks;

  // FNV-1a over the serialized corpus and tasks.
  std::string checksum() const;
};

// Deterministic in `seed`. Tasks come from their own stream, so the first m
// tasks of a larger request equal the tasks of a request for m.
Fixture build_corpus(std::uint64_t seed, int n_docs, int n_tasks);

std::string corpus_line(const Document& doc);
std::string task_line(const EnvTask& task);

// Ranks documents by summed term frequency of the distinct non-stopword query
// terms over title and body; ties go to the lower doc_id.
std::vector<const Document*> retrieve(std::string_view query, const Corpus& corpus, int top_k = 3);

// "Doc i(Title: "...") body" blocks for the search agent; "Title. body" for
// the tool agent.
std::string render_documents(const std::vector<const Document*>& docs, ProfileMode mode);

inline constexpr int kMaxTurnsCap = 8;
inline constexpr int kNumQuerySlots = 4;
inline constexpr int kNumAnswerSlots = 4;

struct EnvConfig {
  ProfileMode mode = ProfileMode::kSearchAgent;
  int max_turns = 4;
  int top_k = 3;

  static EnvConfig for_profile(ProfileMode mode, int max_turns = 4);
};

struct EnvState {
  const EnvTask* task = nullptr;
  int turn_index = 0;  // completed turns
  std::string transcript;
  std::vector<std::vector<int>> retrieved;  // doc ids returned per turn (empty when none)
  int searches_used = 0;
  bool done = false;
  bool answered = false;
};

struct StepResult {
  EnvState state;
  std::string feedback;
};

// What the agent can read before a turn: question structure and the facts in
// documents retrieved so far. No gold information.
struct Observation {
  ProfileMode mode = ProfileMode::kSearchAgent;
  int turn = 1;
  int max_turns = 4;
  int hop_count = 1;
  int searches_used = 0;
  bool bridge_known = false;
  std::string bridge;
  std::array<bool, kNumQuerySlots> query_available{};
  std::array<std::string, kNumQuerySlots> query_text;
  std::array<bool, kNumAnswerSlots> answer_available{};
  std::array<std::string, kNumAnswerSlots> answer_text;
  // Fixed-turn constraint: true forces an action turn, false forces an answer.
  std::optional<bool> forced_action;

  bool answer_found() const { return answer_available[0]; }
  bool last_turn() const { return turn >= max_turns; }
};

class SearchEnvironment {
 public:
  SearchEnvironment(const Corpus& corpus, EnvConfig cfg) : corpus_(&corpus), cfg_(cfg) {}

  const EnvConfig& config() const { return cfg_; }
  const Corpus& corpus() const { return *corpus_; }

  EnvState reset(const EnvTask& task) const;
  // Throws std::logic_error when the state is already done.
  StepResult step(const EnvState& state, std::string_view action_text) const;
  Observation observe(const EnvState& state) const;
  Trajectory trajectory(const EnvState& state) const;

 private:
  const Corpus* corpus_;
  EnvConfig cfg_;
};

// ---------------------------------------------------------------------------
// Action template space. Each turn is three decisions, each carried by one of
// the turn's first three tokens.

enum class DecisionKind { kTurnType = 0, kFormat = 1, kQuery = 2, kAnswer = 3 };
inline constexpr int kNumDecisionKinds = 4;
inline constexpr std::array<int, kNumDecisionKinds> kNumOptions = {2, 3, kNumQuerySlots, kNumAnswerSlots};
inline constexpr std::array<int, kNumDecisionKinds> kStateDims = {13, 3, 4, 3};

enum TurnType { kActTurn = 0, kAnswerTurn = 1 };
enum FormatChoice { kCanonical = 0, kNoReasoning = 1, kMalformed = 2 };

struct DecisionPoint {
  DecisionKind kind = DecisionKind::kTurnType;
  Eigen::VectorXd state;
  std::array<bool, 4> available{};

  int n_options() const { return kNumOptions[static_cast<int>(kind)]; }
};

DecisionPoint turn_type_point(const Observation& obs);
DecisionPoint format_point(const Observation& obs, int turn_type);
DecisionPoint slot_point(const Observation& obs, int turn_type);

struct TurnChoice {
  int turn_type = kActTurn;
  int format = kCanonical;
  int slot = 0;
};

std::string render_action(const Observation& obs, const TurnChoice& choice);

class Policy {
 public:
  virtual ~Policy() = default;
  virtual int choose(const DecisionPoint& point, const Observation& obs, Rng& rng) const = 0;
};

// Always picks the best available move with canonical formatting; when
// `answer_immediately` it answers on turn 1.
class ScriptedPolicy : public Policy {
 public:
  enum class Script { kOracle, kNeverAnswer, kAnswerImmediately };
  explicit ScriptedPolicy(Script script) : script_(script) {}
  int choose(const DecisionPoint& point, const Observation& obs, Rng& rng) const override;

 private:
  Script script_;
};

inline constexpr int kCriticDims = 21;

struct DecisionRecord {
  DecisionPoint point;
  int choice = 0;
  std::size_t token = 0;  // index into the flattened token sequence
};

struct Episode {
  const EnvTask* task = nullptr;
  Trajectory trajectory;
  std::vector<DecisionRecord> decisions;
  Eigen::MatrixXd critic_features;  // tokens x kCriticDims
  std::vector<TurnChoice> choices;
  int searches_used = 0;
};

// Runs one chain episode. `fixed_turns` constrains the policy to act on turns
// before it and answer on it.
Episode run_episode(const SearchEnvironment& env, const Policy& policy, const EnvTask& task, std::uint64_t seed,
                    std::optional<int> fixed_turns = std::nullopt);

// Rebuilds the decision record of an existing trajectory by replaying the
// environment. Throws std::invalid_argument when a turn is not a rendering of
// any template action.
Episode replay_episode(const SearchEnvironment& env, const EnvTask& task, const Trajectory& traj);

struct GroupRollout {
  const EnvTask* task = nullptr;
  std::vector<Episode> episodes;
};

GroupRollout rollout_group(const SearchEnvironment& env, const Policy& policy, const EnvTask& task, int group_size,
                           std::uint64_t seed);

class FixedTurnViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Per-state rollouts: `group_size` sampled actions at each of turns 1..K-1,
// one answer turn under each depth K-1 node, G^{K-1} leaves.
struct RolloutTree {
  struct Node {
    int parent = -1;  // -1 for depth-1 nodes (children of the root state)
    int depth = 1;
  };

  const EnvTask* task = nullptr;
  int group_size = 0;
  int turns = 0;
  std::vector<Node> nodes;                 // branching nodes, depth 1..K-1
  std::vector<Episode> leaves;
  std::vector<std::vector<int>> leaf_path;  // node id at depth 1..K-1 for each leaf

  // Node ids sharing a parent at `depth`, in sampling order.
  std::vector<std::vector<int>> sibling_groups(int depth) const;
  int branch_expansions() const { return static_cast<int>(nodes.size()); }
  int turn_expansions() const { return static_cast<int>(nodes.size() + leaves.size()); }
};

RolloutTree rollout_tree(const SearchEnvironment& env, const Policy& policy, const EnvTask& task, int group_size,
                         int turns, std::uint64_t seed);

}  // namespace turncredit
