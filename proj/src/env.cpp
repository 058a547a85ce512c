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

#include "turncredit/env.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <unordered_set>

#include "json.hpp"
#include "turncredit/text.hpp"

namespace turncredit {
namespace {

enum EntityType { kPerson = 0, kCity = 1, kCompany = 2, kCountry = 3 };

constexpr std::array<const char*, 4> kTypeNames = {"person", "city", "company", "country"};

struct RelationSpec {
  const char* name;
  EntityType target;
};

const std::vector<RelationSpec>& relations_of(EntityType t) {
  static const std::array<std::vector<RelationSpec>, 4> table = {{
      {{"birthplace", kCity}, {"employer", kCompany}, {"spouse", kPerson}},
      {{"country", kCountry}, {"mayor", kPerson}},
      {{"founder", kPerson}, {"headquarters", kCity}},
      {{"capital", kCity}, {"leader", kPerson}},
  }};
  return table[t];
}

const std::unordered_set<std::string>& stopwords() {
  static const std::unordered_set<std::string> words = {"a",  "an", "and", "are", "as",   "at",  "be",
                                                        "by", "for", "in", "is",  "it",   "of",  "on",
                                                        "s",  "the", "to", "was", "what", "who", "which"};
  return words;
}

const std::unordered_set<std::string>& reserved_words() {
  static const std::unordered_set<std::string> words = [] {
    std::unordered_set<std::string> w(stopwords().begin(), stopwords().end());
    for (const char* t : kTypeNames) w.insert(t);
    for (int t = 0; t < 4; ++t) {
      for (const auto& r : relations_of(static_cast<EntityType>(t))) w.insert(r.name);
    }
    for (const char* extra : {"doc", "title", "invalid", "action", "error", "tool"}) w.insert(extra);
    return w;
  }();
  return words;
}

constexpr std::array<const char*, 24> kSyllables = {"ka", "lo", "mi", "ren", "to", "va", "shi", "dor",
                                                    "ne", "pa", "qui", "zan", "bel", "cor", "fa", "gu",
                                                    "hal", "ix", "jo", "lum", "mar", "or", "sel", "tav"};

std::string make_name(Rng& rng) {
  const int n = 2 + static_cast<int>(rng.index(2));
  std::string s;
  for (int i = 0; i < n; ++i) s += kSyllables[rng.index(kSyllables.size())];
  s[0] = static_cast<char>(s[0] - 'a' + 'A');
  return s;
}

std::string json_line(const nlohmann::json& j) { return j.dump(); }

// Facts visible in the given documents.
const Fact* find_fact(const std::vector<const Document*>& docs, std::string_view subject, std::string_view relation) {
  for (const Document* d : docs) {
    for (const auto& f : d->facts) {
      if (f.subject == subject && f.relation == relation) return &f;
    }
  }
  return nullptr;
}

int count_action_spans(std::string_view action_text, const TagProfile& profile, std::optional<std::string>* first) {
  const Trajectory parsed = parse_turns(action_text, profile);
  int n = 0;
  for (const auto& turn : parsed.turns) {
    for (const auto& span : turn.spans) {
      if (span.name != profile.action_tag) continue;
      if (n == 0 && first != nullptr) *first = std::string(turn.content(span));
      ++n;
    }
  }
  return n;
}

bool has_answer_span(std::string_view action_text, const TagProfile& profile) {
  const Trajectory parsed = parse_turns(action_text, profile);
  for (const auto& turn : parsed.turns) {
    if (turn.count_spans(profile.answer_tag) > 0) return true;
  }
  return false;
}

constexpr const char* kToolError = "Error: Tool command not found or invalid XML format. Please ensure correct formatting.";
constexpr const char* kInvalidSearch = "Invalid action: no search query found.";

std::string wrap_feedback(const TagProfile& profile, std::string_view body) {
  return "\n<" + profile.feedback_tag + ">" + std::string(body) + "</" + profile.feedback_tag + ">\n";
}

std::string tool_call(std::string_view name, std::string_view query) {
  nlohmann::json call = {{"name", name}, {"args", {{"query", query}}}};
  return call.dump();
}

}  // namespace

Corpus::Corpus(std::vector<Document> docs) : docs_(std::move(docs)) {
  for (std::size_t i = 1; i < docs_.size(); ++i) {
    if (docs_[i].doc_id <= docs_[i - 1].doc_id) throw std::invalid_argument("Corpus: doc ids must be unique and sorted");
  }
  for (std::size_t i = 0; i < docs_.size(); ++i) {
    std::map<std::string, int> tf;
    for (auto& term : word_terms(docs_[i].title + " " + docs_[i].body)) ++tf[term];
    for (const auto& [term, count] : tf) index_[term].push_back({static_cast<int>(i), count});
  }
}

const Document& Corpus::doc(int doc_id) const {
  const auto it = std::lower_bound(docs_.begin(), docs_.end(), doc_id,
                                   [](const Document& d, int id) { return d.doc_id < id; });
  if (it == docs_.end() || it->doc_id != doc_id) throw std::out_of_range("Corpus: no doc " + std::to_string(doc_id));
  return *it;
}

const std::vector<Corpus::Posting>& Corpus::postings(const std::string& term) const {
  static const std::vector<Posting> empty;
  const auto it = index_.find(term);
  return it == index_.end() ? empty : it->second;
}

std::string corpus_line(const Document& doc) {
  return json_line({{"doc_id", doc.doc_id}, {"title", doc.title}, {"body", doc.body}});
}

std::string task_line(const EnvTask& task) {
  TranscriptRecord rec{task.task_id, task.question, "", task.gold_answers};
  auto j = nlohmann::json::parse(to_transcript_line(rec));
  j["supporting_docs"] = task.supporting_docs;
  j["hop_count"] = task.hop_count;
  return json_line(j);
}

std::string Fixture::checksum() const {
  std::uint64_t h = fnv1a64("");
  for (const auto& d : corpus.documents()) h = fnv1a64(corpus_line(d) + "\n", h);
  for (const auto& t : tasks) h = fnv1a64(task_line(t) + "\n", h);
  return hex64(h);
}

Fixture build_corpus(std::uint64_t seed, int n_docs, int n_tasks) {
  if (n_docs < 10) throw std::invalid_argument("build_corpus: n_docs must be >= 10");
  if (n_tasks < 1) throw std::invalid_argument("build_corpus: n_tasks must be >= 1");

  Rng rng(derive_seed(seed, 1));
  const int n_city = n_docs * 25 / 100;
  const int n_company = n_docs * 25 / 100;
  const int n_country = n_docs * 10 / 100;
  const int n_person = n_docs - n_city - n_company - n_country;
  std::vector<EntityType> types;
  types.insert(types.end(), n_person, kPerson);
  types.insert(types.end(), n_city, kCity);
  types.insert(types.end(), n_company, kCompany);
  types.insert(types.end(), n_country, kCountry);
  for (std::size_t i = types.size(); i > 1; --i) std::swap(types[i - 1], types[rng.index(i)]);

  std::vector<std::string> names;
  std::set<std::string> used;
  for (int i = 0; i < n_docs; ++i) {
    std::string name;
    do {
      name = make_name(rng);
    } while (used.count(name) > 0 || reserved_words().count(to_lower(name)) > 0);
    used.insert(name);
    names.push_back(std::move(name));
  }
  std::array<std::vector<int>, 4> by_type;
  for (int i = 0; i < n_docs; ++i) by_type[types[i]].push_back(i);

  std::vector<Document> docs(n_docs);
  for (int i = 0; i < n_docs; ++i) {
    Document& d = docs[i];
    d.doc_id = i;
    d.title = names[i];
    d.body = names[i] + " is a " + kTypeNames[types[i]] + ".";
    for (const auto& rel : relations_of(types[i])) {
      const auto& pool = by_type[rel.target];
      int target = pool[rng.index(pool.size())];
      while (target == i && pool.size() > 1) target = pool[rng.index(pool.size())];
      d.facts.push_back({names[i], rel.name, names[target]});
      d.body += " " + names[i] + "'s " + rel.name + " is " + names[target] + ".";
    }
  }

  Fixture fx;
  std::map<std::string, int> doc_of;
  for (int i = 0; i < n_docs; ++i) doc_of[names[i]] = i;

  Rng task_rng(derive_seed(seed, 2));
  for (int t = 0; t < n_tasks; ++t) {
    EnvTask task;
    const int e = static_cast<int>(task_rng.index(n_docs));
    const bool two_hop = task_rng.uniform() < 0.5;
    const Fact& f1 = docs[e].facts[task_rng.index(docs[e].facts.size())];
    task.entity = names[e];
    task.relations.push_back(f1.relation);
    task.supporting_docs.push_back(e);
    char id[32];
    std::snprintf(id, sizeof(id), "s%llu-%04d", static_cast<unsigned long long>(seed), t);
    task.task_id = id;
    if (!two_hop) {
      task.hop_count = 1;
      task.gold_answers = {f1.value};
      task.question = "What is the " + f1.relation + " of " + names[e] + "?";
    } else {
      const int b = doc_of.at(f1.value);
      const Fact& f2 = docs[b].facts[task_rng.index(docs[b].facts.size())];
      task.hop_count = 2;
      task.relations.push_back(f2.relation);
      task.supporting_docs.push_back(b);
      task.gold_answers = {f2.value};
      task.question = "What is the " + f2.relation + " of the " + f1.relation + " of " + names[e] + "?";
    }
    fx.tasks.push_back(std::move(task));
  }
  fx.corpus = Corpus(std::move(docs));
  return fx;
}

std::vector<const Document*> retrieve(std::string_view query, const Corpus& corpus, int top_k) {
  if (top_k < 1) throw std::invalid_argument("retrieve: top_k must be >= 1");
  std::vector<std::string> terms;
  for (auto& term : word_terms(query)) {
    if (stopwords().count(term) > 0) continue;
    if (std::find(terms.begin(), terms.end(), term) == terms.end()) terms.push_back(std::move(term));
  }
  std::map<int, int> score;
  for (const auto& term : terms) {
    for (const auto& p : corpus.postings(term)) score[p.doc_index] += p.term_frequency;
  }
  std::vector<std::pair<int, int>> ranked(score.begin(), score.end());
  std::stable_sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return corpus.documents()[a.first].doc_id < corpus.documents()[b.first].doc_id;
  });
  std::vector<const Document*> out;
  for (const auto& [index, s] : ranked) {
    if (static_cast<int>(out.size()) == top_k) break;
    out.push_back(&corpus.documents()[index]);
  }
  return out;
}

std::string render_documents(const std::vector<const Document*>& docs, ProfileMode mode) {
  std::string out;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (i > 0) out += "\n";
    if (mode == ProfileMode::kSearchAgent) {
      out += "Doc " + std::to_string(i + 1) + "(Title: \"" + docs[i]->title + "\") " + docs[i]->body;
    } else {
      out += docs[i]->title + ". " + docs[i]->body;
    }
  }
  return out;
}

EnvConfig EnvConfig::for_profile(ProfileMode mode, int max_turns) {
  if (mode == ProfileMode::kTwoTurnTool) return {mode, 2, 1};
  return {mode, max_turns, 3};
}

EnvState SearchEnvironment::reset(const EnvTask& task) const {
  if (cfg_.max_turns < 1 || cfg_.max_turns > kMaxTurnsCap) {
    throw std::invalid_argument("SearchEnvironment: max_turns must be in 1.." + std::to_string(kMaxTurnsCap));
  }
  EnvState s;
  s.task = &task;
  return s;
}

StepResult SearchEnvironment::step(const EnvState& state, std::string_view action_text) const {
  if (state.done) throw std::logic_error("SearchEnvironment::step: episode already done");
  const TagProfile& profile = TagProfile::of(cfg_.mode);
  StepResult r{state, {}};
  EnvState& s = r.state;
  s.turn_index += 1;
  s.transcript.append(action_text);
  s.retrieved.emplace_back();

  std::optional<std::string> query;
  s.searches_used += count_action_spans(action_text, profile, &query);

  if (has_answer_span(action_text, profile)) {
    s.done = true;
    s.answered = true;
    return r;
  }
  if (s.turn_index >= cfg_.max_turns) {
    s.done = true;
    return r;
  }
  if (cfg_.mode == ProfileMode::kSearchAgent) {
    if (!query) {
      r.feedback = wrap_feedback(profile, kInvalidSearch);
    } else {
      const auto docs = retrieve(*query, *corpus_, cfg_.top_k);
      for (const Document* d : docs) s.retrieved.back().push_back(d->doc_id);
      r.feedback = wrap_feedback(profile, render_documents(docs, cfg_.mode));
    }
  } else {
    if (!query) {
      s.done = true;
      return r;
    }
    const auto call = nlohmann::json::parse(*query, nullptr, false);
    const bool valid = !call.is_discarded() && call.is_object() && call.contains("name") &&
                       call["name"] == "wiki_search" && call.contains("args") && call["args"].is_object() &&
                       call["args"].contains("query") && call["args"]["query"].is_string();
    if (!valid) {
      r.feedback = wrap_feedback(profile, kToolError);
    } else {
      const auto docs = retrieve(call["args"]["query"].get<std::string>(), *corpus_, cfg_.top_k);
      for (const Document* d : docs) s.retrieved.back().push_back(d->doc_id);
      r.feedback = wrap_feedback(profile, render_documents(docs, cfg_.mode));
    }
  }
  s.transcript.append(r.feedback);
  return r;
}

Observation SearchEnvironment::observe(const EnvState& state) const {
  const EnvTask& task = *state.task;
  Observation o;
  o.mode = cfg_.mode;
  o.turn = state.turn_index + 1;
  o.max_turns = cfg_.max_turns;
  o.hop_count = task.hop_count;
  o.searches_used = state.searches_used;

  std::vector<const Document*> seen;
  for (const auto& ids : state.retrieved) {
    for (int id : ids) seen.push_back(&corpus_->doc(id));
  }
  std::vector<const Document*> latest;
  if (!state.retrieved.empty()) {
    for (int id : state.retrieved.back()) latest.push_back(&corpus_->doc(id));
  }

  std::string target = task.entity;
  if (task.hop_count == 2) {
    if (const Fact* f = find_fact(seen, task.entity, task.relations[0])) {
      o.bridge_known = true;
      o.bridge = f->value;
    }
    target = o.bridge;
  }
  const std::string& rel = task.final_relation();

  if (!target.empty()) {
    if (const Fact* f = find_fact(seen, target, rel)) {
      o.answer_available[0] = true;
      o.answer_text[0] = f->value;
    }
  }
  for (const Document* d : latest) {
    const auto it = std::find_if(d->facts.begin(), d->facts.end(), [&](const Fact& f) { return f.relation == rel; });
    if (it != d->facts.end()) {
      o.answer_available[1] = true;
      o.answer_text[1] = it->value;
      break;
    }
  }
  if (!latest.empty() && !latest.front()->facts.empty()) {
    o.answer_available[2] = true;
    o.answer_text[2] = latest.front()->facts.front().value;
  }
  o.answer_available[3] = true;
  o.answer_text[3] = task.entity;

  o.query_available[0] = true;
  o.query_text[0] = task.entity + " " + task.relations[0];
  if (task.hop_count == 2 && o.bridge_known) {
    o.query_available[1] = true;
    o.query_text[1] = o.bridge + " " + rel;
  }
  o.query_available[2] = true;
  o.query_text[2] = task.question;
  o.query_available[3] = true;
  o.query_text[3] = rel;

  // Identical renderings would make the action decoding ambiguous.
  auto dedupe = [](auto& available, const auto& text) {
    for (std::size_t i = 0; i < available.size(); ++i) {
      for (std::size_t j = 0; j < i && available[i]; ++j) {
        if (available[j] && text[j] == text[i]) available[i] = false;
      }
    }
  };
  dedupe(o.answer_available, o.answer_text);
  dedupe(o.query_available, o.query_text);
  return o;
}

Trajectory SearchEnvironment::trajectory(const EnvState& state) const {
  return parse_turns(state.transcript, TagProfile::of(cfg_.mode), state.task->task_id, state.task->question);
}

DecisionPoint turn_type_point(const Observation& obs) {
  DecisionPoint p;
  p.kind = DecisionKind::kTurnType;
  p.state = Eigen::VectorXd::Zero(kStateDims[0]);
  p.state(0) = 1.0;
  p.state(1 + std::min(obs.turn, kMaxTurnsCap) - 1) = 1.0;
  p.state(9) = obs.last_turn() ? 1.0 : 0.0;
  p.state(10) = obs.bridge_known ? 1.0 : 0.0;
  p.state(11) = obs.answer_found() ? 1.0 : 0.0;
  p.state(12) = obs.searches_used / 4.0;
  p.available = {true, true, false, false};
  if (obs.forced_action) {
    p.available[kActTurn] = *obs.forced_action;
    p.available[kAnswerTurn] = !*obs.forced_action;
  }
  return p;
}

DecisionPoint format_point(const Observation& obs, int turn_type) {
  DecisionPoint p;
  p.kind = DecisionKind::kFormat;
  p.state = Eigen::VectorXd::Zero(kStateDims[1]);
  p.state(0) = 1.0;
  p.state(1) = turn_type == kAnswerTurn ? 1.0 : 0.0;
  p.state(2) = obs.turn == 1 ? 1.0 : 0.0;
  p.available = {true, true, true, false};
  return p;
}

DecisionPoint slot_point(const Observation& obs, int turn_type) {
  DecisionPoint p;
  if (turn_type == kActTurn) {
    p.kind = DecisionKind::kQuery;
    p.state = Eigen::VectorXd::Zero(kStateDims[2]);
    p.state(0) = 1.0;
    p.state(1) = obs.hop_count == 2 ? 1.0 : 0.0;
    p.state(2) = obs.bridge_known ? 1.0 : 0.0;
    p.state(3) = obs.searches_used > 0 ? 1.0 : 0.0;
    p.available = obs.query_available;
  } else {
    p.kind = DecisionKind::kAnswer;
    p.state = Eigen::VectorXd::Zero(kStateDims[3]);
    p.state(0) = 1.0;
    p.state(1) = obs.hop_count == 2 ? 1.0 : 0.0;
    p.state(2) = obs.answer_found() ? 1.0 : 0.0;
    p.available = obs.answer_available;
  }
  return p;
}

std::string render_action(const Observation& obs, const TurnChoice& choice) {
  const bool act = choice.turn_type == kActTurn;
  const auto& slots = act ? obs.query_available : obs.answer_available;
  if (choice.slot < 0 || choice.slot >= 4 || !slots[choice.slot]) {
    throw std::invalid_argument("render_action: slot " + std::to_string(choice.slot) + " unavailable");
  }
  const std::string& fill = act ? obs.query_text[choice.slot] : obs.answer_text[choice.slot];
  if (obs.mode == ProfileMode::kSearchAgent) {
    const std::string think = act ? "<think> I need more information to answer the question. </think>\n"
                                  : "<think> I have enough information to answer. </think>\n";
    const std::string body = act ? "<search> " + fill + " </search>" : "<answer> " + fill + " </answer>";
    switch (choice.format) {
      case kCanonical: return think + body;
      case kNoReasoning: return body;
      default: return think + body + "\n</think>";
    }
  }
  const std::string reasoning = act ? "<reasoning>I should look this up with the search tool.</reasoning>\n"
                                    : "<reasoning>The search result contains the answer.</reasoning>\n";
  if (act) {
    const std::string name = choice.format == kMalformed ? "wiki_lookup" : "wiki_search";
    const std::string body = "<tool>" + tool_call(name, fill) + "</tool>";
    return choice.format == kNoReasoning ? body : reasoning + body;
  }
  switch (choice.format) {
    case kCanonical: return reasoning + "<answer>" + fill + "</answer>";
    case kNoReasoning: return "<answer>" + fill + "</answer>";
    default: return reasoning + "<answer> " + fill + " </answer>";
  }
}

namespace {

int first_available(const DecisionPoint& p) {
  for (int i = 0; i < p.n_options(); ++i) {
    if (p.available[i]) return i;
  }
  throw std::logic_error("decision point with no available option");
}

int prefer(const DecisionPoint& p, std::initializer_list<int> order) {
  for (int i : order) {
    if (i < p.n_options() && p.available[i]) return i;
  }
  return first_available(p);
}

}  // namespace

int ScriptedPolicy::choose(const DecisionPoint& point, const Observation& obs, Rng& /*rng*/) const {
  switch (point.kind) {
    case DecisionKind::kTurnType: {
      int want = kActTurn;
      if (script_ == Script::kAnswerImmediately) want = kAnswerTurn;
      if (script_ == Script::kOracle && (obs.answer_found() || obs.last_turn())) want = kAnswerTurn;
      return prefer(point, {want});
    }
    case DecisionKind::kFormat: return prefer(point, {kCanonical});
    case DecisionKind::kQuery: return prefer(point, {1, 0});
    case DecisionKind::kAnswer: return prefer(point, {0, 1, 2, 3});
  }
  return first_available(point);
}

namespace {

struct TurnRecord {
  Observation obs;
  TurnChoice choice;
  std::array<DecisionPoint, 3> points;
};

void fill_critic_row(Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> row, const TurnRecord& rec, std::size_t j, bool feedback) {
  const Observation& o = rec.obs;
  row.setZero();
  row(std::min(o.turn, kMaxTurnsCap) - 1) = 1.0;
  row(8) = o.searches_used / 4.0;
  row(9) = o.answer_found() ? 1.0 : 0.0;
  row(10) = o.hop_count == 2 ? 1.0 : 0.0;
  row(11) = o.bridge_known ? 1.0 : 0.0;
  row(12) = feedback ? 1.0 : 0.0;
  if (j >= 1 || feedback) row(rec.choice.turn_type == kActTurn ? 13 : 14) = 1.0;
  row(15) = o.last_turn() ? 1.0 : 0.0;
  if (j >= 2 || feedback) row(16) = rec.choice.format == kCanonical ? 1.0 : 0.0;
  if (j >= 3 || feedback) row(17 + rec.choice.slot) = 1.0;
}

Episode finalize(const SearchEnvironment& env, const EnvTask& task, const EnvState& state,
                 const std::vector<TurnRecord>& records) {
  Episode ep;
  ep.task = &task;
  ep.trajectory = env.trajectory(state);
  ep.searches_used = state.searches_used;
  if (ep.trajectory.turns.size() != records.size()) {
    throw std::logic_error("episode parsed into " + std::to_string(ep.trajectory.turns.size()) + " turns, expected " +
                           std::to_string(records.size()));
  }
  const auto offsets = ep.trajectory.turn_token_offsets();
  ep.critic_features = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ep.trajectory.token_count()), kCriticDims);
  for (std::size_t k = 0; k < records.size(); ++k) {
    const TurnSegment& turn = ep.trajectory.turns[k];
    if (turn.policy_tokens.size() < 3) throw std::logic_error("turn shorter than its decision tokens");
    const int choices[3] = {records[k].choice.turn_type, records[k].choice.format, records[k].choice.slot};
    for (std::size_t d = 0; d < 3; ++d) ep.decisions.push_back({records[k].points[d], choices[d], offsets[k] + d});
    for (std::size_t j = 0; j < turn.token_count(); ++j) {
      fill_critic_row(ep.critic_features.row(static_cast<Eigen::Index>(offsets[k] + j)), records[k], j,
                      j >= turn.policy_tokens.size());
    }
    ep.choices.push_back(records[k].choice);
  }
  return ep;
}

TurnRecord sample_turn(const Observation& obs, const Policy& policy, Rng& rng) {
  TurnRecord rec;
  rec.obs = obs;
  rec.points[0] = turn_type_point(obs);
  rec.choice.turn_type = policy.choose(rec.points[0], obs, rng);
  rec.points[1] = format_point(obs, rec.choice.turn_type);
  rec.choice.format = policy.choose(rec.points[1], obs, rng);
  rec.points[2] = slot_point(obs, rec.choice.turn_type);
  rec.choice.slot = policy.choose(rec.points[2], obs, rng);
  for (int d = 0; d < 3; ++d) {
    const int c = d == 0 ? rec.choice.turn_type : d == 1 ? rec.choice.format : rec.choice.slot;
    if (c < 0 || c >= rec.points[d].n_options() || !rec.points[d].available[c]) {
      throw std::logic_error("policy chose an unavailable option");
    }
  }
  return rec;
}

}  // namespace

Episode run_episode(const SearchEnvironment& env, const Policy& policy, const EnvTask& task, std::uint64_t seed,
                    std::optional<int> fixed_turns) {
  EnvState state = env.reset(task);
  std::vector<TurnRecord> records;
  while (!state.done) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(state.turn_index)));
    Observation obs = env.observe(state);
    if (fixed_turns) obs.forced_action = obs.turn < *fixed_turns;
    TurnRecord rec = sample_turn(obs, policy, rng);
    state = env.step(state, render_action(rec.obs, rec.choice)).state;
    records.push_back(std::move(rec));
  }
  if (fixed_turns && state.turn_index != *fixed_turns) {
    throw FixedTurnViolation("episode for task " + task.task_id + " ended after " +
                             std::to_string(state.turn_index) + " turns, fixed turn count is " +
                             std::to_string(*fixed_turns));
  }
  return finalize(env, task, state, records);
}

Episode replay_episode(const SearchEnvironment& env, const EnvTask& task, const Trajectory& traj) {
  EnvState state = env.reset(task);
  std::vector<TurnRecord> records;
  for (std::size_t k = 0; k < traj.turns.size(); ++k) {
    if (state.done) throw std::invalid_argument("replay: trajectory continues after the episode ended");
    const TurnSegment& turn = traj.turns[k];
    const std::string_view want = trim(turn.policy_text());
    TurnRecord rec;
    rec.obs = env.observe(state);
    bool found = false;
    for (int type = 0; type < 2 && !found; ++type) {
      for (int format = 0; format < 3 && !found; ++format) {
        const DecisionPoint slots = slot_point(rec.obs, type);
        for (int slot = 0; slot < slots.n_options() && !found; ++slot) {
          if (!slots.available[slot]) continue;
          const TurnChoice c{type, format, slot};
          if (render_action(rec.obs, c) == want) {
            rec.choice = c;
            found = true;
          }
        }
      }
    }
    if (!found) throw std::invalid_argument("replay: turn " + std::to_string(k + 1) + " is outside the action templates");
    rec.points = {turn_type_point(rec.obs), format_point(rec.obs, rec.choice.turn_type),
                  slot_point(rec.obs, rec.choice.turn_type)};
    const StepResult r = env.step(state, render_action(rec.obs, rec.choice));
    if (trim(r.feedback) != trim(turn.feedback_text())) {
      throw std::invalid_argument("replay: feedback of turn " + std::to_string(k + 1) + " does not match the environment");
    }
    state = r.state;
    records.push_back(std::move(rec));
  }
  return finalize(env, task, state, records);
}

GroupRollout rollout_group(const SearchEnvironment& env, const Policy& policy, const EnvTask& task, int group_size,
                           std::uint64_t seed) {
  if (group_size < 1) throw std::invalid_argument("rollout_group: group size must be >= 1");
  GroupRollout g;
  g.task = &task;
  for (int i = 0; i < group_size; ++i) {
    g.episodes.push_back(run_episode(env, policy, task, derive_seed(seed, static_cast<std::uint64_t>(i))));
  }
  return g;
}

std::vector<std::vector<int>> RolloutTree::sibling_groups(int depth) const {
  std::vector<std::vector<int>> groups;
  std::map<int, std::size_t> slot;
  for (int i = 0; i < static_cast<int>(nodes.size()); ++i) {
    if (nodes[i].depth != depth) continue;
    const auto [it, inserted] = slot.try_emplace(nodes[i].parent, groups.size());
    if (inserted) groups.emplace_back();
    groups[it->second].push_back(i);
  }
  return groups;
}

RolloutTree rollout_tree(const SearchEnvironment& env, const Policy& policy, const EnvTask& task, int group_size,
                         int turns, std::uint64_t seed) {
  if (turns < 2) throw std::invalid_argument("rollout_tree: K must be >= 2");
  if (group_size < 1) throw std::invalid_argument("rollout_tree: G must be >= 1");
  RolloutTree tree;
  tree.task = &task;
  tree.group_size = group_size;
  tree.turns = turns;

  // A node's draw uses derive_seed(derive_seed(seed, key), depth - 1), where key is
  // its index within its depth. With G = 1 this reproduces run_episode.
  struct Frontier {
    int node;
    std::uint64_t key;
    EnvState state;
    std::vector<TurnRecord> records;
  };
  std::vector<Frontier> frontier = {{-1, 0, env.reset(task), {}}};
  for (int depth = 1; depth < turns; ++depth) {
    std::vector<Frontier> next;
    for (const Frontier& f : frontier) {
      for (int g = 0; g < group_size; ++g) {
        const std::uint64_t key = f.key * static_cast<std::uint64_t>(group_size) + static_cast<std::uint64_t>(g);
        Rng rng(derive_seed(derive_seed(seed, key), static_cast<std::uint64_t>(depth - 1)));
        Observation obs = env.observe(f.state);
        obs.forced_action = true;
        TurnRecord rec = sample_turn(obs, policy, rng);
        const StepResult r = env.step(f.state, render_action(rec.obs, rec.choice));
        if (r.state.done) {
          throw FixedTurnViolation("rollout_tree: branch at depth " + std::to_string(depth) + " of task " +
                                   task.task_id + " terminated early; all branches must contain " +
                                   std::to_string(turns) + " turns");
        }
        tree.nodes.push_back({f.node, depth});
        Frontier child{static_cast<int>(tree.nodes.size()) - 1, key, r.state, f.records};
        child.records.push_back(std::move(rec));
        next.push_back(std::move(child));
      }
    }
    frontier = std::move(next);
  }
  for (const Frontier& f : frontier) {
    Rng rng(derive_seed(derive_seed(seed, f.key), static_cast<std::uint64_t>(turns - 1)));
    Observation obs = env.observe(f.state);
    obs.forced_action = false;
    TurnRecord rec = sample_turn(obs, policy, rng);
    const StepResult r = env.step(f.state, render_action(rec.obs, rec.choice));
    std::vector<TurnRecord> records = f.records;
    records.push_back(std::move(rec));
    if (!r.state.done || r.state.turn_index != turns) {
      throw FixedTurnViolation("rollout_tree: leaf of task " + task.task_id + " did not end at turn " +
                               std::to_string(turns));
    }
    tree.leaves.push_back(finalize(env, task, r.state, records));
    std::vector<int> path;
    for (int n = f.node; n >= 0; n = tree.nodes[n].parent) path.push_back(n);
    std::reverse(path.begin(), path.end());
    tree.leaf_path.push_back(std::move(path));
  }
  return tree;
}

}  // namespace turncredit
