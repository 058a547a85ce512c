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

#include "turncredit/optim.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "turncredit/losses.hpp"
#include "turncredit/text.hpp"

namespace turncredit {
namespace {

int kind_index(DecisionKind kind) { return static_cast<int>(kind); }

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(std::string_view key, std::string_view v) {
  const std::string s(trim(v));
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw std::invalid_argument("config: bad number for " + std::string(key) + ": " + s);
  return out;
}

long long parse_int(std::string_view key, std::string_view v) {
  const std::string_view s = trim(v);
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw std::invalid_argument("config: bad integer for " + std::string(key) + ": " + std::string(s));
  }
  return out;
}

Eigen::VectorXd per_group_normalize(const Eigen::VectorXd& r, double floor) {
  return group_normalize(r, floor);
}

}  // namespace

// ---------------------------------------------------------------------------
// ToyPolicy

ToyPolicy::ToyPolicy(Eigen::VectorXd theta) : theta_(std::move(theta)) {
  if (theta_.size() != param_count()) {
    throw std::invalid_argument("ToyPolicy: expected " + std::to_string(param_count()) + " parameters, got " +
                                std::to_string(theta_.size()));
  }
}

int ToyPolicy::block_offset(DecisionKind kind) {
  int off = 0;
  for (int k = 0; k < kind_index(kind); ++k) off += kNumOptions[k] * kStateDims[k];
  return off;
}

int ToyPolicy::param_count() {
  int n = 0;
  for (int k = 0; k < kNumDecisionKinds; ++k) n += kNumOptions[k] * kStateDims[k];
  return n;
}

ToyPolicy ToyPolicy::random_init(std::uint64_t seed, double scale) {
  Rng rng(seed);
  Eigen::VectorXd theta(param_count());
  for (Eigen::Index i = 0; i < theta.size(); ++i) theta(i) = scale * rng.normal();
  return ToyPolicy(std::move(theta));
}

Eigen::VectorXd ToyPolicy::probabilities(const DecisionPoint& point) const {
  const int k = kind_index(point.kind);
  const int n = kNumOptions[k];
  const int s = kStateDims[k];
  if (point.state.size() != s) throw std::invalid_argument("ToyPolicy: state dimension mismatch");
  const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> w(
      theta_.data() + block_offset(point.kind), n, s);
  const Eigen::VectorXd logits = w * point.state;
  double max_logit = -std::numeric_limits<double>::infinity();
  for (int o = 0; o < n; ++o) {
    if (point.available[o]) max_logit = std::max(max_logit, logits(o));
  }
  if (!std::isfinite(max_logit)) throw std::logic_error("ToyPolicy: no available option");
  Eigen::VectorXd p = Eigen::VectorXd::Zero(n);
  for (int o = 0; o < n; ++o) {
    if (point.available[o]) p(o) = std::exp(logits(o) - max_logit);
  }
  return p / p.sum();
}

double ToyPolicy::log_prob(const DecisionPoint& point, int choice) const {
  const Eigen::VectorXd p = probabilities(point);
  if (choice < 0 || choice >= p.size() || !point.available[choice]) {
    throw std::invalid_argument("ToyPolicy: choice outside the available options");
  }
  return std::log(p(choice));
}

void ToyPolicy::accumulate_grad_log_prob(const DecisionPoint& point, int choice, double scale,
                                         Eigen::VectorXd& grad) const {
  const Eigen::VectorXd p = probabilities(point);
  const int s = static_cast<int>(point.state.size());
  const int off = block_offset(point.kind);
  for (int o = 0; o < p.size(); ++o) {
    const double coef = scale * ((o == choice ? 1.0 : 0.0) - p(o));
    if (coef != 0.0) grad.segment(off + o * s, s) += coef * point.state;
  }
}

int ToyPolicy::choose(const DecisionPoint& point, const Observation& /*obs*/, Rng& rng) const {
  const Eigen::VectorXd p = probabilities(point);
  int last = -1;
  if (greedy_) {
    int best = -1;
    for (int o = 0; o < p.size(); ++o) {
      if (point.available[o] && (best < 0 || p(o) > p(best))) best = o;
    }
    return best;
  }
  const double u = rng.uniform();
  double cum = 0.0;
  for (int o = 0; o < p.size(); ++o) {
    if (!point.available[o]) continue;
    cum += p(o);
    last = o;
    if (u < cum) return o;
  }
  return last;
}

Eigen::VectorXd policy_logprobs(const ToyPolicy& policy, const Episode& episode) {
  Eigen::VectorXd lp = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(episode.trajectory.token_count()));
  for (const auto& d : episode.decisions) lp(static_cast<Eigen::Index>(d.token)) += policy.log_prob(d.point, d.choice);
  return lp;
}

Eigen::VectorXd policy_logprobs(const ToyPolicy& policy, const SearchEnvironment& env, const EnvTask& task,
                                const Trajectory& traj) {
  return policy_logprobs(policy, replay_episode(env, task, traj));
}

// ---------------------------------------------------------------------------
// Critic

Critic::Critic(Eigen::VectorXd weights, double bias) : weights_(std::move(weights)), bias_(bias) {
  if (weights_.size() != kCriticDims) throw std::invalid_argument("Critic: weight dimension mismatch");
}

Eigen::VectorXd Critic::values(const Eigen::MatrixXd& features) const {
  return (features * weights_).array() + bias_;
}

Critic::Objective Critic::objective(const std::vector<const Eigen::MatrixXd*>& features,
                                    const std::vector<Eigen::VectorXd>& targets) const {
  if (features.size() != targets.size()) throw std::invalid_argument("Critic::objective: size mismatch");
  Objective out;
  out.grad = Eigen::VectorXd::Zero(kCriticDims + 1);
  if (features.empty()) return out;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const Eigen::MatrixXd& x = *features[i];
    if (x.rows() == 0) continue;
    const Eigen::VectorXd err = values(x) - targets[i];
    const double n = static_cast<double>(x.rows());
    out.loss += 0.5 * err.squaredNorm() / n;
    out.grad.head(kCriticDims) += x.transpose() * err / n;
    out.grad(kCriticDims) += err.sum() / n;
  }
  const double m = static_cast<double>(features.size());
  out.loss /= m;
  out.grad /= m;
  return out;
}

Eigen::VectorXd Critic::flat() const {
  Eigen::VectorXd p(kCriticDims + 1);
  p << weights_, bias_;
  return p;
}

void Critic::set_flat(const Eigen::VectorXd& params) {
  if (params.size() != kCriticDims + 1) throw std::invalid_argument("Critic::set_flat: dimension mismatch");
  weights_ = params.head(kCriticDims);
  bias_ = params(kCriticDims);
}

// ---------------------------------------------------------------------------
// Configuration

std::string_view algorithm_name(Algorithm algo) {
  switch (algo) {
    case Algorithm::kGrpoOr: return "grpo-or";
    case Algorithm::kGrpoMr: return "grpo-mr";
    case Algorithm::kMtGrpo: return "mt-grpo";
    case Algorithm::kPpoOr: return "ppo-or";
    case Algorithm::kPpoMr: return "ppo-mr";
    case Algorithm::kMtPpo: return "mt-ppo";
  }
  return "?";
}

Algorithm parse_algorithm(std::string_view name) {
  std::string s = to_lower(trim(name));
  std::replace(s.begin(), s.end(), '_', '-');
  for (Algorithm a : {Algorithm::kGrpoOr, Algorithm::kGrpoMr, Algorithm::kMtGrpo, Algorithm::kPpoOr, Algorithm::kPpoMr,
                      Algorithm::kMtPpo}) {
    if (s == algorithm_name(a)) return a;
  }
  throw std::invalid_argument("unknown algorithm: " + std::string(name));
}

std::string_view reward_source_name(RewardSource source) {
  return source == RewardSource::kVerifiable ? "verifiable" : "judge";
}

RewardSource parse_reward_source(std::string_view name) {
  const std::string s = to_lower(trim(name));
  if (s == "verifiable") return RewardSource::kVerifiable;
  if (s == "judge") return RewardSource::kJudge;
  throw std::invalid_argument("unknown reward source: " + std::string(name));
}

bool uses_critic(Algorithm algo) {
  return algo == Algorithm::kPpoOr || algo == Algorithm::kPpoMr || algo == Algorithm::kMtPpo;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
  if (steps < 0) fail("steps must be >= 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (inner_epochs < 1) fail("inner_epochs must be >= 1");
  if (!(lr_policy > 0.0) || !(lr_critic > 0.0)) fail("learning rates must be > 0");
  if (max_turns < 1 || max_turns > kMaxTurnsCap) fail("max_turns must be in 1.." + std::to_string(kMaxTurnsCap));
  if (mode == ProfileMode::kTwoTurnTool && max_turns != 2) fail("two_turn_tool profile requires max_turns = 2");
  const bool grouped = !uses_critic(algo);
  if (grouped && group_size < 2) fail("group algorithms need group_size >= 2");
  if (group_size < 1) fail("group_size must be >= 1");
  if (algo == Algorithm::kMtGrpo && (tree_turns < 2 || tree_turns > max_turns)) {
    fail("mt-grpo needs 2 <= tree_turns <= max_turns");
  }
  auto unit = [&](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) fail(std::string(name) + " must be in [0, 1]");
  };
  unit(credit.gamma, "gamma");
  unit(credit.lambda, "lambda");
  unit(credit.alpha, "alpha");
  if (!(credit.std_floor > 0.0)) fail("std_floor must be > 0");
  if (!(credit.clip_eps > 0.0 && credit.clip_eps < 1.0)) fail("clip_eps must be in (0, 1)");
  if (!(credit.kl_beta >= 0.0)) fail("kl_beta must be >= 0");
  if (!(lambda_s >= 0.0)) fail("lambda_s must be >= 0");
}

RewardFn verifiable_rewards(double lambda_s) {
  return [lambda_s](const Episode& ep) { return score(ep.trajectory, RewardConfig{lambda_s, ep.task->gold_answers}); };
}

// ---------------------------------------------------------------------------
// Batches and advantages

Batch collect_batch(const TrainConfig& cfg, const SearchEnvironment& env, const Policy& policy,
                    const std::vector<const EnvTask*>& tasks, std::uint64_t seed, const RewardFn& reward_fn) {
  Batch batch;
  batch.tree_shaped = cfg.algo == Algorithm::kMtGrpo;
  for (std::size_t b = 0; b < tasks.size(); ++b) {
    const std::uint64_t s = derive_seed(seed, b);
    Batch::Group g;
    g.first = batch.episodes.size();
    if (batch.tree_shaped) {
      RolloutTree tree = rollout_tree(env, policy, *tasks[b], cfg.group_size, cfg.tree_turns, s);
      g.size = tree.leaves.size();
      g.tree = static_cast<int>(batch.trees.size());
      for (auto& leaf : tree.leaves) batch.episodes.push_back(std::move(leaf));
      tree.leaves.clear();
      batch.trees.push_back(std::move(tree));
    } else {
      GroupRollout group = rollout_group(env, policy, *tasks[b], cfg.group_size, s);
      g.size = group.episodes.size();
      for (auto& ep : group.episodes) batch.episodes.push_back(std::move(ep));
    }
    batch.groups.push_back(g);
  }
  batch.rewards.reserve(batch.episodes.size());
  for (const auto& ep : batch.episodes) batch.rewards.push_back(reward_fn(ep));
  return batch;
}

Advantages grpo_advantages(const TrainConfig& cfg, const Batch& batch, const std::vector<double>& trajectory_rewards) {
  if (batch.tree_shaped) throw std::invalid_argument("grpo advantages need chain rollouts, got a tree batch");
  if (trajectory_rewards.size() != batch.episodes.size()) throw std::invalid_argument("grpo advantages: reward count mismatch");
  Advantages out;
  out.per_episode.resize(batch.episodes.size());
  for (const auto& g : batch.groups) {
    Eigen::VectorXd r(static_cast<Eigen::Index>(g.size));
    for (std::size_t i = 0; i < g.size; ++i) r(static_cast<Eigen::Index>(i)) = trajectory_rewards[g.first + i];
    const Eigen::VectorXd a = per_group_normalize(r, cfg.credit.std_floor);
    for (std::size_t i = 0; i < g.size; ++i) {
      out.per_episode[g.first + i] =
          broadcast_trajectory_advantage(batch.episodes[g.first + i].trajectory, a(static_cast<Eigen::Index>(i)));
    }
  }
  return out;
}

namespace {

Advantages mt_grpo_advantages(const TrainConfig& cfg, const Batch& batch) {
  if (!batch.tree_shaped) throw std::invalid_argument("mt-grpo needs tree rollouts, got chain groups");
  Advantages out;
  out.per_episode.resize(batch.episodes.size());
  const double floor = cfg.credit.std_floor;
  for (const auto& g : batch.groups) {
    const RolloutTree& tree = batch.trees.at(static_cast<std::size_t>(g.tree));
    const int k_turns = tree.turns;
    const auto n_leaves = static_cast<Eigen::Index>(g.size);

    Eigen::VectorXd outcome(n_leaves);
    for (Eigen::Index l = 0; l < n_leaves; ++l) outcome(l) = batch.rewards[g.first + l].outcome.value;
    const Eigen::VectorXd outcome_adv = per_group_normalize(outcome, floor);

    // A node's intermediate reward depends only on its prefix, so any leaf
    // below it carries the same value.
    std::vector<double> node_reward(tree.nodes.size(), 0.0);
    for (Eigen::Index l = 0; l < n_leaves; ++l) {
      const RewardBreakdown& br = batch.rewards[g.first + l];
      if (static_cast<int>(br.intermediate.size()) != k_turns - 1) {
        throw std::logic_error("mt-grpo: leaf reward has " + std::to_string(br.intermediate.size()) +
                               " intermediate turns, expected " + std::to_string(k_turns - 1));
      }
      for (int d = 0; d + 1 < k_turns; ++d) node_reward[tree.leaf_path[l][d]] = br.intermediate[d].total;
    }
    std::vector<double> node_adv(tree.nodes.size(), 0.0);
    for (int depth = 1; depth < k_turns; ++depth) {
      for (const auto& sib : tree.sibling_groups(depth)) {
        Eigen::VectorXd r(static_cast<Eigen::Index>(sib.size()));
        for (std::size_t i = 0; i < sib.size(); ++i) r(static_cast<Eigen::Index>(i)) = node_reward[sib[i]];
        const Eigen::VectorXd a = per_group_normalize(r, floor);
        for (std::size_t i = 0; i < sib.size(); ++i) node_adv[sib[i]] = a(static_cast<Eigen::Index>(i));
      }
    }
    std::vector<Eigen::VectorXd> intermediate(static_cast<std::size_t>(k_turns - 1), Eigen::VectorXd(n_leaves));
    for (Eigen::Index l = 0; l < n_leaves; ++l) {
      for (int d = 0; d + 1 < k_turns; ++d) intermediate[d](l) = node_adv[tree.leaf_path[l][d]];
    }
    const auto per_turn = mt_grpo_general<double>(intermediate, outcome_adv, cfg.credit.alpha);
    for (Eigen::Index l = 0; l < n_leaves; ++l) {
      Eigen::VectorXd turn_adv(k_turns);
      for (int k = 0; k < k_turns; ++k) turn_adv(k) = per_turn[k](l);
      out.per_episode[g.first + l] =
          broadcast_turn_advantages(batch.episodes[g.first + l].trajectory, turn_adv, Estimator::kMtGrpo);
    }
  }
  return out;
}

}  // namespace

Advantages compute_advantages(const TrainConfig& cfg, const Batch& batch, const Critic& critic) {
  const std::size_t n = batch.episodes.size();
  std::vector<double> traj_reward(n);
  switch (cfg.algo) {
    case Algorithm::kGrpoOr:
      for (std::size_t i = 0; i < n; ++i) traj_reward[i] = batch.rewards[i].outcome.value;
      return grpo_advantages(cfg, batch, traj_reward);
    case Algorithm::kGrpoMr:
      for (std::size_t i = 0; i < n; ++i) {
        traj_reward[i] = merge_trajectory_reward(batch.rewards[i].turn_rewards(), cfg.credit.gamma);
      }
      return grpo_advantages(cfg, batch, traj_reward);
    case Algorithm::kMtGrpo:
      return mt_grpo_advantages(cfg, batch);
    case Algorithm::kPpoOr:
    case Algorithm::kPpoMr:
    case Algorithm::kMtPpo:
      break;
  }
  if (batch.tree_shaped) throw std::invalid_argument(std::string(algorithm_name(cfg.algo)) + " needs chain rollouts");
  Advantages out;
  for (std::size_t i = 0; i < n; ++i) {
    const Trajectory& traj = batch.episodes[i].trajectory;
    const RewardBreakdown& br = batch.rewards[i];
    TokenRewardVector r;
    if (cfg.algo == Algorithm::kPpoOr) {
      r = terminal_token_reward(traj, br.outcome.value);
    } else if (cfg.algo == Algorithm::kPpoMr) {
      r = terminal_token_reward(traj, merge_trajectory_reward(br.turn_rewards(), cfg.credit.gamma));
    } else {
      r = place_token_rewards(traj, br);
    }
    const Eigen::VectorXd v = critic.values(batch.episodes[i]);
    out.per_episode.push_back({gae(r.values, v, cfg.credit.gamma, cfg.credit.lambda), Estimator::kGae});
    out.token_rewards.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Updates

PolicyObjective policy_objective(const Eigen::VectorXd& theta, const Batch& batch, const Advantages& adv,
                                 const std::vector<Eigen::VectorXd>& old_lp, const std::vector<Eigen::VectorXd>& ref_lp,
                                 const CreditConfig& credit) {
  const ToyPolicy policy(theta);
  PolicyObjective out;
  out.grad = Eigen::VectorXd::Zero(theta.size());
  const std::size_t n = batch.episodes.size();
  if (n == 0) return out;
  for (std::size_t i = 0; i < n; ++i) {
    const Episode& ep = batch.episodes[i];
    const Eigen::VectorXd lp = policy_logprobs(policy, ep);
    const Eigen::VectorXd mask = mask_vector(loss_mask(ep.trajectory));
    const Eigen::VectorXd w = importance_ratios(lp, old_lp[i]);
    const auto surr = clipped_surrogate(w, adv.per_episode[i].values, mask, credit.clip_eps);
    const auto kl = kl_penalty(lp, ref_lp[i], credit.kl_beta, mask);
    out.surrogate += surr.loss;
    out.kl += kl.loss;
    const Eigen::VectorXd dlp = (surr.grad.array() * w.array()).matrix() + kl.grad;
    for (const auto& d : ep.decisions) {
      const double g = dlp(static_cast<Eigen::Index>(d.token));
      if (g != 0.0) policy.accumulate_grad_log_prob(d.point, d.choice, g, out.grad);
    }
  }
  const double m = static_cast<double>(n);
  out.surrogate /= m;
  out.kl /= m;
  out.grad /= m;
  out.loss = out.surrogate + out.kl;
  return out;
}

UpdateStats policy_update(const TrainConfig& cfg, ToyPolicy& policy, const ToyPolicy& reference, const Batch& batch,
                          const Advantages& adv) {
  std::vector<Eigen::VectorXd> old_lp;
  std::vector<Eigen::VectorXd> ref_lp;
  for (const auto& ep : batch.episodes) {
    old_lp.push_back(policy_logprobs(policy, ep));
    ref_lp.push_back(policy_logprobs(reference, ep));
  }
  UpdateStats stats;
  for (int epoch = 0; epoch < cfg.inner_epochs; ++epoch) {
    const PolicyObjective obj = policy_objective(policy.theta(), batch, adv, old_lp, ref_lp, cfg.credit);
    if (epoch == 0) {
      stats.loss = obj.loss;
      stats.kl = obj.kl;
    }
    policy.theta() -= cfg.lr_policy * obj.grad;
  }
  return stats;
}

double critic_update(const TrainConfig& cfg, Critic& critic, const Batch& batch, const Advantages& adv) {
  if (adv.token_rewards.size() != batch.episodes.size()) throw std::invalid_argument("critic_update: missing token rewards");
  std::vector<const Eigen::MatrixXd*> features;
  std::vector<Eigen::VectorXd> targets;
  for (std::size_t i = 0; i < batch.episodes.size(); ++i) {
    features.push_back(&batch.episodes[i].critic_features);
    targets.push_back(discounted_returns(adv.token_rewards[i].values, cfg.credit.gamma));
  }
  double first_loss = 0.0;
  for (int epoch = 0; epoch < cfg.inner_epochs; ++epoch) {
    const Critic::Objective obj = critic.objective(features, targets);
    if (epoch == 0) first_loss = obj.loss;
    critic.set_flat(critic.flat() - cfg.lr_critic * obj.grad);
  }
  return first_loss;
}

// ---------------------------------------------------------------------------
// Evaluation and training

EvalSummary evaluate(const Policy& policy, const SearchEnvironment& env, const std::vector<const EnvTask*>& tasks,
                     double lambda_s, std::uint64_t seed) {
  EvalSummary s;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const Episode ep = run_episode(env, policy, *tasks[i], derive_seed(seed, i));
    const RewardBreakdown br = score(ep.trajectory, RewardConfig{lambda_s, tasks[i]->gold_answers});
    const EvalFlags flags = evaluation_metrics(ep.trajectory, tasks[i]->gold_answers);
    s.outcome_reward += br.outcome.value;
    s.answer_rate += flags.answer ? 1.0 : 0.0;
    s.format_rate += flags.format ? 1.0 : 0.0;
    s.retrieval_rate += flags.retrieval ? 1.0 : 0.0;
    s.mean_turns += static_cast<double>(ep.trajectory.turns.size());
    s.mean_searches += ep.searches_used;
  }
  s.episodes = static_cast<int>(tasks.size());
  if (s.episodes > 0) {
    const double n = s.episodes;
    s.outcome_reward /= n;
    s.answer_rate /= n;
    s.format_rate /= n;
    s.retrieval_rate /= n;
    s.mean_turns /= n;
    s.mean_searches /= n;
  }
  return s;
}

Trainer::Trainer(TrainConfig cfg, const Corpus& corpus, std::vector<const EnvTask*> train_tasks, RewardFn reward_fn)
    : cfg_(std::move(cfg)),
      env_(corpus, EnvConfig::for_profile(cfg_.mode, cfg_.max_turns)),
      train_tasks_(std::move(train_tasks)),
      reward_fn_(reward_fn ? std::move(reward_fn) : verifiable_rewards(cfg_.lambda_s)),
      policy_(ToyPolicy::random_init(derive_seed(cfg_.seed, 7), cfg_.init_scale)),
      reference_(policy_) {
  cfg_.validate();
  if (train_tasks_.empty()) throw std::invalid_argument("Trainer: no training tasks");
}

StepMetrics Trainer::step(int step_index) {
  Rng rng(derive_seed(cfg_.seed, 1000000 + static_cast<std::uint64_t>(step_index)));
  std::vector<const EnvTask*> tasks;
  for (int b = 0; b < cfg_.batch_size; ++b) tasks.push_back(train_tasks_[rng.index(train_tasks_.size())]);

  policy_.set_greedy(false);
  last_batch_ = collect_batch(cfg_, env_, policy_, tasks, derive_seed(cfg_.seed, 2000000 + step_index), reward_fn_);
  last_adv_ = compute_advantages(cfg_, last_batch_, critic_);

  StepMetrics m;
  m.step = step_index;
  const std::size_t n = last_batch_.episodes.size();
  double adv_sum = 0.0;
  double adv_sq = 0.0;
  double adv_count = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Episode& ep = last_batch_.episodes[i];
    const EvalFlags flags = evaluation_metrics(ep.trajectory, ep.task->gold_answers);
    m.outcome_reward += last_batch_.rewards[i].outcome.value;
    m.answer_rate += flags.answer ? 1.0 : 0.0;
    m.format_rate += flags.format ? 1.0 : 0.0;
    m.retrieval_rate += flags.retrieval ? 1.0 : 0.0;
    m.mean_turns += static_cast<double>(ep.trajectory.turns.size());
    m.mean_searches += ep.searches_used;
    const Eigen::VectorXd mask = mask_vector(loss_mask(ep.trajectory));
    const Eigen::VectorXd& a = last_adv_.per_episode[i].values;
    adv_sum += a.dot(mask);
    adv_sq += a.array().square().matrix().dot(mask);
    adv_count += mask.sum();
    m.adv_abs_max = std::max(m.adv_abs_max, (a.array() * mask.array()).abs().maxCoeff());
  }
  if (n > 0) {
    const double dn = static_cast<double>(n);
    m.outcome_reward /= dn;
    m.answer_rate /= dn;
    m.format_rate /= dn;
    m.retrieval_rate /= dn;
    m.mean_turns /= dn;
    m.mean_searches /= dn;
  }
  if (adv_count > 0) {
    m.adv_mean = adv_sum / adv_count;
    m.adv_std = std::sqrt(std::max(0.0, adv_sq / adv_count - m.adv_mean * m.adv_mean));
  }

  const UpdateStats stats = policy_update(cfg_, policy_, reference_, last_batch_, last_adv_);
  m.loss = stats.loss;
  m.kl = stats.kl;
  if (uses_critic(cfg_.algo)) m.critic_loss = critic_update(cfg_, critic_, last_batch_, last_adv_);
  return m;
}

// ---------------------------------------------------------------------------
// Gradient check

namespace {

double relative_error(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric) {
  const double diff = (analytic - numeric).norm();
  const double scale = analytic.norm() + numeric.norm();
  return scale < 1e-12 ? diff : diff / scale;
}

bool near_clip_edge(const Eigen::VectorXd& theta, const Batch& batch, const std::vector<Eigen::VectorXd>& old_lp,
                    double eps) {
  const ToyPolicy p(theta);
  for (std::size_t i = 0; i < batch.episodes.size(); ++i) {
    const Eigen::VectorXd w = importance_ratios(policy_logprobs(p, batch.episodes[i]), old_lp[i]);
    for (const auto& d : batch.episodes[i].decisions) {
      const double wt = w(static_cast<Eigen::Index>(d.token));
      if (std::abs(wt - (1.0 - eps)) < 1e-3 || std::abs(wt - (1.0 + eps)) < 1e-3) return true;
    }
  }
  return false;
}

}  // namespace

GradCheckResult grad_check(const TrainConfig& cfg, const Batch& batch, const Advantages& adv, const ToyPolicy& policy,
                           const Critic& critic, int points, std::uint64_t seed) {
  GradCheckResult res;
  Rng rng(seed);
  const ToyPolicy reference = ToyPolicy::random_init(derive_seed(seed, 1), 0.5);
  std::vector<Eigen::VectorXd> old_lp;
  std::vector<Eigen::VectorXd> ref_lp;
  for (const auto& ep : batch.episodes) {
    old_lp.push_back(policy_logprobs(policy, ep));
    ref_lp.push_back(policy_logprobs(reference, ep));
  }
  auto loss_at = [&](const Eigen::VectorXd& th) {
    return policy_objective(th, batch, adv, old_lp, ref_lp, cfg.credit).loss;
  };

  std::vector<const Eigen::MatrixXd*> features;
  std::vector<Eigen::VectorXd> targets;
  for (std::size_t i = 0; i < batch.episodes.size(); ++i) {
    features.push_back(&batch.episodes[i].critic_features);
    const TokenRewardVector r = place_token_rewards(batch.episodes[i].trajectory, batch.rewards[i]);
    targets.push_back(discounted_returns(r.values, cfg.credit.gamma));
  }

  constexpr double kStep = 1e-5;
  const Eigen::Index n_theta = policy.theta().size();
  for (int p = 0; p < points; ++p) {
    Eigen::VectorXd theta(n_theta);
    int attempts = 0;
    do {
      for (Eigen::Index j = 0; j < n_theta; ++j) theta(j) = policy.theta()(j) + 0.3 * rng.normal();
      if (++attempts > 1000) throw std::runtime_error("grad_check: could not sample away from clip edges");
    } while (near_clip_edge(theta, batch, old_lp, cfg.credit.clip_eps));

    const Eigen::VectorXd analytic = policy_objective(theta, batch, adv, old_lp, ref_lp, cfg.credit).grad;
    Eigen::VectorXd numeric(n_theta);
    for (Eigen::Index j = 0; j < n_theta; ++j) {
      Eigen::VectorXd hi = theta;
      Eigen::VectorXd lo = theta;
      hi(j) += kStep;
      lo(j) -= kStep;
      numeric(j) = (loss_at(hi) - loss_at(lo)) / (2.0 * kStep);
    }
    res.policy_max_rel_err = std::max(res.policy_max_rel_err, relative_error(analytic, numeric));

    Critic c = critic;
    Eigen::VectorXd phi = c.flat();
    for (Eigen::Index j = 0; j < phi.size(); ++j) phi(j) += rng.normal();
    c.set_flat(phi);
    const Eigen::VectorXd critic_analytic = c.objective(features, targets).grad;
    Eigen::VectorXd critic_numeric(phi.size());
    for (Eigen::Index j = 0; j < phi.size(); ++j) {
      Critic hi = c;
      Critic lo = c;
      Eigen::VectorXd ph = phi;
      Eigen::VectorXd pl = phi;
      ph(j) += kStep;
      pl(j) -= kStep;
      hi.set_flat(ph);
      lo.set_flat(pl);
      critic_numeric(j) = (hi.objective(features, targets).loss - lo.objective(features, targets).loss) / (2.0 * kStep);
    }
    res.critic_max_rel_err = std::max(res.critic_max_rel_err, relative_error(critic_analytic, critic_numeric));
    ++res.points;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoints and config text

std::string config_to_text(const TrainConfig& cfg) {
  std::ostringstream os;
  os << "algo=" << algorithm_name(cfg.algo) << "\n"
     << "reward_source=" << reward_source_name(cfg.reward_source) << "\n"
     << "profile=" << profile_name(cfg.mode) << "\n"
     << "seed=" << cfg.seed << "\n"
     << "steps=" << cfg.steps << "\n"
     << "group_size=" << cfg.group_size << "\n"
     << "batch_size=" << cfg.batch_size << "\n"
     << "tree_turns=" << cfg.tree_turns << "\n"
     << "max_turns=" << cfg.max_turns << "\n"
     << "inner_epochs=" << cfg.inner_epochs << "\n"
     << "lr_policy=" << fmt(cfg.lr_policy) << "\n"
     << "lr_critic=" << fmt(cfg.lr_critic) << "\n"
     << "init_scale=" << fmt(cfg.init_scale) << "\n"
     << "lambda_s=" << fmt(cfg.lambda_s) << "\n"
     << "gamma=" << fmt(cfg.credit.gamma) << "\n"
     << "lambda=" << fmt(cfg.credit.lambda) << "\n"
     << "alpha=" << fmt(cfg.credit.alpha) << "\n"
     << "std_floor=" << fmt(cfg.credit.std_floor) << "\n"
     << "clip_eps=" << fmt(cfg.credit.clip_eps) << "\n"
     << "kl_beta=" << fmt(cfg.credit.kl_beta) << "\n";
  return os.str();
}

bool apply_config_value(TrainConfig& cfg, std::string_view key, std::string_view value) {
  const std::string k(trim(key));
  if (k == "algo") {
    cfg.algo = parse_algorithm(value);
  } else if (k == "reward_source") {
    cfg.reward_source = parse_reward_source(value);
  } else if (k == "profile") {
    cfg.mode = parse_profile(trim(value));
  } else if (k == "seed") {
    cfg.seed = static_cast<std::uint64_t>(parse_int(k, value));
  } else if (k == "steps") {
    cfg.steps = static_cast<int>(parse_int(k, value));
  } else if (k == "group_size") {
    cfg.group_size = static_cast<int>(parse_int(k, value));
  } else if (k == "batch_size") {
    cfg.batch_size = static_cast<int>(parse_int(k, value));
  } else if (k == "tree_turns") {
    cfg.tree_turns = static_cast<int>(parse_int(k, value));
  } else if (k == "max_turns") {
    cfg.max_turns = static_cast<int>(parse_int(k, value));
  } else if (k == "inner_epochs") {
    cfg.inner_epochs = static_cast<int>(parse_int(k, value));
  } else if (k == "lr_policy") {
    cfg.lr_policy = parse_double(k, value);
  } else if (k == "lr_critic") {
    cfg.lr_critic = parse_double(k, value);
  } else if (k == "init_scale") {
    cfg.init_scale = parse_double(k, value);
  } else if (k == "lambda_s") {
    cfg.lambda_s = parse_double(k, value);
  } else if (k == "gamma") {
    cfg.credit.gamma = parse_double(k, value);
  } else if (k == "lambda") {
    cfg.credit.lambda = parse_double(k, value);
  } else if (k == "alpha") {
    cfg.credit.alpha = parse_double(k, value);
  } else if (k == "std_floor") {
    cfg.credit.std_floor = parse_double(k, value);
  } else if (k == "clip_eps") {
    cfg.credit.clip_eps = parse_double(k, value);
  } else if (k == "kl_beta") {
    cfg.credit.kl_beta = parse_double(k, value);
  } else {
    return false;
  }
  return true;
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  out << kCheckpointHeader << "\n";
  out << "step " << ckpt.step << "\n";
  out << "fixture_checksum " << ckpt.fixture_checksum << "\n";
  std::istringstream cfg(config_to_text(ckpt.config));
  for (std::string line; std::getline(cfg, line);) out << "config " << line << "\n";
  auto vec = [&](const char* name, const Eigen::VectorXd& v) {
    out << name << " " << v.size();
    for (Eigen::Index i = 0; i < v.size(); ++i) out << " " << fmt(v(i));
    out << "\n";
  };
  vec("policy", ckpt.policy);
  vec("critic", ckpt.critic);
}

Checkpoint read_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("checkpoint: empty file");
  if (trim(line) != kCheckpointHeader) throw std::runtime_error("checkpoint: unsupported header '" + line + "'");
  Checkpoint ckpt;
  bool have_policy = false;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "step") {
      ls >> ckpt.step;
    } else if (key == "fixture_checksum") {
      ls >> ckpt.fixture_checksum;
    } else if (key == "config") {
      std::string kv;
      std::getline(ls, kv);
      const auto eq = kv.find('=');
      if (eq == std::string::npos || !apply_config_value(ckpt.config, kv.substr(0, eq), kv.substr(eq + 1))) {
        throw std::runtime_error("checkpoint: bad config line '" + line + "'");
      }
    } else if (key == "policy" || key == "critic") {
      Eigen::Index n = 0;
      ls >> n;
      Eigen::VectorXd v(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        std::string tok;
        ls >> tok;
        v(i) = parse_double(key, tok);
      }
      if (!ls) throw std::runtime_error("checkpoint: truncated " + key + " vector");
      (key == "policy" ? ckpt.policy : ckpt.critic) = std::move(v);
      have_policy = have_policy || key == "policy";
    } else {
      throw std::runtime_error("checkpoint: unknown record '" + key + "'");
    }
  }
  if (!have_policy) throw std::runtime_error("checkpoint: missing policy vector");
  if (ckpt.policy.size() != ToyPolicy::param_count()) throw std::runtime_error("checkpoint: policy size mismatch");
  return ckpt;
}

}  // namespace turncredit
