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

// Linear-softmax policy, linear critic, and the six training variants.

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "turncredit/credit.hpp"
#include "turncredit/env.hpp"
#include "turncredit/rewards.hpp"

namespace turncredit {

// One weight block per decision kind, row-major over (option, feature).
class ToyPolicy : public Policy {
 public:
  ToyPolicy() : theta_(Eigen::VectorXd::Zero(param_count())) {}
  explicit ToyPolicy(Eigen::VectorXd theta);

  static ToyPolicy random_init(std::uint64_t seed, double scale);
  static int param_count();
  static int block_offset(DecisionKind kind);

  const Eigen::VectorXd& theta() const { return theta_; }
  Eigen::VectorXd& theta() { return theta_; }
  void set_greedy(bool greedy) { greedy_ = greedy; }
  bool greedy() const { return greedy_; }

  // Unavailable options get probability exactly zero.
  Eigen::VectorXd probabilities(const DecisionPoint& point) const;
  double log_prob(const DecisionPoint& point, int choice) const;
  // grad += scale * d log pi(choice) / d theta.
  void accumulate_grad_log_prob(const DecisionPoint& point, int choice, double scale, Eigen::VectorXd& grad) const;

  int choose(const DecisionPoint& point, const Observation& obs, Rng& rng) const override;

 private:
  Eigen::VectorXd theta_;
  bool greedy_ = false;
};

// log pi for every token; tokens expanded deterministically from a decision
// carry log 1 = 0.
Eigen::VectorXd policy_logprobs(const ToyPolicy& policy, const Episode& episode);
// Decodes a raw trajectory first; throws std::invalid_argument for actions
// outside the template space.
Eigen::VectorXd policy_logprobs(const ToyPolicy& policy, const SearchEnvironment& env, const EnvTask& task,
                                const Trajectory& traj);

class Critic {
 public:
  Critic() : weights_(Eigen::VectorXd::Zero(kCriticDims)) {}
  Critic(Eigen::VectorXd weights, double bias);

  const Eigen::VectorXd& weights() const { return weights_; }
  double bias() const { return bias_; }
  Eigen::VectorXd& weights() { return weights_; }
  double& bias() { return bias_; }

  Eigen::VectorXd values(const Eigen::MatrixXd& features) const;
  Eigen::VectorXd values(const Episode& episode) const { return values(episode.critic_features); }

  // 0.5 * mean over sequences of the per-token mean squared error; the
  // gradient stacks (d/dw, d/db).
  struct Objective {
    double loss = 0.0;
    Eigen::VectorXd grad;
  };
  Objective objective(const std::vector<const Eigen::MatrixXd*>& features,
                      const std::vector<Eigen::VectorXd>& targets) const;
  Eigen::VectorXd flat() const;
  void set_flat(const Eigen::VectorXd& params);

 private:
  Eigen::VectorXd weights_;
  double bias_ = 0.0;
};

enum class Algorithm { kGrpoOr, kGrpoMr, kMtGrpo, kPpoOr, kPpoMr, kMtPpo };
enum class RewardSource { kVerifiable, kJudge };

std::string_view algorithm_name(Algorithm algo);
Algorithm parse_algorithm(std::string_view name);
std::string_view reward_source_name(RewardSource source);
RewardSource parse_reward_source(std::string_view name);
bool uses_critic(Algorithm algo);

struct TrainConfig {
  int steps = 300;
  int group_size = 4;
  int batch_size = 8;
  int tree_turns = 3;  // K for tree rollouts
  double lr_policy = 2.0;
  double lr_critic = 1e-1;
  int inner_epochs = 2;
  double init_scale = 0.01;
  CreditConfig credit;
  Algorithm algo = Algorithm::kMtPpo;
  RewardSource reward_source = RewardSource::kVerifiable;
  double lambda_s = kDefaultLambdaS;
  ProfileMode mode = ProfileMode::kSearchAgent;
  int max_turns = 4;
  std::uint64_t seed = 1;

  // Throws std::invalid_argument on an inconsistent configuration.
  void validate() const;
};

using RewardFn = std::function<RewardBreakdown(const Episode&)>;

// Verifiable rewards with the configured lambda_s and the task's gold set.
RewardFn verifiable_rewards(double lambda_s);

// Rollouts of one training step. Chain groups occupy consecutive episodes;
// trees keep their branch structure with leaves stored in `episodes`.
struct Batch {
  struct Group {
    std::size_t first = 0;
    std::size_t size = 0;
    int tree = -1;  // index into trees, or -1 for a chain group
  };
  std::vector<Episode> episodes;
  std::vector<RewardBreakdown> rewards;
  std::vector<Group> groups;
  std::vector<RolloutTree> trees;  // leaves moved into `episodes`
  bool tree_shaped = false;
};

Batch collect_batch(const TrainConfig& cfg, const SearchEnvironment& env, const Policy& policy,
                    const std::vector<const EnvTask*>& tasks, std::uint64_t seed, const RewardFn& reward_fn);

struct Advantages {
  std::vector<AdvantageVector> per_episode;
  std::vector<TokenRewardVector> token_rewards;  // critic targets are built from these (PPO variants)
};

// Throws std::invalid_argument when the batch shape does not fit the
// algorithm (MT-GRPO needs trees, the rest need chains).
Advantages compute_advantages(const TrainConfig& cfg, const Batch& batch, const Critic& critic);

// Group-relative advantages from caller-supplied trajectory rewards.
Advantages grpo_advantages(const TrainConfig& cfg, const Batch& batch, const std::vector<double>& trajectory_rewards);

struct PolicyObjective {
  double loss = 0.0;
  double surrogate = 0.0;
  double kl = 0.0;
  Eigen::VectorXd grad;
};

// Mean over episodes of the per-sequence surrogate + KL at parameters `theta`.
PolicyObjective policy_objective(const Eigen::VectorXd& theta, const Batch& batch, const Advantages& adv,
                                 const std::vector<Eigen::VectorXd>& old_lp, const std::vector<Eigen::VectorXd>& ref_lp,
                                 const CreditConfig& credit);

struct UpdateStats {
  double loss = 0.0;
  double kl = 0.0;
  double critic_loss = 0.0;
};

// Inner-epoch gradient descent on the policy with pi_old = `policy` on entry.
UpdateStats policy_update(const TrainConfig& cfg, ToyPolicy& policy, const ToyPolicy& reference, const Batch& batch,
                          const Advantages& adv);

// Gradient descent on the critic toward returns-to-go of the token rewards.
double critic_update(const TrainConfig& cfg, Critic& critic, const Batch& batch, const Advantages& adv);

struct StepMetrics {
  int step = 0;
  double outcome_reward = 0.0;
  double answer_rate = 0.0;
  double format_rate = 0.0;
  double retrieval_rate = 0.0;
  double mean_turns = 0.0;
  double mean_searches = 0.0;
  double loss = 0.0;
  double kl = 0.0;
  double critic_loss = 0.0;
  double adv_mean = 0.0;
  double adv_std = 0.0;
  double adv_abs_max = 0.0;
};

struct EvalSummary {
  int episodes = 0;
  double outcome_reward = 0.0;
  double answer_rate = 0.0;
  double format_rate = 0.0;
  double retrieval_rate = 0.0;
  double mean_turns = 0.0;
  double mean_searches = 0.0;
};

// Greedy decoding with verifiable outcome rewards.
EvalSummary evaluate(const Policy& policy, const SearchEnvironment& env, const std::vector<const EnvTask*>& tasks,
                     double lambda_s, std::uint64_t seed);

class Trainer {
 public:
  Trainer(TrainConfig cfg, const Corpus& corpus, std::vector<const EnvTask*> train_tasks, RewardFn reward_fn = {});

  StepMetrics step(int step_index);

  const TrainConfig& config() const { return cfg_; }
  const SearchEnvironment& env() const { return env_; }
  const ToyPolicy& policy() const { return policy_; }
  ToyPolicy& policy() { return policy_; }
  const ToyPolicy& reference() const { return reference_; }
  const Critic& critic() const { return critic_; }
  Critic& critic() { return critic_; }
  // Batch and advantages of the most recent step.
  const Batch& last_batch() const { return last_batch_; }
  const Advantages& last_advantages() const { return last_adv_; }

 private:
  TrainConfig cfg_;
  SearchEnvironment env_;
  std::vector<const EnvTask*> train_tasks_;
  RewardFn reward_fn_;
  ToyPolicy policy_;
  ToyPolicy reference_;
  Critic critic_;
  Batch last_batch_;
  Advantages last_adv_;
};

// Maximum relative error between analytic and central-difference gradients.
struct GradCheckResult {
  int points = 0;
  double policy_max_rel_err = 0.0;
  double critic_max_rel_err = 0.0;
};

// Evaluates `points` random parameter points around the trainer's policy on
// its last batch. Points with any ratio within 1e-3 of a clip edge are
// resampled.
GradCheckResult grad_check(const TrainConfig& cfg, const Batch& batch, const Advantages& adv, const ToyPolicy& policy,
                           const Critic& critic, int points, std::uint64_t seed);

// Versioned text checkpoint.
inline constexpr std::string_view kCheckpointHeader = "turncredit-checkpoint v1";

struct Checkpoint {
  TrainConfig config;
  int step = 0;
  Eigen::VectorXd policy;
  Eigen::VectorXd critic;
  std::string fixture_checksum;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
// Throws std::runtime_error on a missing or unknown version header.
Checkpoint read_checkpoint(std::istream& in);

std::string config_to_text(const TrainConfig& cfg);
// Applies one key=value setting; returns false for an unknown key.
bool apply_config_value(TrainConfig& cfg, std::string_view key, std::string_view value);

}  // namespace turncredit
