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

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "turncredit/rewards.hpp"
#include "turncredit/transcript.hpp"

namespace turncredit {

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

struct CreditConfig {
  double gamma = 1.0;
  double lambda = 1.0;
  double alpha = 1.0;
  double std_floor = 1e-6;
  double clip_eps = 0.2;
  double kl_beta = 0.001;
};

enum class Estimator { kGrpo, kMtGrpo, kGae };

struct TokenRewardVector {
  Eigen::VectorXd values;
};

struct AdvantageVector {
  Eigen::VectorXd values;
  Estimator estimator = Estimator::kGrpo;
};

/// Group-relative advantage: (r_i - mean) / std with the population standard
/// deviation. Groups whose std falls below `std_floor` map to all zeros.
template <typename Derived>
Vec<typename Derived::Scalar> group_normalize(const Eigen::MatrixBase<Derived>& rewards,
                                              typename Derived::Scalar std_floor = 1e-6) {
  using Scalar = typename Derived::Scalar;
  if (rewards.size() < 2) {
    throw std::invalid_argument("group_normalize: group size must be >= 2, got " + std::to_string(rewards.size()));
  }
  const Scalar mean = rewards.mean();
  const Vec<Scalar> centered = (rewards.array() - mean).matrix();
  const Scalar stddev = std::sqrt(centered.squaredNorm() / static_cast<Scalar>(rewards.size()));
  if (!(stddev >= std_floor)) return Vec<Scalar>::Zero(rewards.size());
  return centered / stddev;
}

/// Two-turn MT-GRPO: turn 1 gets A^I + alpha * A^O, turn 2 gets A^O.
template <typename DerivedI, typename DerivedO>
std::pair<Vec<typename DerivedI::Scalar>, Vec<typename DerivedI::Scalar>> mt_grpo_two_turn(
    const Eigen::MatrixBase<DerivedI>& intermediate_adv, const Eigen::MatrixBase<DerivedO>& outcome_adv,
    typename DerivedI::Scalar alpha) {
  if (intermediate_adv.size() != outcome_adv.size()) {
    throw std::invalid_argument("mt_grpo_two_turn: length mismatch");
  }
  return {intermediate_adv + alpha * outcome_adv, outcome_adv};
}

/// K-turn MT-GRPO. `intermediate_adv[k]` holds A^I for turn k+1 (k < K-1).
/// Returns per-turn advantages A_(1) .. A_(K), where
///   A_(k) = sum_{l=k}^{K-1} alpha^{l-k} A^I_(l) + alpha^{K-k} A^O,
/// evaluated as the backward recursion A_(k) = A^I_(k) + alpha * A_(k+1).
template <typename Scalar>
std::vector<Vec<Scalar>> mt_grpo_general(const std::vector<Vec<Scalar>>& intermediate_adv,
                                         const Vec<Scalar>& outcome_adv, Scalar alpha) {
  const std::size_t k_turns = intermediate_adv.size() + 1;
  if (k_turns < 2) throw std::invalid_argument("mt_grpo_general: need K >= 2 turns");
  for (const auto& a : intermediate_adv) {
    if (a.size() != outcome_adv.size()) throw std::invalid_argument("mt_grpo_general: length mismatch");
  }
  std::vector<Vec<Scalar>> out(k_turns);
  out[k_turns - 1] = outcome_adv;
  for (std::size_t k = k_turns - 1; k-- > 0;) out[k] = intermediate_adv[k] + alpha * out[k + 1];
  return out;
}

/// sum_{k=1}^{K} gamma^k R_k.
template <typename Derived>
typename Derived::Scalar merge_trajectory_reward(const Eigen::MatrixBase<Derived>& turn_rewards,
                                                 typename Derived::Scalar gamma) {
  using Scalar = typename Derived::Scalar;
  Scalar total = 0;
  Scalar discount = gamma;
  for (Eigen::Index k = 0; k < turn_rewards.size(); ++k) {
    total += discount * turn_rewards(k);
    discount *= gamma;
  }
  return total;
}

inline double merge_trajectory_reward(const std::vector<double>& turn_rewards, double gamma) {
  return merge_trajectory_reward(Eigen::Map<const Eigen::VectorXd>(turn_rewards.data(),
                                                                    static_cast<Eigen::Index>(turn_rewards.size())),
                                 gamma);
}

/// Generalized advantage estimation by backward recursion; the value beyond
/// the last token is zero.
template <typename DerivedR, typename DerivedV>
Vec<typename DerivedR::Scalar> gae(const Eigen::MatrixBase<DerivedR>& rewards, const Eigen::MatrixBase<DerivedV>& values,
                                   typename DerivedR::Scalar gamma, typename DerivedR::Scalar lambda) {
  using Scalar = typename DerivedR::Scalar;
  if (rewards.size() != values.size()) throw std::invalid_argument("gae: rewards/values length mismatch");
  const Eigen::Index n = rewards.size();
  Vec<Scalar> adv(n);
  Scalar running = 0;
  Scalar next_value = 0;
  for (Eigen::Index t = n; t-- > 0;) {
    const Scalar delta = rewards(t) + gamma * next_value - values(t);
    running = delta + gamma * lambda * running;
    adv(t) = running;
    next_value = values(t);
  }
  return adv;
}

/// Returns-to-go sum_{j>=t} gamma^{j-t} r_j, the critic's regression target.
template <typename Derived>
Vec<typename Derived::Scalar> discounted_returns(const Eigen::MatrixBase<Derived>& rewards,
                                                 typename Derived::Scalar gamma) {
  using Scalar = typename Derived::Scalar;
  Vec<Scalar> out(rewards.size());
  Scalar running = 0;
  for (Eigen::Index t = rewards.size(); t-- > 0;) {
    running = rewards(t) + gamma * running;
    out(t) = running;
  }
  return out;
}

// R^I_k on the last token of intermediate turn k, R^O on the final token.
TokenRewardVector place_token_rewards(const Trajectory& traj, const RewardBreakdown& breakdown);
TokenRewardVector place_token_rewards(const Trajectory& traj, const std::vector<double>& turn_rewards);

// A single trajectory-level reward on the final token.
TokenRewardVector terminal_token_reward(const Trajectory& traj, double reward);

AdvantageVector broadcast_turn_advantages(const Trajectory& traj, const Eigen::Ref<const Eigen::VectorXd>& per_turn,
                                          Estimator estimator = Estimator::kMtGrpo);

AdvantageVector broadcast_trajectory_advantage(const Trajectory& traj, double advantage);

}  // namespace turncredit
