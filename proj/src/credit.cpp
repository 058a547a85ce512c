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

#include "turncredit/credit.hpp"

namespace turncredit {

TokenRewardVector place_token_rewards(const Trajectory& traj, const std::vector<double>& turn_rewards) {
  if (traj.turns.size() != turn_rewards.size()) {
    throw std::invalid_argument("place_token_rewards: " + std::to_string(turn_rewards.size()) +
                                " turn rewards for " + std::to_string(traj.turns.size()) + " turns");
  }
  TokenRewardVector out{Eigen::VectorXd::Zero(static_cast<Eigen::Index>(traj.token_count()))};
  Eigen::Index end = 0;
  for (std::size_t k = 0; k < traj.turns.size(); ++k) {
    end += static_cast<Eigen::Index>(traj.turns[k].token_count());
    out.values(end - 1) += turn_rewards[k];
  }
  return out;
}

TokenRewardVector place_token_rewards(const Trajectory& traj, const RewardBreakdown& breakdown) {
  return place_token_rewards(traj, breakdown.turn_rewards());
}

TokenRewardVector terminal_token_reward(const Trajectory& traj, double reward) {
  TokenRewardVector out{Eigen::VectorXd::Zero(static_cast<Eigen::Index>(traj.token_count()))};
  if (out.values.size() > 0) out.values(out.values.size() - 1) = reward;
  return out;
}

AdvantageVector broadcast_turn_advantages(const Trajectory& traj, const Eigen::Ref<const Eigen::VectorXd>& per_turn,
                                          Estimator estimator) {
  if (static_cast<std::size_t>(per_turn.size()) != traj.turns.size()) {
    throw std::invalid_argument("broadcast_turn_advantages: " + std::to_string(per_turn.size()) +
                                " advantages for " + std::to_string(traj.turns.size()) + " turns");
  }
  AdvantageVector out{Eigen::VectorXd(static_cast<Eigen::Index>(traj.token_count())), estimator};
  Eigen::Index pos = 0;
  for (std::size_t k = 0; k < traj.turns.size(); ++k) {
    const auto n = static_cast<Eigen::Index>(traj.turns[k].token_count());
    out.values.segment(pos, n).setConstant(per_turn(static_cast<Eigen::Index>(k)));
    pos += n;
  }
  return out;
}

AdvantageVector broadcast_trajectory_advantage(const Trajectory& traj, double advantage) {
  return {Eigen::VectorXd::Constant(static_cast<Eigen::Index>(traj.token_count()), advantage), Estimator::kGrpo};
}

}  // namespace turncredit
