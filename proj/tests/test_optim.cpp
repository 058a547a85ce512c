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

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "turncredit/losses.hpp"
#include "turncredit/optim.hpp"

namespace turncredit {
namespace {

const Fixture& fixture() {
  static const Fixture fx = build_corpus(7, 120, 40);
  return fx;
}

std::vector<const EnvTask*> task_ptrs(int n) {
  std::vector<const EnvTask*> out;
  for (int i = 0; i < n; ++i) out.push_back(&fixture().tasks[static_cast<std::size_t>(i)]);
  return out;
}

DecisionPoint random_point(std::mt19937_64& gen, DecisionKind kind) {
  std::normal_distribution<double> n(0, 1);
  DecisionPoint p;
  p.kind = kind;
  p.state = Eigen::VectorXd(kStateDims[static_cast<int>(kind)]);
  for (Eigen::Index i = 0; i < p.state.size(); ++i) p.state(i) = n(gen);
  for (int i = 0; i < p.n_options(); ++i) p.available[i] = true;
  return p;
}

// Softmax over the policy block, computed element by element.
double enumerated_log_prob(const Eigen::VectorXd& theta, const DecisionPoint& p, int choice) {
  const int k = static_cast<int>(p.kind);
  const int off = ToyPolicy::block_offset(p.kind);
  const int dims = kStateDims[k];
  std::vector<double> logits;
  for (int a = 0; a < p.n_options(); ++a) {
    double z = 0;
    for (int j = 0; j < dims; ++j) z += theta(off + a * dims + j) * p.state(j);
    logits.push_back(z);
  }
  double denom = 0;
  for (int a = 0; a < p.n_options(); ++a) {
    if (p.available[a]) denom += std::exp(logits[a]);
  }
  return logits[choice] - std::log(denom);
}

TEST(ToyPolicy, ParamLayout) {
  int total = 0;
  for (int k = 0; k < kNumDecisionKinds; ++k) {
    EXPECT_EQ(ToyPolicy::block_offset(static_cast<DecisionKind>(k)), total);
    total += kNumOptions[k] * kStateDims[k];
  }
  EXPECT_EQ(ToyPolicy::param_count(), total);
  EXPECT_THROW(ToyPolicy(Eigen::VectorXd::Zero(3)), std::invalid_argument);
}

TEST(ToyPolicy, UniformAndDeterministicChoices) {
  const ToyPolicy p;
  std::mt19937_64 gen(1);
  DecisionPoint q = random_point(gen, DecisionKind::kQuery);
  EXPECT_NEAR(p.log_prob(q, 2), -std::log(4.0), 1e-15);
  q.available = {false, true, false, false};
  EXPECT_EQ(p.log_prob(q, 1), 0.0);
  const Eigen::VectorXd probs = p.probabilities(q);
  EXPECT_EQ(probs(0), 0.0);
  EXPECT_EQ(probs(1), 1.0);
}

TEST(ToyPolicy, LogProbMatchesEnumeration) {
  const ToyPolicy p = ToyPolicy::random_init(3, 0.7);
  std::mt19937_64 gen(2);
  for (int trial = 0; trial < 40; ++trial) {
    const auto kind = static_cast<DecisionKind>(trial % kNumDecisionKinds);
    DecisionPoint pt = random_point(gen, kind);
    if (pt.n_options() > 2) pt.available[1] = false;
    const Eigen::VectorXd probs = p.probabilities(pt);
    EXPECT_NEAR(probs.sum(), 1.0, 1e-12);
    for (int a = 0; a < pt.n_options(); ++a) {
      if (!pt.available[a]) continue;
      EXPECT_NEAR(p.log_prob(pt, a), enumerated_log_prob(p.theta(), pt, a), 1e-12);
    }
  }
}

TEST(ToyPolicy, GradLogProbMatchesFiniteDifference) {
  const ToyPolicy p = ToyPolicy::random_init(4, 0.5);
  std::mt19937_64 gen(5);
  for (int k = 0; k < kNumDecisionKinds; ++k) {
    const DecisionPoint pt = random_point(gen, static_cast<DecisionKind>(k));
    Eigen::VectorXd g = Eigen::VectorXd::Zero(ToyPolicy::param_count());
    p.accumulate_grad_log_prob(pt, 1, 1.0, g);
    const double h = 1e-6;
    for (int i = 0; i < ToyPolicy::param_count(); ++i) {
      Eigen::VectorXd tp = p.theta(), tm = p.theta();
      tp(i) += h;
      tm(i) -= h;
      const double fd = (enumerated_log_prob(tp, pt, 1) - enumerated_log_prob(tm, pt, 1)) / (2 * h);
      EXPECT_NEAR(g(i), fd, 1e-8);
    }
  }
}

TEST(ToyPolicy, EpisodeLogProbsAndReplay) {
  const SearchEnvironment env(fixture().corpus, EnvConfig{});
  const ToyPolicy p = ToyPolicy::random_init(6, 1.0);
  const EnvTask& task = fixture().tasks[5];
  const Episode ep = run_episode(env, p, task, 3);
  const Eigen::VectorXd lp = policy_logprobs(p, ep);
  Eigen::VectorXd expected = Eigen::VectorXd::Zero(lp.size());
  for (const auto& d : ep.decisions) {
    expected(static_cast<Eigen::Index>(d.token)) += enumerated_log_prob(p.theta(), d.point, d.choice);
  }
  EXPECT_LT((lp - expected).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_TRUE(lp.allFinite());
  EXPECT_LT((policy_logprobs(p, env, task, ep.trajectory) - lp).cwiseAbs().maxCoeff(), 1e-12);
  const auto mask = loss_mask(ep.trajectory);
  for (std::size_t t = 0; t < mask.size(); ++t) {
    if (!mask[t]) { EXPECT_EQ(lp(static_cast<Eigen::Index>(t)), 0.0); }
  }
}

TEST(Losses, ImportanceRatios) {
  Eigen::VectorXd a(3), b(3);
  a << 0.1, -0.5, 2.0;
  b = a;
  EXPECT_TRUE(importance_ratios(a, b).isOnes(0));
  b(1) -= std::log(2.0);
  EXPECT_NEAR(importance_ratios(a, b)(1), 2.0, 1e-12);
  std::mt19937_64 gen(1);
  std::normal_distribution<double> n(0, 1);
  Eigen::VectorXd x(20), y(20);
  for (int i = 0; i < 20; ++i) {
    x(i) = n(gen);
    y(i) = n(gen);
  }
  const Eigen::VectorXd w = importance_ratios(x, y);
  for (int i = 0; i < 20; ++i) EXPECT_NEAR(w(i), std::exp(x(i) - y(i)), 1e-12);
  EXPECT_THROW(importance_ratios(x, a), std::invalid_argument);
}

TEST(Losses, ClippedSurrogateExamples) {
  Eigen::VectorXd w = Eigen::VectorXd::Ones(3), adv(3), mask = Eigen::VectorXd::Ones(3);
  adv << 0.5, -1.0, 2.0;
  EXPECT_NEAR(clipped_surrogate(w, adv, mask, 0.2).loss, -adv.mean(), 1e-15);
  const auto zero = clipped_surrogate(w, Eigen::VectorXd::Zero(3), mask, 0.2);
  EXPECT_EQ(zero.loss, 0.0);
  EXPECT_TRUE(zero.grad.isZero(0));
  Eigen::VectorXd w1(1), a1(1), m1(1);
  w1 << 1.5;
  a1 << 1.0;
  m1 << 1.0;
  const auto c = clipped_surrogate(w1, a1, m1, 0.2);
  EXPECT_DOUBLE_EQ(c.loss, -1.2);
  EXPECT_EQ(c.grad(0), 0.0);
  EXPECT_THROW(clipped_surrogate(w, adv, Eigen::VectorXd::Zero(3), 0.2), std::invalid_argument);
}

TEST(Losses, MaskedTokensHaveZeroGradient) {
  Eigen::VectorXd w(4), adv(4), mask(4);
  w << 0.9, 1.1, 1.05, 0.7;
  adv << 1.0, -2.0, 0.5, 3.0;
  mask << 1, 0, 1, 0;
  const auto s = clipped_surrogate(w, adv, mask, 0.2);
  EXPECT_EQ(s.grad(1), 0.0);
  EXPECT_EQ(s.grad(3), 0.0);
  const auto k = kl_penalty(w, adv, 0.1, mask);
  EXPECT_EQ(k.grad(1), 0.0);
  EXPECT_EQ(k.grad(3), 0.0);
}

TEST(Losses, KlPenaltyExamples) {
  Eigen::VectorXd lp(3), mask = Eigen::VectorXd::Ones(3);
  lp << -0.3, -1.2, -0.01;
  EXPECT_EQ(kl_penalty(lp, lp, 0.5, mask).loss, 0.0);
  EXPECT_EQ(kl_penalty(lp, Eigen::VectorXd(lp.array() - 3.0), 0.0, mask).loss, 0.0);
  Eigen::VectorXd one(1), ref(1), m(1);
  one << -1.0;
  ref << -1.0 + std::log(2.0);
  m << 1.0;
  EXPECT_NEAR(kl_penalty(one, ref, 0.1, m).loss, 0.1 * (2.0 - std::log(2.0) - 1.0), 1e-15);
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  std::mt19937_64 gen(8);
  std::uniform_real_distribution<double> u(0.5, 1.5), a(-2, 2);
  const int n = 12;
  Eigen::VectorXd w(n), adv(n), mask(n), ref(n);
  for (int i = 0; i < n; ++i) {
    do {
      w(i) = u(gen);
    } while (std::abs(w(i) - 0.8) < 1e-3 || std::abs(w(i) - 1.2) < 1e-3);
    adv(i) = a(gen);
    mask(i) = i % 4 == 3 ? 0.0 : 1.0;
    ref(i) = a(gen);
  }
  const auto s = clipped_surrogate(w, adv, mask, 0.2);
  const auto k = kl_penalty(w, ref, 0.3, mask);
  const double h = 1e-7;
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd p = w, m = w;
    p(i) += h;
    m(i) -= h;
    EXPECT_NEAR(s.grad(i), (clipped_surrogate(p, adv, mask, 0.2).loss - clipped_surrogate(m, adv, mask, 0.2).loss) / (2 * h), 1e-7);
    EXPECT_NEAR(k.grad(i), (kl_penalty(p, ref, 0.3, mask).loss - kl_penalty(m, ref, 0.3, mask).loss) / (2 * h), 1e-7);
  }
}

TEST(Critic, Values) {
  Eigen::MatrixXd f = Eigen::MatrixXd::Random(5, kCriticDims);
  EXPECT_TRUE(Critic().values(f).isZero(0));
  const Critic c(Eigen::VectorXd::LinSpaced(kCriticDims, -1, 1), 0.25);
  const Eigen::VectorXd v0 = c.values(Eigen::MatrixXd::Zero(3, kCriticDims));
  EXPECT_TRUE((v0.array() == 0.25).all());
  const Eigen::VectorXd v = c.values(f);
  for (int r = 0; r < 5; ++r) {
    double dot = 0.25;
    for (int j = 0; j < kCriticDims; ++j) dot += f(r, j) * c.weights()(j);
    EXPECT_NEAR(v(r), dot, 1e-12);
  }
  EXPECT_THROW(Critic(Eigen::VectorXd::Zero(2), 0.0), std::invalid_argument);
}

TEST(Critic, ObjectiveGradient) {
  std::mt19937_64 gen(9);
  std::normal_distribution<double> n(0, 1);
  std::vector<Eigen::MatrixXd> feats = {Eigen::MatrixXd::Random(4, kCriticDims), Eigen::MatrixXd::Random(7, kCriticDims)};
  std::vector<Eigen::VectorXd> targets = {Eigen::VectorXd::Random(4), Eigen::VectorXd::Random(7)};
  std::vector<const Eigen::MatrixXd*> ptrs = {&feats[0], &feats[1]};
  Critic c;
  Eigen::VectorXd phi(kCriticDims + 1);
  for (Eigen::Index i = 0; i < phi.size(); ++i) phi(i) = n(gen);
  c.set_flat(phi);
  EXPECT_EQ(c.flat(), phi);
  const auto obj = c.objective(ptrs, targets);
  // Direct loss: 0.5 * mean over sequences of per-token mean squared error.
  double direct = 0;
  for (int s = 0; s < 2; ++s) direct += 0.5 * (c.values(feats[s]) - targets[s]).squaredNorm() / static_cast<double>(targets[s].size());
  EXPECT_NEAR(obj.loss, direct / 2, 1e-12);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < phi.size(); ++i) {
    Critic cp, cm;
    Eigen::VectorXd p = phi, m = phi;
    p(i) += h;
    m(i) -= h;
    cp.set_flat(p);
    cm.set_flat(m);
    EXPECT_NEAR(obj.grad(i), (cp.objective(ptrs, targets).loss - cm.objective(ptrs, targets).loss) / (2 * h), 1e-8);
  }
}

TEST(Algorithms, NamesRoundTrip) {
  for (auto a : {Algorithm::kGrpoOr, Algorithm::kGrpoMr, Algorithm::kMtGrpo, Algorithm::kPpoOr, Algorithm::kPpoMr,
                 Algorithm::kMtPpo}) {
    EXPECT_EQ(parse_algorithm(algorithm_name(a)), a);
  }
  EXPECT_EQ(parse_algorithm("MT_PPO"), Algorithm::kMtPpo);
  EXPECT_THROW(parse_algorithm("reinforce"), std::invalid_argument);
  EXPECT_TRUE(uses_critic(Algorithm::kPpoMr));
  EXPECT_FALSE(uses_critic(Algorithm::kMtGrpo));
  EXPECT_EQ(parse_reward_source("judge"), RewardSource::kJudge);
}

TEST(TrainConfig, Validation) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.algo = Algorithm::kGrpoOr;
  cfg.group_size = 1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.algo = Algorithm::kMtGrpo;
  cfg.tree_turns = 5;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.mode = ProfileMode::kTwoTurnTool;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg.max_turns = 2;
  EXPECT_NO_THROW(cfg.validate());
  cfg = TrainConfig{};
  cfg.steps = -1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(TrainConfig, TextRoundTrip) {
  TrainConfig cfg;
  cfg.algo = Algorithm::kGrpoMr;
  cfg.lambda_s = 0.0;
  cfg.credit.alpha = 0.5;
  cfg.seed = 42;
  TrainConfig back;
  std::istringstream in(config_to_text(cfg));
  for (std::string line; std::getline(in, line);) {
    const auto eq = line.find('=');
    ASSERT_NE(eq, std::string::npos);
    ASSERT_TRUE(apply_config_value(back, line.substr(0, eq), line.substr(eq + 1)));
  }
  EXPECT_EQ(config_to_text(back), config_to_text(cfg));
  EXPECT_FALSE(apply_config_value(back, "no_such_key", "1"));
}

class BatchTest : public ::testing::Test {
 protected:
  SearchEnvironment env{fixture().corpus, EnvConfig{}};
  ToyPolicy policy = ToyPolicy::random_init(11, 1.0);

  Batch batch(const TrainConfig& cfg, std::uint64_t seed = 5) {
    return collect_batch(cfg, env, policy, task_ptrs(cfg.batch_size), seed, verifiable_rewards(cfg.lambda_s));
  }
};

TEST_F(BatchTest, ShapeMismatchThrows) {
  TrainConfig chain;
  chain.algo = Algorithm::kGrpoOr;
  chain.batch_size = 2;
  const Batch b = batch(chain);
  EXPECT_FALSE(b.tree_shaped);
  TrainConfig mt = chain;
  mt.algo = Algorithm::kMtGrpo;
  EXPECT_THROW(compute_advantages(mt, b, Critic{}), std::invalid_argument);
  const Batch tb = batch(mt);
  EXPECT_TRUE(tb.tree_shaped);
  EXPECT_THROW(compute_advantages(chain, tb, Critic{}), std::invalid_argument);
}

TEST_F(BatchTest, ZeroAdvantageLeavesParametersUnchanged) {
  TrainConfig cfg;
  cfg.algo = Algorithm::kGrpoOr;
  cfg.batch_size = 3;
  const Batch b = batch(cfg);
  Advantages adv = grpo_advantages(cfg, b, std::vector<double>(b.episodes.size(), 0.7));
  for (const auto& a : adv.per_episode) EXPECT_TRUE(a.values.isZero(0));
  ToyPolicy p = policy;
  policy_update(cfg, p, policy, b, adv);
  EXPECT_EQ(p.theta(), policy.theta());
}

TEST_F(BatchTest, OnPolicyGradientIsWeightedScore) {
  TrainConfig cfg;
  cfg.algo = Algorithm::kMtPpo;
  cfg.batch_size = 3;
  cfg.credit.kl_beta = 0.0;
  const Batch b = batch(cfg);
  Critic critic(Eigen::VectorXd::Constant(kCriticDims, 0.05), 0.1);
  const Advantages adv = compute_advantages(cfg, b, critic);
  std::vector<Eigen::VectorXd> lp;
  for (const auto& ep : b.episodes) lp.push_back(policy_logprobs(policy, ep));
  const PolicyObjective obj = policy_objective(policy.theta(), b, adv, lp, lp, cfg.credit);
  // -mean_i (1/|y_i|) sum_t m_t A_t grad log pi_t, assembled per decision.
  Eigen::VectorXd expected = Eigen::VectorXd::Zero(ToyPolicy::param_count());
  double surrogate = 0;
  for (std::size_t i = 0; i < b.episodes.size(); ++i) {
    const Episode& ep = b.episodes[i];
    const auto mask = loss_mask(ep.trajectory);
    double count = 0, sum = 0;
    for (std::size_t t = 0; t < mask.size(); ++t) {
      if (mask[t]) {
        count += 1;
        sum += adv.per_episode[i].values(static_cast<Eigen::Index>(t));
      }
    }
    surrogate -= sum / count;
    for (const auto& d : ep.decisions) {
      policy.accumulate_grad_log_prob(d.point, d.choice, -adv.per_episode[i].values(static_cast<Eigen::Index>(d.token)) / count,
                                      expected);
    }
  }
  const double n = static_cast<double>(b.episodes.size());
  EXPECT_NEAR(obj.surrogate, surrogate / n, 1e-12);
  EXPECT_LT((obj.grad - expected / n).cwiseAbs().maxCoeff(), 1e-12);
}

TEST_F(BatchTest, PermutingGroupLeavesLossUnchanged) {
  TrainConfig cfg;
  cfg.algo = Algorithm::kGrpoOr;
  cfg.batch_size = 1;
  cfg.group_size = 4;
  Batch b = batch(cfg, 21);
  Advantages adv = compute_advantages(cfg, b, Critic{});
  std::vector<Eigen::VectorXd> lp;
  for (const auto& ep : b.episodes) lp.push_back(policy_logprobs(policy, ep));
  const ToyPolicy moved = ToyPolicy::random_init(12, 1.0);
  const double before = policy_objective(moved.theta(), b, adv, lp, lp, cfg.credit).loss;
  std::reverse(b.episodes.begin(), b.episodes.end());
  std::reverse(b.rewards.begin(), b.rewards.end());
  std::reverse(lp.begin(), lp.end());
  adv = compute_advantages(cfg, b, Critic{});
  EXPECT_NEAR(policy_objective(moved.theta(), b, adv, lp, lp, cfg.credit).loss, before, 1e-12);
}

TEST_F(BatchTest, CriticUpdateDecreasesError) {
  TrainConfig cfg;
  cfg.algo = Algorithm::kMtPpo;
  cfg.batch_size = 4;
  cfg.lr_critic = 1e-4;
  const Batch b = batch(cfg);
  Critic critic(Eigen::VectorXd::Constant(kCriticDims, 0.3), -0.2);
  const Advantages adv = compute_advantages(cfg, b, critic);
  std::vector<const Eigen::MatrixXd*> feats;
  std::vector<Eigen::VectorXd> targets;
  for (std::size_t i = 0; i < b.episodes.size(); ++i) {
    feats.push_back(&b.episodes[i].critic_features);
    targets.push_back(discounted_returns(adv.token_rewards[i].values, cfg.credit.gamma));
  }
  const double before = critic.objective(feats, targets).loss;
  critic_update(cfg, critic, b, adv);
  EXPECT_LT(critic.objective(feats, targets).loss, before);
}

TEST_F(BatchTest, GradCheckSmall) {
  TrainConfig cfg;
  cfg.algo = Algorithm::kMtPpo;
  cfg.batch_size = 2;
  const Batch b = batch(cfg);
  const Critic critic(Eigen::VectorXd::Constant(kCriticDims, 0.1), 0.0);
  const Advantages adv = compute_advantages(cfg, b, critic);
  const GradCheckResult r = grad_check(cfg, b, adv, policy, critic, 10, 3);
  EXPECT_EQ(r.points, 10);
  EXPECT_LT(r.policy_max_rel_err, 1e-4);
  EXPECT_LT(r.critic_max_rel_err, 1e-6);
}

TEST(Trainer, DeterministicSteps) {
  TrainConfig cfg;
  cfg.batch_size = 4;
  auto run = [&] {
    Trainer t(cfg, fixture().corpus, task_ptrs(20), verifiable_rewards(cfg.lambda_s));
    for (int s = 1; s <= 5; ++s) t.step(s);
    return t.policy().theta();
  };
  EXPECT_EQ(run(), run());
}

TEST(Trainer, AllAlgorithmsStep) {
  for (auto algo : {Algorithm::kGrpoOr, Algorithm::kGrpoMr, Algorithm::kMtGrpo, Algorithm::kPpoOr, Algorithm::kPpoMr,
                    Algorithm::kMtPpo}) {
    TrainConfig cfg;
    cfg.algo = algo;
    cfg.batch_size = 2;
    cfg.group_size = 2;
    Trainer t(cfg, fixture().corpus, task_ptrs(10), verifiable_rewards(cfg.lambda_s));
    const StepMetrics m = t.step(1);
    EXPECT_GE(m.format_rate, 0.0);
    EXPECT_LE(m.format_rate, 1.0);
    EXPECT_GE(m.answer_rate, 0.0);
    EXPECT_LE(m.answer_rate, 1.0);
    EXPECT_TRUE(std::isfinite(m.loss)) << algorithm_name(algo);
  }
}

TEST(Checkpoint, RoundTripAndVersion) {
  Checkpoint c;
  c.config.algo = Algorithm::kPpoMr;
  c.step = 17;
  c.policy = ToyPolicy::random_init(1, 0.3).theta();
  c.critic = Eigen::VectorXd::LinSpaced(kCriticDims + 1, -1.0 / 3.0, 2.0 / 7.0);
  c.fixture_checksum = "abc";
  std::stringstream ss;
  write_checkpoint(ss, c);
  const Checkpoint back = read_checkpoint(ss);
  EXPECT_EQ(back.step, 17);
  EXPECT_EQ(back.policy, c.policy);
  EXPECT_EQ(back.critic, c.critic);
  EXPECT_EQ(back.fixture_checksum, "abc");
  EXPECT_EQ(back.config.algo, Algorithm::kPpoMr);
  std::stringstream old("turncredit-checkpoint v0\nstep 1\n");
  EXPECT_THROW(read_checkpoint(old), std::runtime_error);
}

}  // namespace
}  // namespace turncredit
