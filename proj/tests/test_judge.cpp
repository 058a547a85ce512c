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

#include <cstdlib>
#include <regex>
#include <thread>

#include "fixtures.hpp"
#include "httplib.h"
#include "json.hpp"
#include "judge_cases.hpp"
#include "turncredit/judge.hpp"
#include "turncredit/text.hpp"

namespace turncredit {
namespace {

std::string collapse(std::string_view s) { return std::regex_replace(std::string(s), std::regex(R"(\s+)"), " "); }

std::string fill(std::string_view tpl, const JudgeRequest& req) {
  std::string out(tpl);
  auto sub = [&out](const std::string& key, const std::string& value) {
    for (auto p = out.find(key); p != std::string::npos; p = out.find(key, p + value.size())) out.replace(p, key.size(), value);
  };
  sub("{prompt_text}", req.prompt_text);
  sub("{turns_text}", req.turns_text);
  sub("{ground_truth_text}", req.ground_truth_text);
  sub("{len(turns)}", std::to_string(req.expected_turns));
  return out;
}

TEST(Templates, MatchTranscribedText) {
  EXPECT_EQ(trim(collapse(outcome_template())), trim(testing::read_file(testing::data_path("judge_outcome_template.txt"))));
  EXPECT_EQ(trim(collapse(turn_template())), trim(testing::read_file(testing::data_path("judge_turn_template.txt"))));
}

TEST(Templates, RubricConstantsMatchVerifiableRewards) {
  const std::string t(turn_template());
  EXPECT_NE(t.find("Final Turn Score = -1.0"), std::string::npos);
  EXPECT_NE(t.find("Final Turn Score = 0.2"), std::string::npos);
  EXPECT_NE(t.find("Final Turn Score = 1.0"), std::string::npos);
  EXPECT_NE(t.find("Correct format: +0.1"), std::string::npos);
  EXPECT_NE(t.find("Incorrect format: -0.2"), std::string::npos);
  EXPECT_NE(t.find(": +0.3"), std::string::npos);
  EXPECT_NE(t.find("Search penalty = Number of searches × (-0.1)"), std::string::npos);
  EXPECT_EQ(kOutcomeMalformed, -1.0);
  EXPECT_EQ(kOutcomeWellFormed, 0.2);
  EXPECT_EQ(kTurnFormatOk, 0.1);
  EXPECT_EQ(kTurnFormatBad, -0.2);
  EXPECT_EQ(kRetrievalHit, 0.3);
  EXPECT_EQ(kDefaultLambdaS, 0.1);
}

TEST(Prompts, OutcomeFillsSlots) {
  const Trajectory t = testing::search_rollout("throne");
  const JudgeRequest req = make_judge_request(t, {"Charles, Prince of Wales"}, JudgeLevel::kOutcome);
  const std::string p = build_outcome_prompt(req);
  EXPECT_EQ(p, fill(outcome_template(), req));
  EXPECT_NE(p.find("exceeds 5 tokens"), std::string::npos);
  EXPECT_NE(p.find(req.turns_text), std::string::npos);
  EXPECT_NE(p.find("Charles, Prince of Wales"), std::string::npos);
  for (const auto& turn : t.turns) EXPECT_NE(p.find(std::string(trim(turn.text))), std::string::npos);
  EXPECT_EQ(p.find("{turns_text}"), std::string::npos);
  EXPECT_THROW(build_turn_prompt(req), std::invalid_argument);
}

TEST(Prompts, EmptyTurnsStillWellFormed) {
  JudgeRequest req;
  req.prompt_text = "User prompt: q";
  req.ground_truth_text = "Ground truth: a";
  const std::string p = build_outcome_prompt(req);
  EXPECT_NE(p.find("## Your Evaluation"), std::string::npos);
  EXPECT_NE(p.find("Ground truth: a"), std::string::npos);
}

TEST(Prompts, TurnDemandsExactCount) {
  const Trajectory t = testing::search_rollout("throne");
  const JudgeRequest req = make_judge_request(t, {"Charles, Prince of Wales"}, JudgeLevel::kTurn);
  EXPECT_EQ(req.expected_turns, 3);
  const std::string p = build_turn_prompt(req);
  EXPECT_EQ(p, fill(turn_template(), req));
  EXPECT_NE(p.find("Must provide exactly 3 scores (one per turn)"), std::string::npos);
  EXPECT_NE(p.find("TURNS TO EVALUATE: 3"), std::string::npos);
  JudgeRequest one = req;
  one.expected_turns = 1;
  EXPECT_NE(build_turn_prompt(one).find("exactly 1 scores"), std::string::npos);
  one.expected_turns = 0;
  EXPECT_THROW(build_turn_prompt(one), std::invalid_argument);
}

TEST(Prompts, InjectiveAndGoldRequired) {
  const Trajectory a = testing::search_rollout("throne");
  const Trajectory b = testing::search_rollout("sea-pearl");
  EXPECT_NE(build_prompt(make_judge_request(a, {"x"}, JudgeLevel::kTurn)),
            build_prompt(make_judge_request(b, {"x"}, JudgeLevel::kTurn)));
  EXPECT_NE(build_prompt(make_judge_request(a, {"x"}, JudgeLevel::kOutcome)),
            build_prompt(make_judge_request(a, {"y"}, JudgeLevel::kOutcome)));
  EXPECT_THROW(make_judge_request(a, {}, JudgeLevel::kOutcome), std::invalid_argument);
}

class ParserSuite : public ::testing::TestWithParam<testing::JudgeCase> {};

TEST_P(ParserSuite, Contract) {
  const auto& c = GetParam();
  const JudgeVerdict v = parse_judge_reply(c.reply, c.expected, c.level);
  EXPECT_EQ(v.parse_ok, c.parse_ok);
  EXPECT_EQ(v.scores, c.scores);
  EXPECT_EQ(v.reasoning, c.reasoning);
  if (v.parse_ok) {
    EXPECT_EQ(static_cast<int>(v.scores.size()), c.level == JudgeLevel::kOutcome ? 1 : c.expected);
  }
  for (double s : v.scores) {
    EXPECT_GE(s, -1.0);
    EXPECT_LE(s, 1.0);
  }
}

INSTANTIATE_TEST_SUITE_P(Replies, ParserSuite, ::testing::ValuesIn(testing::judge_cases()),
                         [](const auto& info) { return std::string(info.param.name); });

TEST(Parser, SuiteHasTwentyCases) { EXPECT_EQ(testing::judge_cases().size(), 20u); }

TEST(Fallback, Scores) {
  const Trajectory t = testing::search_rollout("throne");
  EXPECT_EQ(fallback_scores(JudgeLevel::kOutcome, t), std::vector<double>{0.0});
  EXPECT_EQ(fallback_scores(JudgeLevel::kTurn, t), (std::vector<double>{0.1, 0.1, 0.2}));
  const Trajectory bad = testing::search_rollout("sea-pearl");
  EXPECT_EQ(fallback_scores(JudgeLevel::kTurn, bad), (std::vector<double>{0.1, 0.1, 0.1, -1.0}));
}

TEST(Mock, ScriptAndRepeat) {
  const auto replies = MockJudgeClient::parse_script("a\nb\n---\nc\n---\n");
  EXPECT_EQ(replies, (std::vector<std::string>{"a\nb", "c"}));
  MockJudgeClient m({"first", "second"});
  EXPECT_EQ(m.complete("p"), "first");
  EXPECT_EQ(m.complete("p"), "second");
  EXPECT_EQ(m.complete("p"), "second");
  EXPECT_EQ(m.calls(), 3);
  EXPECT_THROW(MockJudgeClient({}), std::invalid_argument);
}

TEST(Mock, FixedReplyIsDeterministic) {
  const Trajectory t = testing::search_rollout("throne");
  const JudgeRequest req = make_judge_request(t, {"Charles, Prince of Wales"}, JudgeLevel::kTurn);
  MockJudgeClient m({"<reasoning>r</reasoning><score>Turn1: 0.1\nTurn2: 0.0\nTurn3: 1.0</score>"});
  const JudgeVerdict a = judge_call(req, m, {}, t);
  const JudgeVerdict b = judge_call(req, m, {}, t);
  EXPECT_EQ(a.scores, b.scores);
  EXPECT_EQ(a.scores, (std::vector<double>{0.1, 0.0, 1.0}));
  EXPECT_EQ(a.attempts, 1);
  EXPECT_FALSE(a.fallback);
}

TEST(JudgeCall, MalformedTwiceThenValid) {
  const Trajectory t = testing::search_rollout("throne");
  const JudgeRequest req = make_judge_request(t, {"x"}, JudgeLevel::kOutcome);
  MockJudgeClient m({"garbage", "<score>maybe</score>", "<score>1.0</score>"});
  const JudgeVerdict v = judge_call(req, m, {}, t);
  EXPECT_TRUE(v.parse_ok);
  EXPECT_EQ(v.attempts, 3);
  EXPECT_EQ(v.scores, std::vector<double>{1.0});
  EXPECT_EQ(m.calls(), 3);
}

TEST(JudgeCall, FallbackAfterRetries) {
  const Trajectory t = testing::search_rollout("throne");
  const JudgeRequest req = make_judge_request(t, {"x"}, JudgeLevel::kTurn);
  MockJudgeClient m({"<score>Turn1: 0.3</score>"});
  JudgeOptions opts;
  opts.retries = 1;
  const JudgeVerdict v = judge_call(req, m, opts, t);
  EXPECT_TRUE(v.fallback);
  EXPECT_FALSE(v.parse_ok);
  EXPECT_EQ(v.attempts, 2);
  EXPECT_EQ(v.scores, fallback_scores(JudgeLevel::kTurn, t));
}

class DownClient : public JudgeClient {
 public:
  std::string complete(const std::string&) override {
    ++calls;
    throw JudgeUnavailable("down");
  }
  int calls = 0;
};

TEST(JudgeCall, UnavailableAfterRetries) {
  const Trajectory t = testing::search_rollout("throne");
  DownClient c;
  EXPECT_THROW(judge_call(make_judge_request(t, {"x"}, JudgeLevel::kOutcome), c, {}, t), JudgeUnavailable);
  EXPECT_EQ(c.calls, 3);
}

TEST(Breakdown, TurnLevelFillsRewards) {
  const Trajectory t = testing::search_rollout("throne");
  MockJudgeClient m({"<score>Turn1: 0.3\nTurn2: -0.1\nTurn3: 1.0</score>"});
  const RewardBreakdown br = judge_breakdown(t, {"Charles, Prince of Wales"}, JudgeLevel::kTurn, m, {});
  EXPECT_EQ(br.turn_rewards(), (std::vector<double>{0.3, -0.1, 1.0}));
  MockJudgeClient o({"<score>0.0</score>"});
  const RewardBreakdown ob = judge_breakdown(t, {"Charles, Prince of Wales"}, JudgeLevel::kOutcome, o, {});
  EXPECT_EQ(ob.outcome.value, 0.0);
  for (const auto& r : ob.intermediate) EXPECT_EQ(r.total, 0.0);
}

TEST(Http, LocalServerRoundTrip) {
  httplib::Server server;
  nlohmann::json seen;
  std::string auth;
  server.Post("/v1/judge", [&](const httplib::Request& req, httplib::Response& res) {
    seen = nlohmann::json::parse(req.body);
    auth = req.get_header_value("Authorization");
    res.set_content(nlohmann::json{{"output", "<score>1.0</score>"}}.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  HttpJudgeClient client("http://127.0.0.1:" + std::to_string(port) + "/v1/judge", "secret", "m1", 5.0);
  const Trajectory t = testing::search_rollout("throne");
  const JudgeVerdict v = judge_call(make_judge_request(t, {"x"}, JudgeLevel::kOutcome), client, {}, t);
  server.stop();
  th.join();
  EXPECT_TRUE(v.parse_ok);
  EXPECT_EQ(v.scores, std::vector<double>{1.0});
  EXPECT_EQ(seen.value("model", ""), "m1");
  EXPECT_NE(seen.value("input", "").find("## EVALUATION DATA"), std::string::npos);
  EXPECT_EQ(auth, "Bearer secret");
}

TEST(Http, ServerErrorAndBadBody) {
  httplib::Server server;
  int hits = 0;
  server.Post("/", [&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    if (hits == 1) {
      res.status = 500;
    } else {
      res.set_content("not json", "text/plain");
    }
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  HttpJudgeClient client("http://127.0.0.1:" + std::to_string(port), "", "m", 5.0);
  EXPECT_THROW(client.complete("p"), JudgeUnavailable);
  EXPECT_THROW(client.complete("p"), JudgeUnavailable);
  server.stop();
  th.join();
}

TEST(Http, UnreachableEndpoint) {
  // Bind then release a port so nothing listens on it.
  int port = 0;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }
  HttpJudgeClient client("http://127.0.0.1:" + std::to_string(port) + "/judge", "", "m", 1.0);
  const Trajectory t = testing::search_rollout("throne");
  EXPECT_THROW(judge_call(make_judge_request(t, {"x"}, JudgeLevel::kOutcome), client, {}, t), JudgeUnavailable);
  EXPECT_THROW(HttpJudgeClient("localhost:80", "", "m", 1.0), std::invalid_argument);
}

TEST(Env, ClientSelection) {
  ::unsetenv("JUDGE_ENDPOINT");
  EXPECT_THROW(judge_client_from_env({}), JudgeUnavailable);
  const std::string script = testing::data_path("judge_script.txt");
  ::setenv("JUDGE_ENDPOINT", ("mock:" + script).c_str(), 1);
  auto c = judge_client_from_env({});
  EXPECT_NE(dynamic_cast<MockJudgeClient*>(c.get()), nullptr);
  ::setenv("JUDGE_ENDPOINT", "http://127.0.0.1:9/x", 1);
  EXPECT_NE(dynamic_cast<HttpJudgeClient*>(judge_client_from_env({}).get()), nullptr);
  ::unsetenv("JUDGE_ENDPOINT");
}

}  // namespace
}  // namespace turncredit
