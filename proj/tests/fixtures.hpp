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

// Shared fixtures and independent reference implementations for tests.

#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "turncredit/transcript.hpp"

namespace turncredit::testing {

inline std::string data_path(const std::string& name) { return std::string(TURNCREDIT_TEST_DATA) + "/" + name; }

inline std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing fixture " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Transcript records keyed by task_id.
inline std::map<std::string, TranscriptRecord> load_records(const std::string& name) {
  std::map<std::string, TranscriptRecord> out;
  std::ifstream in(data_path(name));
  if (!in) throw std::runtime_error("missing fixture " + name);
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    TranscriptRecord r = parse_transcript_line(line);
    out[r.task_id] = r;
  }
  return out;
}

inline Trajectory search_rollout(const std::string& id) {
  const auto recs = load_records("search_agent_rollouts.jsonl");
  const auto& r = recs.at(id);
  return parse_turns(r.completion, TagProfile::search_agent(), r.task_id, r.prompt);
}

inline Trajectory tool_rollout(const std::string& id) {
  const auto recs = load_records("two_turn_rollouts.jsonl");
  const auto& r = recs.at(id);
  return parse_turns(r.completion, TagProfile::two_turn_tool(), r.task_id, r.prompt);
}

// A_t = sum_{l=0}^{T-t-1} (gamma lambda)^l delta_{t+l}, evaluated term by term.
inline Eigen::VectorXd gae_double_sum(const Eigen::VectorXd& r, const Eigen::VectorXd& v, double gamma, double lambda) {
  const Eigen::Index n = r.size();
  Eigen::VectorXd delta(n);
  for (Eigen::Index t = 0; t < n; ++t) delta(t) = r(t) + gamma * (t + 1 < n ? v(t + 1) : 0.0) - v(t);
  Eigen::VectorXd a = Eigen::VectorXd::Zero(n);
  for (Eigen::Index t = 0; t < n; ++t) {
    for (Eigen::Index l = 0; t + l < n; ++l) a(t) += std::pow(gamma * lambda, static_cast<double>(l)) * delta(t + l);
  }
  return a;
}

// Two-pass normalization in long double with the population deviation.
inline std::vector<double> normalize_reference(const std::vector<double>& r, double floor) {
  long double mean = 0;
  for (double x : r) mean += x;
  mean /= static_cast<long double>(r.size());
  long double var = 0;
  for (double x : r) var += (x - mean) * (x - mean);
  const long double sd = std::sqrt(var / static_cast<long double>(r.size()));
  std::vector<double> out;
  for (double x : r) out.push_back(sd < floor ? 0.0 : static_cast<double>((x - mean) / sd));
  return out;
}

}  // namespace turncredit::testing
