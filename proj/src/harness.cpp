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

#include "turncredit/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "turncredit/text.hpp"

namespace turncredit {
namespace fs = std::filesystem;
namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

int to_int(std::string_view key, std::string_view v) {
  const std::string s(trim(v));
  std::size_t used = 0;
  int out = 0;
  try {
    out = std::stoi(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw std::invalid_argument("config: bad integer for " + std::string(key));
  return out;
}

double to_double(std::string_view key, std::string_view v) {
  const std::string s(trim(v));
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw std::invalid_argument("config: bad number for " + std::string(key));
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::vector<std::string> metric_row(const StepMetrics& m) {
  return {std::to_string(m.step), num(m.outcome_reward), num(m.answer_rate), num(m.format_rate),
          num(m.retrieval_rate),  num(m.mean_turns),     num(m.mean_searches), num(m.loss),
          num(m.kl),              num(m.critic_loss),    num(m.adv_mean),      num(m.adv_std),
          num(m.adv_abs_max)};
}

std::vector<std::string> validation_row(int step, const EvalSummary& s) {
  return {std::to_string(step),   num(s.outcome_reward), num(s.answer_rate),  num(s.format_rate),
          num(s.retrieval_rate), num(s.mean_turns),      num(s.mean_searches)};
}

std::string csv_line(const std::vector<std::string>& cells) {
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + cells[i];
  return out + "\n";
}

RewardFn reward_fn_for(const RunConfig& cfg, std::shared_ptr<JudgeClient> client) {
  if (cfg.train.reward_source == RewardSource::kVerifiable) return verifiable_rewards(cfg.train.lambda_s);
  const bool outcome_only = cfg.train.algo == Algorithm::kGrpoOr || cfg.train.algo == Algorithm::kPpoOr;
  const JudgeLevel level = outcome_only ? JudgeLevel::kOutcome : JudgeLevel::kTurn;
  const JudgeOptions opts = cfg.judge;
  return [client, level, opts](const Episode& ep) {
    return judge_breakdown(ep.trajectory, ep.task->gold_answers, level, *client, opts);
  };
}

nlohmann::json breakdown_json(const std::string& task_id, const Trajectory& traj, const RewardBreakdown& br) {
  nlohmann::json inter = nlohmann::json::array();
  for (const auto& r : br.intermediate) {
    nlohmann::json j = {{"total", r.total}};
    if (br.profile == ProfileMode::kSearchAgent) {
      j["retrieval"] = r.retrieval;
      j["format"] = r.format;
      j["search_penalty"] = r.search_penalty;
    } else {
      j["tool_execution"] = r.tool_execution;
      j["result_presence"] = r.result_presence;
    }
    inter.push_back(j);
  }
  nlohmann::json outcome = {{"exact_match", br.outcome.exact_match},
                            {"format_ok", br.outcome.format_ok},
                            {"value", br.outcome.value}};
  if (br.profile == ProfileMode::kTwoTurnTool) {
    outcome["answer_presence"] = br.outcome.answer_presence;
    outcome["exact_match_reward"] = br.outcome.exact_match_reward;
    outcome["xml_format"] = br.outcome.xml_format;
    outcome["tag_usage"] = br.outcome.tag_usage;
  }
  return {{"task_id", task_id},
          {"profile", profile_name(br.profile)},
          {"turns", traj.turns.size()},
          {"intermediate", inter},
          {"outcome", outcome},
          {"turn_rewards", br.turn_rewards()}};
}

struct Series {
  std::vector<std::string> columns;
  std::map<int, std::vector<double>> rows;  // step -> values (columns[1..])
};

Series read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing metrics file " + path.string());
  Series s;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty metrics file " + path.string());
  s.columns = split(trim(line), ',');
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto cells = split(trim(line), ',');
    if (cells.size() != s.columns.size()) throw std::runtime_error("ragged row in " + path.string());
    std::vector<double> v;
    for (std::size_t i = 1; i < cells.size(); ++i) v.push_back(std::stod(cells[i]));
    s.rows[std::stoi(cells[0])] = std::move(v);
  }
  return s;
}

std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

std::string band_svg(const std::string& title, const std::vector<double>& x, const std::vector<double>& mean,
                     const std::vector<double>& lo, const std::vector<double>& hi, int n_runs) {
  constexpr double W = 640, H = 400, L = 60, R = 20, T = 40, B = 50;
  double xmin = x.front(), xmax = x.back();
  double ymin = *std::min_element(lo.begin(), lo.end());
  double ymax = *std::max_element(hi.begin(), hi.end());
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax - ymin < 1e-12) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  auto px = [&](double v) { return L + (v - xmin) / (xmax - xmin) * (W - L - R); };
  auto py = [&](double v) { return H - B - (v - ymin) / (ymax - ymin) * (H - T - B); };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << svg_escape(title)
     << " (" << n_runs << " run" << (n_runs == 1 ? "" : "s") << ")</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << L << "\" y=\"" << H - B + 20 << "\" font-size=\"12\">" << num(xmin) << "</text>\n";
  os << "<text x=\"" << W - R << "\" y=\"" << H - B + 20 << "\" text-anchor=\"end\" font-size=\"12\">" << num(xmax)
     << "</text>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" font-size=\"12\">step</text>\n";
  os << "<text x=\"" << L - 6 << "\" y=\"" << py(ymax) + 4 << "\" text-anchor=\"end\" font-size=\"12\">" << num(ymax)
     << "</text>\n";
  os << "<text x=\"" << L - 6 << "\" y=\"" << py(ymin) + 4 << "\" text-anchor=\"end\" font-size=\"12\">" << num(ymin)
     << "</text>\n";
  os << "<polygon fill=\"steelblue\" fill-opacity=\"0.25\" stroke=\"none\" points=\"";
  for (std::size_t i = 0; i < x.size(); ++i) os << px(x[i]) << "," << py(hi[i]) << " ";
  for (std::size_t i = x.size(); i-- > 0;) os << px(x[i]) << "," << py(lo[i]) << " ";
  os << "\"/>\n<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < x.size(); ++i) os << px(x[i]) << "," << py(mean[i]) << " ";
  os << "\"/>\n</svg>\n";
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

RunConfig parse_run_config(std::string_view text) {
  RunConfig cfg;
  std::istringstream in{std::string(text)};
  int lineno = 0;
  for (std::string raw; std::getline(in, raw);) {
    ++lineno;
    const auto hash = raw.find('#');
    const std::string_view line = trim(std::string_view(raw).substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key=value");
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    if (apply_config_value(cfg.train, key, value)) continue;
    if (key == "fixture_seed") {
      cfg.fixture_seed = static_cast<std::uint64_t>(to_int(key, value));
    } else if (key == "n_docs") {
      cfg.n_docs = to_int(key, value);
    } else if (key == "n_train") {
      cfg.n_train = to_int(key, value);
    } else if (key == "n_val") {
      cfg.n_val = to_int(key, value);
    } else if (key == "fixture_checksum") {
      cfg.fixture_checksum = std::string(value);
    } else if (key == "eval_every") {
      cfg.eval_every = to_int(key, value);
    } else if (key == "checkpoint_every") {
      cfg.checkpoint_every = to_int(key, value);
    } else if (key == "runs") {
      cfg.runs = to_int(key, value);
    } else if (key == "out") {
      cfg.out = std::string(value);
    } else if (key == "judge_retries") {
      cfg.judge.retries = to_int(key, value);
    } else if (key == "judge_timeout") {
      cfg.judge.timeout_s = to_double(key, value);
    } else if (key == "judge_model") {
      cfg.judge.model = std::string(value);
    } else {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string run_config_to_text(const RunConfig& cfg) {
  std::ostringstream os;
  os << config_to_text(cfg.train);
  os << "fixture_seed=" << cfg.fixture_seed << "\n"
     << "n_docs=" << cfg.n_docs << "\n"
     << "n_train=" << cfg.n_train << "\n"
     << "n_val=" << cfg.n_val << "\n";
  if (!cfg.fixture_checksum.empty()) os << "fixture_checksum=" << cfg.fixture_checksum << "\n";
  os << "eval_every=" << cfg.eval_every << "\n"
     << "checkpoint_every=" << cfg.checkpoint_every << "\n"
     << "runs=" << cfg.runs << "\n"
     << "out=" << cfg.out << "\n"
     << "judge_retries=" << cfg.judge.retries << "\n"
     << "judge_timeout=" << num(cfg.judge.timeout_s) << "\n"
     << "judge_model=" << cfg.judge.model << "\n";
  return os.str();
}

std::string training_fixture_checksum(const Fixture& fx, int n_train) {
  Fixture train{fx.corpus, {fx.tasks.begin(), fx.tasks.begin() + n_train}};
  return train.checksum();
}

FixtureSplit load_fixture(const RunConfig& cfg) {
  if (cfg.n_train < 1 || cfg.n_val < 0) throw std::invalid_argument("config: need n_train >= 1 and n_val >= 0");
  FixtureSplit s;
  s.fixture = build_corpus(cfg.fixture_seed, cfg.n_docs, cfg.n_train + cfg.n_val);
  s.checksum = training_fixture_checksum(s.fixture, cfg.n_train);
  if (!cfg.fixture_checksum.empty() && cfg.fixture_checksum != s.checksum) {
    throw std::runtime_error("fixture checksum mismatch: config has " + cfg.fixture_checksum + ", generated " +
                             s.checksum);
  }
  for (int i = 0; i < cfg.n_train; ++i) s.train.push_back(&s.fixture.tasks[i]);
  for (int i = cfg.n_train; i < cfg.n_train + cfg.n_val; ++i) s.val.push_back(&s.fixture.tasks[i]);
  return s;
}

const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> cols = {"step",          "outcome_reward", "answer_rate", "format_rate",
                                                "retrieval_rate", "mean_turns",    "mean_searches", "loss",
                                                "kl",             "critic_loss",   "adv_mean",    "adv_std",
                                                "adv_abs_max"};
  return cols;
}

const std::vector<std::string>& validation_columns() {
  static const std::vector<std::string> cols = {"step",           "outcome_reward", "answer_rate", "format_rate",
                                                "retrieval_rate", "mean_turns",     "mean_searches"};
  return cols;
}

// ---------------------------------------------------------------------------
// Training

RunResult train_run(const RunConfig& cfg, const FixtureSplit& split, const fs::path& dir) {
  cfg.train.validate();
  fs::create_directories(dir);
  std::shared_ptr<JudgeClient> client;
  if (cfg.train.reward_source == RewardSource::kJudge) client = judge_client_from_env(cfg.judge);
  Trainer trainer(cfg.train, split.fixture.corpus, split.train, reward_fn_for(cfg, client));

  write_text(dir / "config.txt", run_config_to_text(cfg));
  const nlohmann::json meta = {{"version", kVersion},
                               {"seed", cfg.train.seed},
                               {"fixture_seed", cfg.fixture_seed},
                               {"fixture_checksum", split.checksum},
                               {"algo", algorithm_name(cfg.train.algo)},
                               {"reward_source", reward_source_name(cfg.train.reward_source)},
                               {"alpha", cfg.train.credit.alpha},
                               {"validation_seed", derive_seed(cfg.train.seed, 99)}};
  write_text(dir / "run.json", meta.dump(2) + "\n");

  RunResult result;
  result.dir = dir;
  std::ofstream metrics(dir / "metrics.csv");
  std::ofstream validation(dir / "validation.csv");
  metrics << csv_line(metrics_columns());
  validation << csv_line(validation_columns());

  auto validate_at = [&](int step) {
    ToyPolicy greedy = trainer.policy();
    greedy.set_greedy(true);
    const EvalSummary s = evaluate(greedy, trainer.env(), split.val, cfg.train.lambda_s, derive_seed(cfg.train.seed, 99));
    validation << csv_line(validation_row(step, s)) << std::flush;
    result.validation.emplace_back(step, s);
  };
  auto checkpoint_at = [&](int step, const std::string& name) {
    std::ofstream out(dir / name);
    write_checkpoint(out, {cfg.train, step, trainer.policy().theta(), trainer.critic().flat(), split.checksum});
  };

  if (!split.val.empty()) validate_at(0);
  for (int step = 1; step <= cfg.train.steps; ++step) {
    const StepMetrics m = trainer.step(step);
    metrics << csv_line(metric_row(m));
    result.metrics.push_back(m);
    const bool last = step == cfg.train.steps;
    if (!split.val.empty() && ((cfg.eval_every > 0 && step % cfg.eval_every == 0) || last)) validate_at(step);
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && !last) {
      checkpoint_at(step, "checkpoint_" + std::to_string(step) + ".txt");
    }
  }
  checkpoint_at(cfg.train.steps, "checkpoint_final.txt");
  return result;
}

std::vector<RunResult> cmd_train(const RunConfig& cfg) {
  if (cfg.runs < 1) throw std::invalid_argument("config: runs must be >= 1");
  cfg.train.validate();
  const FixtureSplit split = load_fixture(cfg);
  std::vector<RunResult> results;
  for (int r = 0; r < cfg.runs; ++r) {
    RunConfig member = cfg;
    member.train.seed = cfg.train.seed + static_cast<std::uint64_t>(r);
    member.runs = 1;
    const fs::path dir = cfg.runs == 1 ? fs::path(cfg.out) : fs::path(cfg.out) / ("run_" + std::to_string(r));
    results.push_back(train_run(member, split, dir));
  }
  return results;
}

// ---------------------------------------------------------------------------
// Score

ScoreStats cmd_score(std::istream& in, std::ostream& out, std::ostream& err, const ScoreOptions& opts,
                     JudgeClient* judge) {
  ScoreStats stats;
  int lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const TranscriptRecord rec = parse_transcript_line(line);
      const Trajectory traj = parse_turns(rec.completion, TagProfile::of(opts.profile), rec.task_id, rec.prompt);
      if (opts.source == RewardSource::kVerifiable) {
        const RewardBreakdown br = score(traj, RewardConfig{opts.lambda_s, rec.gold_answers});
        out << breakdown_json(rec.task_id, traj, br).dump() << "\n";
      } else {
        if (judge == nullptr) throw JudgeUnavailable("no judge client configured");
        const JudgeVerdict v =
            judge_call(make_judge_request(traj, rec.gold_answers, opts.level), *judge, opts.judge, traj);
        const nlohmann::json j = {{"task_id", rec.task_id},
                                  {"level", opts.level == JudgeLevel::kOutcome ? "outcome" : "turn"},
                                  {"scores", v.scores},
                                  {"parse_ok", v.parse_ok},
                                  {"fallback", v.fallback},
                                  {"attempts", v.attempts},
                                  {"reasoning", v.reasoning}};
        out << j.dump() << "\n";
      }
      ++stats.scored;
    } catch (const std::exception& e) {
      err << "line " << lineno << ": " << e.what() << "\n";
      ++stats.failed;
    }
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Eval

EvalPolicy parse_eval_policy(std::string_view name) {
  const std::string s = to_lower(trim(name));
  if (s == "checkpoint") return EvalPolicy::kCheckpoint;
  if (s == "oracle") return EvalPolicy::kOracle;
  if (s == "never-answer" || s == "never_answer") return EvalPolicy::kNeverAnswer;
  if (s == "random" || s == "random-init") return EvalPolicy::kRandomInit;
  throw std::invalid_argument("unknown eval policy: " + std::string(name));
}

EvalSummary cmd_eval(const EvalRequest& req) {
  RunConfig cfg = req.config;
  std::optional<Checkpoint> ckpt;
  if (req.policy == EvalPolicy::kCheckpoint) {
    if (req.checkpoint.empty()) throw std::invalid_argument("eval: --checkpoint is required");
    std::ifstream in(req.checkpoint);
    if (!in) throw std::runtime_error("eval: cannot open checkpoint " + req.checkpoint);
    ckpt = read_checkpoint(in);
    cfg.train = ckpt->config;
    if (cfg.fixture_checksum.empty()) cfg.fixture_checksum = ckpt->fixture_checksum;
  }
  const FixtureSplit split = load_fixture(cfg);
  std::vector<const EnvTask*> tasks;
  if (req.split == "train" || req.split == "all") tasks.insert(tasks.end(), split.train.begin(), split.train.end());
  if (req.split == "val" || req.split == "all") tasks.insert(tasks.end(), split.val.begin(), split.val.end());
  if (req.split != "train" && req.split != "val" && req.split != "all") {
    throw std::invalid_argument("eval: split must be train, val or all");
  }
  const SearchEnvironment env(split.fixture.corpus, EnvConfig::for_profile(cfg.train.mode, cfg.train.max_turns));
  const std::uint64_t seed = derive_seed(cfg.train.seed, 99);
  switch (req.policy) {
    case EvalPolicy::kOracle:
      return evaluate(ScriptedPolicy(ScriptedPolicy::Script::kOracle), env, tasks, cfg.train.lambda_s, seed);
    case EvalPolicy::kNeverAnswer:
      return evaluate(ScriptedPolicy(ScriptedPolicy::Script::kNeverAnswer), env, tasks, cfg.train.lambda_s, seed);
    case EvalPolicy::kRandomInit: {
      ToyPolicy p = ToyPolicy::random_init(derive_seed(cfg.train.seed, 7), cfg.train.init_scale);
      p.set_greedy(true);
      return evaluate(p, env, tasks, cfg.train.lambda_s, seed);
    }
    case EvalPolicy::kCheckpoint:
      break;
  }
  ToyPolicy p(ckpt->policy);
  p.set_greedy(true);
  return evaluate(p, env, tasks, cfg.train.lambda_s, seed);
}

void print_eval_table(std::ostream& out, const EvalSummary& s) {
  char buf[128];
  out << "metric          value\n";
  std::snprintf(buf, sizeof(buf), "answer          %.4f\n", s.answer_rate);
  out << buf;
  std::snprintf(buf, sizeof(buf), "format          %.4f\n", s.format_rate);
  out << buf;
  std::snprintf(buf, sizeof(buf), "retrieval       %.4f\n", s.retrieval_rate);
  out << buf;
  std::snprintf(buf, sizeof(buf), "outcome_reward  %.4f\n", s.outcome_reward);
  out << buf;
  std::snprintf(buf, sizeof(buf), "mean_turns      %.4f\n", s.mean_turns);
  out << buf;
  std::snprintf(buf, sizeof(buf), "mean_searches   %.4f\n", s.mean_searches);
  out << buf;
  out << "episodes        " << s.episodes << "\n";
}

// ---------------------------------------------------------------------------
// Plot

std::vector<double> ema_smooth(const std::vector<double>& xs, double factor) {
  if (!(factor > 0.0 && factor <= 1.0)) throw std::invalid_argument("ema factor must be in (0, 1]");
  std::vector<double> out;
  out.reserve(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    out.push_back(i == 0 ? xs[0] : factor * xs[i] + (1.0 - factor) * out.back());
  }
  return out;
}

void cmd_plot(const std::vector<fs::path>& runs, const PlotOptions& opts) {
  if (runs.empty()) throw std::invalid_argument("plot: need at least one run directory");
  std::vector<fs::path> dirs;
  for (const auto& r : runs) {
    if (fs::exists(r / "metrics.csv")) {
      dirs.push_back(r);
      continue;
    }
    std::vector<fs::path> sub;
    if (fs::is_directory(r)) {
      for (const auto& e : fs::directory_iterator(r)) {
        if (e.is_directory() && fs::exists(e.path() / "metrics.csv")) sub.push_back(e.path());
      }
    }
    if (sub.empty()) throw std::runtime_error("plot: missing metrics.csv under " + r.string());
    std::sort(sub.begin(), sub.end());
    dirs.insert(dirs.end(), sub.begin(), sub.end());
  }
  fs::create_directories(opts.out);
  std::ofstream summary(opts.out / "summary.csv");
  summary << "file,metric,runs,final_step,final_mean,final_min,final_max\n";

  for (const std::string file : {"metrics.csv", "validation.csv"}) {
    std::vector<Series> series;
    for (const auto& d : dirs) {
      if (fs::exists(d / file)) series.push_back(read_csv(d / file));
    }
    if (series.empty()) continue;
    const std::string prefix = file == "metrics.csv" ? "train_" : "val_";
    for (std::size_t c = 1; c < series[0].columns.size(); ++c) {
      // Smooth each run, then aggregate per step over the runs that have it.
      std::map<int, std::vector<double>> at_step;
      for (const auto& s : series) {
        std::vector<int> steps;
        std::vector<double> xs;
        for (const auto& [step, row] : s.rows) {
          steps.push_back(step);
          xs.push_back(row.at(c - 1));
        }
        const auto smoothed = ema_smooth(xs, opts.ema);
        for (std::size_t i = 0; i < steps.size(); ++i) at_step[steps[i]].push_back(smoothed[i]);
      }
      if (at_step.empty()) continue;
      std::vector<double> x, mean, lo, hi;
      for (const auto& [step, vals] : at_step) {
        x.push_back(step);
        double sum = 0;
        for (double v : vals) sum += v;
        mean.push_back(sum / static_cast<double>(vals.size()));
        lo.push_back(*std::min_element(vals.begin(), vals.end()));
        hi.push_back(*std::max_element(vals.begin(), vals.end()));
      }
      const std::string name = prefix + series[0].columns[c];
      write_text(opts.out / (name + ".svg"), band_svg(name, x, mean, lo, hi, static_cast<int>(series.size())));
      summary << file << "," << series[0].columns[c] << "," << series.size() << "," << x.back() << ","
              << num(mean.back()) << "," << num(lo.back()) << "," << num(hi.back()) << "\n";
    }
  }
}

// ---------------------------------------------------------------------------
// Sweep

std::vector<fs::path> cmd_sweep(const RunConfig& cfg, const SweepOptions& opts) {
  if (opts.values.empty()) throw std::invalid_argument("sweep: no values");
  std::vector<RunConfig> members;
  for (const auto& v : opts.values) {
    RunConfig member = parse_run_config(run_config_to_text(cfg) + opts.param + "=" + v + "\n");
    member.out = (fs::path(cfg.out) / (opts.param + "=" + v)).string();
    member.train.validate();
    members.push_back(std::move(member));
  }
  std::vector<std::future<void>> jobs;
  for (const auto& m : members) jobs.push_back(std::async(std::launch::async, [&m] { cmd_train(m); }));
  for (auto& j : jobs) j.get();
  std::vector<fs::path> dirs;
  for (const auto& m : members) dirs.emplace_back(m.out);
  return dirs;
}

}  // namespace turncredit
