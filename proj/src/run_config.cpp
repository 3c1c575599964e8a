// Copyright 2026 The pabdm Authors.
// SPDX-License-Identifier: Apache-2.0

#include "pabdm/run_config.hpp"

#include <sstream>

#include "pabdm/trace_io.hpp"

namespace pabdm {

namespace {

BracketPrompt parse_bracket_prompt(const std::string& s) {
  if (s == "pair-count") return BracketPrompt::PairCount;
  if (s == "depth-trace") return BracketPrompt::DepthTrace;
  throw DomainError("unknown bracket prompt: " + s);
}

void check_tau(double tau, const char* name) {
  if (!(tau > 0.0 && tau <= 1.0)) throw DomainError(std::string(name) + " must lie in (0, 1]");
}

}  // namespace

void RunConfig::validate() const {
  parse_task(task);
  parse_bracket_prompt(bracket_prompt);
  parse_objective(objective);
  parse_corruption(corruption);
  parse_strategy(strategy);
  check_tau(tau_train, "tau-train");
  check_tau(tau_infer, "tau-infer");
  // The sweep also accepts 0, the commit-everything end point.
  for (double t : taus) {
    if (!(t >= 0.0 && t <= 1.0)) throw DomainError("sweep thresholds must lie in [0, 1]");
  }
  if (block_size == 0) throw DomainError("block-size must be >= 1");
  if (fixed_k == 0) throw DomainError("fixed-k must be >= 1");
  if (parse_strategy(strategy) == StrategyKind::FixedK && fixed_k > block_size) {
    throw DomainError("fixed-k must not exceed block-size");
  }
  if (steps == 0 || batch_size == 0 || count == 0 || decode_batch == 0) {
    throw DomainError("steps, batch-size, count and decode-batch must be >= 1");
  }
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) throw DomainError("keep-ratio must lie in (0, 1]");
  if (!(lr > 0.0)) throw DomainError("lr must be positive");
  if (!(hard_rate >= 0.0 && hard_rate <= 1.0)) throw DomainError("hard-rate must lie in [0, 1]");
  if (!oracle.empty() && oracle != "perfect" && oracle != "dip" && oracle != "decay") {
    throw DomainError("unknown oracle: " + oracle);
  }
}

std::string RunConfig::to_ini() const {
  std::ostringstream os;
  os << "command=" << command << '\n'
     << "task=" << task << '\n'
     << "bracket-prompt=" << bracket_prompt << '\n'
     << "objective=" << objective << '\n'
     << "corruption=" << corruption << '\n'
     << "tau-train=" << format_double(tau_train) << '\n'
     << "tau-infer=" << format_double(tau_infer) << '\n'
     << "strategy=" << strategy << '\n'
     << "block-size=" << block_size << '\n'
     << "fixed-k=" << fixed_k << '\n'
     << "steps=" << steps << '\n'
     << "batch-size=" << batch_size << '\n'
     << "lr=" << format_double(lr, 8) << '\n'
     << "keep-ratio=" << format_double(keep_ratio) << '\n'
     << "seed=" << seed << '\n'
     << "eval-seed=" << eval_seed << '\n'
     << "count=" << count << '\n'
     << "decode-batch=" << decode_batch << '\n'
     << "checkpoint=" << checkpoint << '\n'
     << "oracle=" << oracle << '\n'
     << "hard-rate=" << format_double(hard_rate) << '\n'
     << "taus=";
  for (std::size_t i = 0; i < taus.size(); ++i) os << (i ? " " : "") << format_double(taus[i]);
  os << '\n';
  return os.str();
}

GrammarTask RunConfig::make_task() const {
  GrammarTask t(parse_task(task));
  t.bracket_prompt = parse_bracket_prompt(bracket_prompt);
  return t;
}

StrategyConfig RunConfig::make_strategy(const GrammarTask& task) const {
  StrategyConfig s;
  s.kind = parse_strategy(strategy);
  s.tau = tau_infer;
  s.block_size = block_size;
  s.fixed_k = fixed_k;
  s.max_len = task.max_response();
  return s;
}

TrainConfig RunConfig::make_train_config() const {
  TrainConfig c;
  c.task = make_task();
  c.objective = parse_objective(objective);
  c.corruption = parse_corruption(corruption);
  c.tau = tau_train;
  c.keep_ratio = keep_ratio;
  c.block_size = block_size;
  c.steps = steps;
  c.batch_size = batch_size;
  c.lr = lr;
  c.seed = seed;
  c.model = model_config_for(c.task, block_size, seed);
  return c;
}

}  // namespace pabdm
