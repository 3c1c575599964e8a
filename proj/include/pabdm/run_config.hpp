// Copyright 2026 The pabdm Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pabdm/csl_training.hpp"
#include "pabdm/ppc_decoder.hpp"
#include "pabdm/synth_tasks.hpp"

namespace pabdm {

/// Everything a CLI run depends on. Written next to the outputs as
/// run_config.ini so a run can be repeated from the file alone.
struct RunConfig {
  std::string command;
  std::string task = "BalancedBrackets";
  std::string bracket_prompt = "pair-count";
  std::string objective = "CSL";
  std::string corruption = "suffix";
  double tau_train = 0.95;
  double tau_infer = 0.95;
  std::string strategy = "PPC";
  std::size_t block_size = 32;
  std::size_t fixed_k = 4;
  std::size_t steps = 1000;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  double keep_ratio = 0.5;
  std::uint64_t seed = 0;
  std::uint64_t eval_seed = 7919;
  std::size_t count = 200;
  std::size_t decode_batch = 1;
  std::string checkpoint;
  std::string oracle;  // empty, perfect, dip or decay
  double hard_rate = 0.15;
  std::vector<double> taus;
  std::string out = "out";

  /// Throws DomainError on unknown enum names, D = 0 or thresholds outside (0, 1].
  void validate() const;
  /// key = value lines in a fixed order.
  std::string to_ini() const;

  GrammarTask make_task() const;
  StrategyConfig make_strategy(const GrammarTask& task) const;
  TrainConfig make_train_config() const;
};

}  // namespace pabdm
