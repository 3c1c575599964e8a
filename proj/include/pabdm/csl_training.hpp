// Copyright 2026 The pabdm Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pabdm/attention_masks.hpp"
#include "pabdm/synth_tasks.hpp"
#include "pabdm/tiny_transformer.hpp"

namespace pabdm {

enum class Objective { CSL, CE, Random };
const char* to_string(Objective o);
Objective parse_objective(const std::string& name);

/// How the noisy branch is corrupted. Suffix masks every position from a
/// per-block start onwards; BlockNoise masks each position with its block's
/// noise level.
enum class Corruption { Suffix, BlockNoise };
const char* to_string(Corruption c);
Corruption parse_corruption(const std::string& name);

/// Gating result for one block. Offsets are 1-based within the block.
struct SupervisionPlan {
  std::size_t block = 0;
  std::size_t suffix_start = 0;
  std::vector<std::size_t> masked;     // valid masked offsets, ascending
  std::vector<double> confidences;     // gold-token probability per masked offset
  std::optional<std::size_t> frontier; // first masked offset with confidence < tau
  std::vector<std::size_t> supervised;
};

/// Gates over an ordered list of masked offsets. `confidences[j]` belongs to
/// `masked[j]`. Throws DomainError for confidences outside [0, 1].
SupervisionPlan gate_supervision(std::span<const double> confidences,
                                 std::span<const std::size_t> masked, double tau);
/// Contiguous form: masked offsets are suffix_start, suffix_start + 1, ...
SupervisionPlan gate_supervision(std::span<const double> confidences, std::size_t suffix_start,
                                 double tau);

/// One suffix start per block, uniform over 1..D.
std::vector<std::size_t> sample_suffix_starts(const BlockLayout& layout, std::mt19937_64& rng);

/// Sum of |S_b| over sum of |Omega_b|; throws DomainError when nothing is masked.
double supervised_ratio(std::span<const SupervisionPlan> plans);

/// One concatenated training input [prompt | noisy response | clean response].
struct TrainingExample {
  ConcatLayout concat;
  TokenSeq tokens;                     // concat.size() entries
  std::vector<std::size_t> positions;  // absolute position ids
  TokenSeq clean;                      // padded response, layout.l() entries
  // Per block, the valid masked offsets in the noisy branch and the suffix
  // start that produced them (0 for block-noise corruption).
  std::vector<std::vector<std::size_t>> masked;
  std::vector<std::size_t> suffix_starts;
};

struct TrainingBatch {
  std::vector<TrainingExample> examples;
  IntraBlock variant = IntraBlock::Causal;
};

/// Builds the concatenated input for `response` (target plus EOS). Noisy and
/// clean copies of response position i share position id prompt_len + i - 1.
TrainingExample make_training_example(std::span<const Token> prompt,
                                      std::span<const Token> response, std::size_t block_size,
                                      std::span<const std::size_t> suffix_starts);
TrainingExample make_block_noise_example(std::span<const Token> prompt,
                                         std::span<const Token> response,
                                         std::size_t block_size, std::mt19937_64& rng);

struct LossOptions {
  Objective objective = Objective::CSL;
  double tau = 0.95;
  double keep_ratio = 1.0;  // Random only
  bool keep_dlogits = false;
};

struct LossResult {
  double loss = 0.0;
  std::size_t supervised = 0;
  std::size_t masked = 0;
  bool degenerate = false;  // nothing supervised; caller should skip the step
  std::vector<std::vector<SupervisionPlan>> plans;  // per example, per block
  // Per example, 1 at grid rows that entered the loss.
  std::vector<std::vector<std::uint8_t>> loss_mask;
  // Per example d(loss)/d(logits), grid rows x vocab; filled when requested.
  std::vector<std::vector<float>> dlogits;

  double supervised_ratio() const;
};

/// Mean cross-entropy over the positions the objective selects, with the
/// gradient accumulated into `grad` (may be empty to skip backward).
/// Random draws its keep decisions from `rng`; the other objectives ignore it.
LossResult objective_loss(const TinyTransformer& model, const TrainingBatch& batch,
                          const LossOptions& options, std::mt19937_64& rng,
                          std::span<float> grad);

LossResult csl_loss(const TinyTransformer& model, const TrainingBatch& batch, double tau,
                    std::span<float> grad = {});
LossResult ce_loss(const TinyTransformer& model, const TrainingBatch& batch,
                   std::span<float> grad = {});
LossResult random_drop_loss(const TinyTransformer& model, const TrainingBatch& batch,
                            double keep_ratio, std::mt19937_64& rng, std::span<float> grad = {});

class Adam {
 public:
  Adam(std::size_t size, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(std::span<float> params, std::span<const float> grad);
  std::size_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<double> m_, v_;
};

struct TrainConfig {
  GrammarTask task{TaskName::BalancedBrackets};
  ModelConfig model;
  Objective objective = Objective::CSL;
  Corruption corruption = Corruption::Suffix;
  IntraBlock variant = IntraBlock::Causal;
  double tau = 0.95;
  double keep_ratio = 0.5;
  std::size_t block_size = 8;
  std::size_t steps = 1000;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct StepLog {
  std::size_t step = 0;
  Objective objective = Objective::CSL;
  double tau = 0.0;
  double loss = 0.0;
  double supervised_ratio = 0.0;
  bool skipped = false;
};

/// One JSON object, no trailing newline.
std::string to_json_line(const StepLog& log);

struct TrainResult {
  TinyTransformer model;
  std::vector<StepLog> log;
};

/// Trains on freshly sampled task examples. Fully deterministic given the
/// config; `on_step` sees every log entry as it is produced.
TrainResult train(const TrainConfig& config,
                  const std::function<void(const StepLog&)>& on_step = {});

/// Model configuration sized for `task` (positions cover prompt + padded response).
ModelConfig model_config_for(const GrammarTask& task, std::size_t block_size,
                             std::uint64_t seed);

}  // namespace pabdm
