// Copyright 2026 The xgrain Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "xgrain/data.hpp"
#include "xgrain/model.hpp"
#include "xgrain/objectives.hpp"

namespace xgrain::training {

struct Schedule {
  double lr_start = 5e-5;
  double lr_peak = 5e-4;
  double lr_end = 5e-5;
  std::size_t warmup_steps = 300;
  std::size_t total_steps = 3000;
};

double lr_at(std::size_t step, const Schedule& schedule);

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.02;
};

struct OptimizerState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
};

/// Global L2 norm of all gradients; scales them down to `max_norm` when above it.
double clip_grad_norm(std::vector<NamedParameter>& params, double max_norm);

/// AdamW with decoupled decay on parameters flagged `decay`. Returns false and leaves
/// parameters and state untouched when any gradient is non-finite.
bool optimizer_step(std::vector<NamedParameter>& params, OptimizerState& state, double lr,
                    const AdamWOptions& options = {});

void save_optimizer(const std::filesystem::path& path, const OptimizerState& state);
OptimizerState load_optimizer(const std::filesystem::path& path);

struct AblationFlags {
  bool no_object = false;
  bool no_region = false;
  bool no_bbox_loss = false;
};

/// Tokenized view of a dataset used for batch assembly.
struct PreparedDataset {
  const Dataset* samples = nullptr;
  std::vector<std::size_t> annotated;
  std::vector<std::size_t> caption_only;
  std::vector<std::optional<std::vector<std::int64_t>>> caption_ids;
  std::vector<std::vector<std::vector<std::int64_t>>> concept_ids;
};

PreparedDataset prepare(const Dataset& dataset, const Vocabulary& vocab, std::size_t max_text_len);

struct TrainBatch {
  std::vector<std::size_t> samples;  // dataset indices, one per image slot
  objectives::ObjectiveBatch batch;
  std::size_t annotated_images = 0;
};

TrainBatch assemble_batch(const PreparedDataset& data, std::size_t batch_size,
                          const AblationFlags& flags, objectives::Rng& rng);

struct TrainConfig {
  ModelConfig model;
  Schedule schedule;
  AdamWOptions adamw;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double grad_clip = 1.0;
  std::size_t checkpoint_every = 0;  // 0 saves only at the end
  DType dtype = DType::f32;
  /// Set when warmup_steps was not given explicitly; warmup becomes 10% of total_steps.
  bool auto_warmup = true;
  /// Stops after this many completed steps without changing the schedule; 0 runs to total_steps.
  std::size_t stop_after = 0;

  /// Returns false for unknown keys; throws ConfigError for bad values.
  bool set(const std::string& key, const std::string& value);
  KeyValues to_key_values() const;
  void finalize();
};

TrainConfig load_train_config(const std::filesystem::path& path);

/// Per-step generator derived from (seed, step) so resumed runs draw identically.
objectives::Rng step_rng(std::uint64_t seed, std::uint64_t step, std::uint64_t stream = 0);

struct StepMetrics {
  std::size_t step = 0;
  double lr = 0;
  double l_bbox = 0, l_cl = 0, l_match = 0, l_mlm = 0, total = 0;
};

std::string metrics_line(const StepMetrics& m);

/// Thrown when the total loss becomes non-finite.
class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  std::vector<StepMetrics> metrics;
  std::size_t final_step = 0;
  std::optional<Model> model;
};

/// Trains from scratch, or from `resume` (a checkpoint directory). Writes metrics.jsonl,
/// config.txt and checkpoint/ under `out`.
TrainResult train(const TrainConfig& config, const Dataset& dataset, const Vocabulary& vocab,
                  const AblationFlags& flags, const std::filesystem::path& out,
                  const std::optional<std::filesystem::path>& resume = std::nullopt);

}  // namespace xgrain::training
