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
#include <random>
#include <vector>

#include "xgrain/autograd.hpp"
#include "xgrain/data.hpp"
#include "xgrain/model.hpp"

namespace xgrain::objectives {

using Rng = std::mt19937_64;

inline constexpr double kTemperatureMin = 5e-3;
inline constexpr double kTemperatureMax = 1.0;
inline constexpr std::size_t kMatch = 1;
inline constexpr std::size_t kNonMatch = 0;

// Similarity head.
Tensor embed_concepts(Tape& tape, const Model& model, const Tensor& v_cls);
Tensor embed_texts(Tape& tape, const Model& model, const Tensor& w_cls);
/// s(V, T) / tau as an [N, N] matrix over unit-norm embeddings.
Tensor similarity_logits(Tape& tape, const Model& model, const Tensor& concept_emb,
                         const Tensor& text_emb);
void clamp_temperature(Model& model);

/// Rows put 1/#positives on every column whose key equals the row's key.
Tensor multipositive_targets(const std::vector<std::vector<std::int64_t>>& keys, DType dtype);

/// Half the sum of vision-to-text and text-to-vision cross-entropies.
Tensor contrastive_loss(Tape& tape, const Tensor& logits, const Tensor& targets);
/// One-hot index-aligned targets.
Tensor contrastive_loss(Tape& tape, const Tensor& logits);

struct HardNegatives {
  std::vector<std::size_t> text_for_concept;
  std::vector<std::size_t> concept_for_text;
};

/// `logits` is a row-major N x N similarity matrix (already divided by tau). `positive`
/// marks pairs that must never be drawn; empty means the diagonal.
HardNegatives sample_hard_negatives(const std::vector<double>& logits, std::size_t n,
                                    const std::vector<std::uint8_t>& positive, Rng& rng);

/// Mean 2-way cross-entropy of the matching head over fused [CLS] rows.
Tensor match_logits(Tape& tape, const Model& model, const Tensor& x_cls);
Tensor matching_loss(Tape& tape, const Model& model, const Tensor& x_cls,
                     const std::vector<std::size_t>& labels);

struct MlmOptions {
  double select = 0.25;
  double mask = 0.80;
  double random = 0.10;
};

struct MaskedText {
  std::vector<std::int64_t> input_ids;
  std::vector<std::int64_t> original_ids;
  std::vector<std::size_t> masked_positions;
};

MaskedText apply_mlm_mask(const std::vector<std::int64_t>& ids, std::size_t vocab_size, Rng& rng,
                          const MlmOptions& options = {});

/// Cross-entropy of the MLM head at `rows` of `fused_tokens` against `targets`.
Tensor mlm_loss(Tape& tape, const Model& model, const Tensor& fused_tokens,
                const std::vector<std::size_t>& rows, const std::vector<std::int64_t>& targets);

/// Mean over rows of (1 - GIoU) + L1; `pred` and `target` are [n, 4] (cx, cy, w, h).
Tensor loss_bbox(Tape& tape, const Tensor& pred, const Tensor& target);
/// Boxes as a [n, 4] constant tensor.
Tensor boxes_tensor(const std::vector<NormBox>& boxes, DType dtype);

enum class PairKind { caption, object, region };

/// One (V, T) pair: the concept is `box` inside image `image`.
struct TrainPair {
  std::size_t image = 0;
  NormBox box = NormBox::whole_image();
  std::vector<std::int64_t> ids;
  PairKind kind = PairKind::caption;
  std::string record_id;
};

struct ObjectiveBatch {
  std::vector<const Image*> images;
  std::vector<TrainPair> pairs;
};

struct LossOptions {
  bool bbox_loss = true;
  MlmOptions mlm;
};

struct LossReport {
  double l_bbox = 0;
  double l_cl = 0;
  double l_match = 0;
  double l_mlm = 0;
  double total = 0;
  Tensor loss;  // differentiable total
};

LossReport total_loss(Tape& tape, const Model& model, const ObjectiveBatch& batch, Rng& rng,
                      const LossOptions& options = {});

}  // namespace xgrain::objectives
