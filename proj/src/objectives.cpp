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

#include "xgrain/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <tuple>

#include "xgrain/errors.hpp"

namespace xgrain::objectives {

Tensor embed_concepts(Tape& tape, const Model& model, const Tensor& v_cls) {
  return ops::l2_normalize(
      tape, ops::linear(tape, v_cls, model.param("head.proj_v.weight"), model.param("head.proj_v.bias")));
}

Tensor embed_texts(Tape& tape, const Model& model, const Tensor& w_cls) {
  return ops::l2_normalize(
      tape, ops::linear(tape, w_cls, model.param("head.proj_w.weight"), model.param("head.proj_w.bias")));
}

Tensor similarity_logits(Tape& tape, const Model& model, const Tensor& concept_emb,
                         const Tensor& text_emb) {
  Tensor s = ops::matmul(tape, concept_emb, ops::transpose(tape, text_emb));
  return ops::div(tape, s, model.param("head.temperature"));
}

void clamp_temperature(Model& model) {
  Tensor& t = model.param("head.temperature");
  t.set(0, std::clamp(t.item(), kTemperatureMin, kTemperatureMax));
}

Tensor multipositive_targets(const std::vector<std::vector<std::int64_t>>& keys, DType dtype) {
  const std::size_t n = keys.size();
  Tensor y = Tensor::zeros({n, n}, dtype);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t count = 0;
    for (std::size_t j = 0; j < n; ++j) count += keys[j] == keys[i];
    for (std::size_t j = 0; j < n; ++j) {
      if (keys[j] == keys[i]) y.set(i * n + j, 1.0 / static_cast<double>(count));
    }
  }
  return y;
}

Tensor contrastive_loss(Tape& tape, const Tensor& logits, const Tensor& targets) {
  if (logits.rank() != 2 || logits.dim(0) != logits.dim(1)) {
    throw DimensionError("contrastive_loss: logits must be square, got " + shape_string(logits.shape()));
  }
  const std::size_t n = logits.dim(0);
  if (n < 2) throw ContractError("contrastive_loss: need at least 2 pairs for in-batch negatives");
  Tensor targets_t = Tensor::zeros({n, n}, targets.dtype());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) targets_t.set(j * n + i, targets.at(i * n + j));
  }
  Tensor v2t = ops::cross_entropy(tape, logits, targets);
  Tensor t2v = ops::cross_entropy(tape, ops::transpose(tape, logits), targets_t);
  return ops::scale(tape, ops::add(tape, v2t, t2v), 0.5);
}

Tensor contrastive_loss(Tape& tape, const Tensor& logits) {
  const std::size_t n = logits.rank() == 2 ? logits.dim(0) : 0;
  Tensor eye = Tensor::zeros({n, n}, logits.dtype());
  for (std::size_t i = 0; i < n; ++i) eye.set(i * n + i, 1.0);
  return contrastive_loss(tape, logits, eye);
}

namespace {

// Draws one index from softmax(scores) restricted to `allowed`; falls back to a uniform
// draw over `allowed` when no allowed score is finite.
std::size_t draw(const std::vector<double>& scores, const std::vector<std::uint8_t>& allowed, Rng& rng) {
  double peak = -std::numeric_limits<double>::infinity();
  std::vector<std::size_t> options;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (!allowed[j]) continue;
    options.push_back(j);
    if (std::isfinite(scores[j])) peak = std::max(peak, scores[j]);
  }
  if (options.empty()) throw ContractError("sample_hard_negatives: no candidate");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (!std::isfinite(peak)) return options[static_cast<std::size_t>(unit(rng) * options.size()) % options.size()];
  std::vector<double> w(scores.size(), 0.0);
  double total = 0;
  for (std::size_t j : options) {
    w[j] = std::isfinite(scores[j]) ? std::exp(scores[j] - peak) : 0.0;
    total += w[j];
  }
  const double u = unit(rng) * total;
  double acc = 0;
  std::size_t last = options.front();
  for (std::size_t j : options) {
    if (w[j] <= 0) continue;
    acc += w[j];
    last = j;
    if (u < acc) return j;
  }
  return last;
}

}  // namespace

HardNegatives sample_hard_negatives(const std::vector<double>& logits, std::size_t n,
                                    const std::vector<std::uint8_t>& positive, Rng& rng) {
  if (n < 2) throw ContractError("sample_hard_negatives: need at least 2 pairs");
  if (logits.size() != n * n) throw DimensionError("sample_hard_negatives: logits size");
  auto is_pos = [&](std::size_t i, std::size_t j) {
    return positive.empty() ? i == j : positive[i * n + j] != 0;
  };
  HardNegatives out;
  std::vector<double> scores(n);
  std::vector<std::uint8_t> allowed(n);
  auto fill_allowed = [&](std::size_t i, bool by_row) {
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) {
      allowed[j] = by_row ? !is_pos(i, j) : !is_pos(j, i);
      any = any || allowed[j];
    }
    // Every candidate is a positive (e.g. all texts identical): any other index.
    if (!any) {
      for (std::size_t j = 0; j < n; ++j) allowed[j] = j != i;
    }
  };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) scores[j] = logits[i * n + j];
    fill_allowed(i, true);
    out.text_for_concept.push_back(draw(scores, allowed, rng));
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) scores[j] = logits[j * n + i];
    fill_allowed(i, false);
    out.concept_for_text.push_back(draw(scores, allowed, rng));
  }
  return out;
}

Tensor match_logits(Tape& tape, const Model& model, const Tensor& x_cls) {
  return ops::linear(tape, x_cls, model.param("head.itm.weight"), model.param("head.itm.bias"));
}

Tensor matching_loss(Tape& tape, const Model& model, const Tensor& x_cls,
                     const std::vector<std::size_t>& labels) {
  return ops::cross_entropy(tape, match_logits(tape, model, x_cls), labels);
}

MaskedText apply_mlm_mask(const std::vector<std::int64_t>& ids, std::size_t vocab_size, Rng& rng,
                          const MlmOptions& options) {
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!Vocabulary::is_special(ids[i])) candidates.push_back(i);
  }
  if (candidates.empty()) throw ContractError("apply_mlm_mask: text has no maskable token");
  if (vocab_size <= static_cast<std::size_t>(Vocabulary::kNumSpecial)) {
    throw ContractError("apply_mlm_mask: vocabulary has no regular tokens");
  }
  MaskedText out{ids, ids, {}};
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t pos : candidates) {
    if (unit(rng) < options.select) out.masked_positions.push_back(pos);
  }
  if (out.masked_positions.empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
    out.masked_positions.push_back(candidates[pick(rng)]);
  }
  std::uniform_int_distribution<std::int64_t> word(Vocabulary::kNumSpecial,
                                                   static_cast<std::int64_t>(vocab_size) - 1);
  for (std::size_t pos : out.masked_positions) {
    const double r = unit(rng);
    if (r < options.mask) {
      out.input_ids[pos] = Vocabulary::kMask;
    } else if (r < options.mask + options.random) {
      out.input_ids[pos] = word(rng);
    }
  }
  return out;
}

Tensor mlm_loss(Tape& tape, const Model& model, const Tensor& fused_tokens,
                const std::vector<std::size_t>& rows, const std::vector<std::int64_t>& targets) {
  if (rows.empty() || rows.size() != targets.size()) {
    throw ContractError("mlm_loss: need one target per masked row");
  }
  Tensor h = ops::gather_rows(tape, fused_tokens, rows);
  Tensor logits = ops::linear(tape, h, model.param("head.mlm.weight"), model.param("head.mlm.bias"));
  std::vector<std::size_t> t(targets.begin(), targets.end());
  return ops::cross_entropy(tape, logits, t);
}

Tensor boxes_tensor(const std::vector<NormBox>& boxes, DType dtype) {
  std::vector<double> v;
  v.reserve(boxes.size() * 4);
  for (const auto& b : boxes) v.insert(v.end(), {b.cx, b.cy, b.w, b.h});
  return Tensor::from_values(v, {boxes.size(), 4}, dtype);
}

Tensor loss_bbox(Tape& tape, const Tensor& pred, const Tensor& target) {
  if (pred.rank() != 2 || pred.dim(1) != 4 || pred.shape() != target.shape()) {
    throw DimensionError("loss_bbox: expected matching [n, 4], got " + shape_string(pred.shape()) +
                         " and " + shape_string(target.shape()));
  }
  struct Corners {
    Tensor w, h, x1, y1, x2, y2;
  };
  auto corners = [&](const Tensor& b) {
    Corners c;
    Tensor cx = ops::slice(tape, b, 1, 0, 1);
    Tensor cy = ops::slice(tape, b, 1, 1, 1);
    c.w = ops::clamp_min(tape, ops::slice(tape, b, 1, 2, 1), 1e-6);
    c.h = ops::clamp_min(tape, ops::slice(tape, b, 1, 3, 1), 1e-6);
    Tensor hw = ops::scale(tape, c.w, 0.5);
    Tensor hh = ops::scale(tape, c.h, 0.5);
    c.x1 = ops::sub(tape, cx, hw);
    c.x2 = ops::add(tape, cx, hw);
    c.y1 = ops::sub(tape, cy, hh);
    c.y2 = ops::add(tape, cy, hh);
    return c;
  };
  const Corners p = corners(pred);
  const Corners t = corners(target);
  Tensor iw = ops::clamp_min(tape, ops::sub(tape, ops::minimum(tape, p.x2, t.x2), ops::maximum(tape, p.x1, t.x1)), 0.0);
  Tensor ih = ops::clamp_min(tape, ops::sub(tape, ops::minimum(tape, p.y2, t.y2), ops::maximum(tape, p.y1, t.y1)), 0.0);
  Tensor inter = ops::mul(tape, iw, ih);
  Tensor uni = ops::sub(tape, ops::add(tape, ops::mul(tape, p.w, p.h), ops::mul(tape, t.w, t.h)), inter);
  Tensor iou = ops::div(tape, inter, uni);
  Tensor cw = ops::sub(tape, ops::maximum(tape, p.x2, t.x2), ops::minimum(tape, p.x1, t.x1));
  Tensor ch = ops::sub(tape, ops::maximum(tape, p.y2, t.y2), ops::minimum(tape, p.y1, t.y1));
  Tensor enclose = ops::mul(tape, cw, ch);
  Tensor giou = ops::sub(tape, iou, ops::div(tape, ops::sub(tape, enclose, uni), enclose));
  giou = ops::reshape(tape, giou, {pred.dim(0)});
  Tensor l1 = ops::sum_axis(tape, ops::abs(tape, ops::sub(tape, pred, target)), 1);
  Tensor rows = ops::add(tape, ops::add_scalar(tape, ops::neg(tape, giou), 1.0), l1);
  return ops::mean(tape, rows);
}

LossReport total_loss(Tape& tape, const Model& model, const ObjectiveBatch& batch, Rng& rng,
                      const LossOptions& options) {
  const std::size_t n = batch.pairs.size();
  if (n == 0) throw ContractError("total_loss: batch has no pairs");
  if (n < 2) throw ContractError("total_loss: need at least 2 pairs for in-batch negatives");
  const DType dtype = model.dtype();

  // Distinct concepts: one whole-image concept per image plus every annotated box.
  std::vector<ConceptRef> refs;
  std::map<std::tuple<std::size_t, double, double, double, double>, std::size_t> ref_index;
  auto concept_of = [&](std::size_t image, const NormBox& box) {
    const auto key = std::make_tuple(image, box.cx, box.cy, box.w, box.h);
    auto [it, fresh] = ref_index.emplace(key, refs.size());
    if (fresh) refs.push_back({image, box});
    return it->second;
  };
  std::vector<std::size_t> whole(batch.images.size());
  for (std::size_t i = 0; i < batch.images.size(); ++i) whole[i] = concept_of(i, NormBox::whole_image());
  std::vector<std::size_t> pair_concept(n);
  for (std::size_t i = 0; i < n; ++i) {
    const TrainPair& p = batch.pairs[i];
    if (p.image >= batch.images.size()) throw ContractError("total_loss: pair image out of range");
    pair_concept[i] = concept_of(p.image, p.box);
  }

  // Distinct texts, then one masked copy per pair.
  std::vector<std::vector<std::int64_t>> texts;
  std::map<std::vector<std::int64_t>, std::size_t> text_index;
  std::vector<std::size_t> pair_text(n);
  std::vector<std::vector<std::int64_t>> keys(n);
  for (std::size_t i = 0; i < n; ++i) {
    keys[i] = batch.pairs[i].ids;
    auto [it, fresh] = text_index.emplace(keys[i], texts.size());
    if (fresh) texts.push_back(keys[i]);
    pair_text[i] = it->second;
  }
  const std::size_t masked_base = texts.size();
  std::vector<MaskedText> masked;
  for (std::size_t i = 0; i < n; ++i) {
    masked.push_back(apply_mlm_mask(batch.pairs[i].ids, model.config().vocab_size, rng, options.mlm));
    texts.push_back(masked.back().input_ids);
  }

  const VisionBatch vision = model.encode_images(tape, batch.images);
  const ConceptBank bank = model.build_concepts(tape, vision, refs);
  const TextBatch encoded = model.encode_texts(tape, texts);
  const Tensor text_cls = encoded.cls(tape);

  // Contrastive over all pairs in one pool.
  Tensor ev = embed_concepts(tape, model, ops::gather_rows(tape, bank.means, pair_concept));
  Tensor et = embed_texts(tape, model, ops::gather_rows(tape, text_cls, pair_text));
  Tensor logits = similarity_logits(tape, model, ev, et);
  const Tensor targets = multipositive_targets(keys, dtype);
  Tensor l_cl = contrastive_loss(tape, logits, targets);

  std::vector<std::uint8_t> positive(n * n);
  for (std::size_t i = 0; i < n * n; ++i) positive[i] = targets.at(i) > 0;
  const HardNegatives neg = sample_hard_negatives(logits.to_vector(), n, positive, rng);

  std::vector<FusionPair> pairs;
  for (std::size_t i = 0; i < n; ++i) pairs.push_back({pair_text[i], pair_concept[i]});
  for (std::size_t i = 0; i < n; ++i) pairs.push_back({pair_text[neg.text_for_concept[i]], pair_concept[i]});
  for (std::size_t i = 0; i < n; ++i) pairs.push_back({pair_text[i], pair_concept[neg.concept_for_text[i]]});
  for (std::size_t i = 0; i < n; ++i) pairs.push_back({masked_base + i, pair_concept[i]});
  // Box prediction conditions on the whole image; caption pairs reuse their positive fusion.
  std::vector<std::size_t> box_rows;
  std::vector<NormBox> box_targets;
  if (options.bbox_loss) {
    for (std::size_t i = 0; i < n; ++i) {
      const TrainPair& p = batch.pairs[i];
      if (pair_concept[i] == whole[p.image]) {
        box_rows.push_back(i);
      } else {
        box_rows.push_back(pairs.size());
        pairs.push_back({pair_text[i], whole[p.image]});
      }
      box_targets.push_back(p.box);
    }
  }
  const FusionBatch fused = model.fuse(tape, encoded, bank, pairs);
  const Tensor x_cls = fused.cls(tape);

  std::vector<std::size_t> labels(3 * n, kNonMatch);
  std::fill(labels.begin(), labels.begin() + n, kMatch);
  Tensor l_match = matching_loss(tape, model, ops::slice(tape, x_cls, 0, 0, 3 * n), labels);

  std::vector<std::size_t> mlm_rows;
  std::vector<std::int64_t> mlm_targets;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t pos : masked[i].masked_positions) {
      mlm_rows.push_back(fused.begin[3 * n + i] + pos);
      mlm_targets.push_back(masked[i].original_ids[pos]);
    }
  }
  Tensor l_mlm = mlm_loss(tape, model, fused.tokens, mlm_rows, mlm_targets);

  LossReport report;
  Tensor total = ops::add(tape, ops::add(tape, l_cl, l_match), l_mlm);
  if (options.bbox_loss) {
    Tensor pred = model.box_head(tape, ops::gather_rows(tape, x_cls, box_rows));
    Tensor l_bbox = loss_bbox(tape, pred, boxes_tensor(box_targets, dtype));
    report.l_bbox = l_bbox.item();
    total = ops::add(tape, l_bbox, total);
  }
  report.l_cl = l_cl.item();
  report.l_match = l_match.item();
  report.l_mlm = l_mlm.item();
  report.total = total.item();
  report.loss = total;
  return report;
}

}  // namespace xgrain::objectives
