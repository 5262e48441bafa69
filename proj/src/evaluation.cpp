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

#include "xgrain/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "xgrain/errors.hpp"
#include "xgrain/log.hpp"
#include "xgrain/objectives.hpp"

namespace xgrain::evaluation {
namespace {

constexpr std::size_t kImageChunk = 64;
constexpr std::size_t kPairChunk = 256;

std::vector<double> rows_of(const Tensor& t) { return t.to_vector(); }

// Encodes the listed (image, text) pairs and fuses each text with its whole image.
struct FusedChunk {
  FusionBatch fused;
  Tensor x_cls;
};

FusedChunk fuse_pairs(Tape& tape, const Model& model, const std::vector<const Image*>& images,
                      const std::vector<std::vector<std::int64_t>>& texts,
                      std::span<const std::pair<std::size_t, std::size_t>> pairs) {
  std::map<std::size_t, std::size_t> image_slot, text_slot;
  std::vector<const Image*> imgs;
  std::vector<std::vector<std::int64_t>> txts;
  std::vector<FusionPair> fp;
  for (const auto& [i, t] : pairs) {
    auto [ii, fresh_i] = image_slot.emplace(i, imgs.size());
    if (fresh_i) imgs.push_back(images.at(i));
    auto [ti, fresh_t] = text_slot.emplace(t, txts.size());
    if (fresh_t) txts.push_back(texts.at(t));
    fp.push_back({ti->second, ii->second});
  }
  const VisionBatch vision = model.encode_images(tape, imgs);
  std::vector<ConceptRef> refs;
  for (std::size_t i = 0; i < imgs.size(); ++i) refs.push_back({i, NormBox::whole_image()});
  const ConceptBank bank = model.build_concepts(tape, vision, refs);
  const TextBatch tb = model.encode_texts(tape, txts);
  FusedChunk out{model.fuse(tape, tb, bank, fp), {}};
  out.x_cls = out.fused.cls(tape);
  return out;
}

std::vector<std::size_t> stage_one(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace

SimilarityMatrix similarity_matrix(const Model& model, const std::vector<const Image*>& images,
                                   const std::vector<std::vector<std::int64_t>>& texts) {
  const Model frozen = model.clone(false);
  const std::size_t p = model.config().projection_dim;
  std::vector<double> ev, et;
  for (std::size_t b = 0; b < images.size(); b += kImageChunk) {
    Tape tape;
    const std::vector<const Image*> chunk(images.begin() + b,
                                          images.begin() + std::min(images.size(), b + kImageChunk));
    const VisionBatch vision = frozen.encode_images(tape, chunk);
    std::vector<ConceptRef> refs;
    for (std::size_t i = 0; i < chunk.size(); ++i) refs.push_back({i, NormBox::whole_image()});
    const ConceptBank bank = frozen.build_concepts(tape, vision, refs);
    const auto v = rows_of(objectives::embed_concepts(tape, frozen, bank.means));
    ev.insert(ev.end(), v.begin(), v.end());
  }
  for (std::size_t b = 0; b < texts.size(); b += kPairChunk) {
    Tape tape;
    const std::vector<std::vector<std::int64_t>> chunk(
        texts.begin() + b, texts.begin() + std::min(texts.size(), b + kPairChunk));
    const TextBatch tb = frozen.encode_texts(tape, chunk);
    const auto v = rows_of(objectives::embed_texts(tape, frozen, tb.cls(tape)));
    et.insert(et.end(), v.begin(), v.end());
  }
  SimilarityMatrix sim{images.size(), texts.size(), std::vector<double>(images.size() * texts.size())};
  for (std::size_t i = 0; i < images.size(); ++i) {
    for (std::size_t t = 0; t < texts.size(); ++t) {
      double acc = 0;
      for (std::size_t c = 0; c < p; ++c) acc += ev[i * p + c] * et[t * p + c];
      sim.values[i * texts.size() + t] = acc;
    }
  }
  return sim;
}

std::vector<double> match_probabilities(const Model& model, const std::vector<const Image*>& images,
                                        const std::vector<std::vector<std::int64_t>>& texts,
                                        const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  const Model frozen = model.clone(false);
  std::vector<double> out;
  out.reserve(pairs.size());
  for (std::size_t b = 0; b < pairs.size(); b += kPairChunk) {
    Tape tape;
    const auto chunk = std::span(pairs).subspan(b, std::min(kPairChunk, pairs.size() - b));
    const FusedChunk fc = fuse_pairs(tape, frozen, images, texts, chunk);
    const auto logits = objectives::match_logits(tape, frozen, fc.x_cls).to_vector();
    for (std::size_t r = 0; r < chunk.size(); ++r) {
      const double z0 = logits[2 * r + objectives::kNonMatch];
      const double z1 = logits[2 * r + objectives::kMatch];
      out.push_back(1.0 / (1.0 + std::exp(z0 - z1)));
    }
  }
  return out;
}

Recall recall_at(const std::vector<std::vector<std::size_t>>& rankings,
                 const std::vector<std::vector<std::size_t>>& relevant) {
  Recall r;
  if (rankings.empty()) return r;
  for (std::size_t q = 0; q < rankings.size(); ++q) {
    const std::set<std::size_t> gold(relevant[q].begin(), relevant[q].end());
    std::size_t first = rankings[q].size();
    for (std::size_t pos = 0; pos < rankings[q].size(); ++pos) {
      if (gold.count(rankings[q][pos])) {
        first = pos;
        break;
      }
    }
    r.r1 += first < 1;
    r.r5 += first < 5;
    r.r10 += first < 10;
  }
  const double n = static_cast<double>(rankings.size());
  r.r1 /= n;
  r.r5 /= n;
  r.r10 /= n;
  return r;
}

RetrievalResult rank_two_stage(const SimilarityMatrix& sim,
                               const std::vector<std::vector<std::size_t>>& relevant,
                               std::size_t k,
                               const std::function<std::vector<double>(
                                   const std::vector<std::pair<std::size_t, std::size_t>>&)>& rerank) {
  if (relevant.size() != sim.images) throw ContractError("rank_two_stage: relevance list size");
  RetrievalResult res;
  res.k = k;
  // Stage 1 in both directions.
  for (std::size_t i = 0; i < sim.images; ++i) {
    std::vector<double> row(sim.texts);
    for (std::size_t t = 0; t < sim.texts; ++t) row[t] = sim.at(i, t);
    res.text_ranking.push_back(stage_one(row));
  }
  for (std::size_t t = 0; t < sim.texts; ++t) {
    std::vector<double> col(sim.images);
    for (std::size_t i = 0; i < sim.images; ++i) col[i] = sim.at(i, t);
    res.image_ranking.push_back(stage_one(col));
  }
  // Stage 2: one batched matching pass over every top-k pair.
  std::map<std::pair<std::size_t, std::size_t>, double> p_match;
  std::vector<std::pair<std::size_t, std::size_t>> wanted;
  auto want = [&](std::size_t i, std::size_t t) {
    if (p_match.emplace(std::make_pair(i, t), 0.0).second) wanted.emplace_back(i, t);
  };
  const std::size_t kt = std::min(k, sim.texts);
  const std::size_t ki = std::min(k, sim.images);
  for (std::size_t i = 0; i < sim.images; ++i) {
    for (std::size_t r = 0; r < kt; ++r) want(i, res.text_ranking[i][r]);
  }
  for (std::size_t t = 0; t < sim.texts; ++t) {
    for (std::size_t r = 0; r < ki; ++r) want(res.image_ranking[t][r], t);
  }
  if (!wanted.empty()) {
    const std::vector<double> probs = rerank(wanted);
    for (std::size_t w = 0; w < wanted.size(); ++w) p_match[wanted[w]] = probs[w];
  }
  // Equal matching scores keep their stage-1 order.
  for (std::size_t i = 0; i < sim.images; ++i) {
    auto& rank = res.text_ranking[i];
    std::stable_sort(rank.begin(), rank.begin() + static_cast<std::ptrdiff_t>(kt),
                     [&](std::size_t a, std::size_t b) {
                       return p_match[{i, a}] > p_match[{i, b}];
                     });
  }
  for (std::size_t t = 0; t < sim.texts; ++t) {
    auto& rank = res.image_ranking[t];
    std::stable_sort(rank.begin(), rank.begin() + static_cast<std::ptrdiff_t>(ki),
                     [&](std::size_t a, std::size_t b) {
                       return p_match[{a, t}] > p_match[{b, t}];
                     });
  }
  std::vector<std::vector<std::size_t>> relevant_images(sim.texts);
  for (std::size_t i = 0; i < sim.images; ++i) {
    for (std::size_t t : relevant[i]) relevant_images.at(t).push_back(i);
  }
  res.text_retrieval = recall_at(res.text_ranking, relevant);
  res.image_retrieval = recall_at(res.image_ranking, relevant_images);
  double chance = 0;
  for (const auto& r : relevant_images) chance += static_cast<double>(r.size()) / static_cast<double>(sim.images);
  res.image_retrieval_chance_r1 = sim.texts ? chance / static_cast<double>(sim.texts) : 0.0;
  return res;
}

RetrievalResult retrieve(const Model& model, const std::vector<const Image*>& images,
                         const std::vector<std::vector<std::int64_t>>& texts,
                         const std::vector<std::vector<std::size_t>>& relevant, std::size_t k) {
  if (k < 10) log_warn("retrieval k < 10; Recall@10 uses stage-1 order beyond k");
  const SimilarityMatrix sim = similarity_matrix(model, images, texts);
  return rank_two_stage(sim, relevant, k, [&](const auto& pairs) {
    return match_probabilities(model, images, texts, pairs);
  });
}

CaptionGallery caption_gallery(const Dataset& samples, const Vocabulary& vocab, std::size_t max_len,
                               std::size_t limit) {
  CaptionGallery g;
  std::vector<std::string> captions;
  for (const Sample& s : samples) {
    if (limit > 0 && g.images.size() == limit) break;
    if (!s.record.caption) continue;
    g.images.push_back(&s.image);
    g.texts.push_back(vocab.encode(*s.record.caption, max_len));
    captions.push_back(*s.record.caption);
  }
  g.relevant.resize(captions.size());
  for (std::size_t i = 0; i < captions.size(); ++i) {
    for (std::size_t t = 0; t < captions.size(); ++t) {
      if (captions[i] == captions[t]) g.relevant[i].push_back(t);
    }
  }
  return g;
}

std::vector<GroundingItem> grounding_items(const Dataset& samples, const Vocabulary& vocab,
                                           std::size_t max_len) {
  std::vector<GroundingItem> items;
  for (const Sample& s : samples) {
    for (const auto& c : s.record.concepts) {
      items.push_back({&s.image, vocab.encode(c.text, max_len), c.box, s.record.image_id, c.text});
    }
  }
  return items;
}

std::vector<NormBox> predict_boxes(const Model& model, const std::vector<GroundingItem>& items) {
  const Model frozen = model.clone(false);
  std::vector<const Image*> images;
  std::vector<std::vector<std::int64_t>> texts;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < items.size(); ++i) {
    images.push_back(items[i].image);
    texts.push_back(items[i].ids);
    pairs.emplace_back(i, i);
  }
  std::vector<NormBox> out;
  for (std::size_t b = 0; b < pairs.size(); b += kPairChunk) {
    Tape tape;
    const auto chunk = std::span(pairs).subspan(b, std::min(kPairChunk, pairs.size() - b));
    const FusedChunk fc = fuse_pairs(tape, frozen, images, texts, chunk);
    const auto v = frozen.box_head(tape, fc.x_cls).to_vector();
    for (std::size_t r = 0; r < chunk.size(); ++r) {
      out.push_back({v[4 * r], v[4 * r + 1], v[4 * r + 2], v[4 * r + 3]});
    }
  }
  return out;
}

std::vector<GroundingPrediction> ground(const Model& model, const std::vector<GroundingItem>& items,
                                        double threshold) {
  const std::vector<NormBox> boxes = predict_boxes(model, items);
  std::vector<GroundingPrediction> out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const NormBox& b = boxes[i];
    // The head may place part of a box outside the image; score the visible part.
    const NormBox clipped = NormBox::from_corners(std::clamp(b.x1(), 0.0, 1.0), std::clamp(b.y1(), 0.0, 1.0),
                                                  std::clamp(b.x2(), 0.0, 1.0), std::clamp(b.y2(), 0.0, 1.0));
    GroundingPrediction g{b, 0.0, false};
    if (clipped.w > 0 && clipped.h > 0) g.iou = iou(clipped, items[i].gold);
    g.hit = g.iou >= threshold;
    out.push_back(g);
  }
  return out;
}

MlmAccuracy mlm_accuracy(const Model& model, const std::vector<const Image*>& images,
                         const std::vector<std::vector<std::int64_t>>& captions,
                         const std::vector<std::vector<std::int64_t>>& training_texts,
                         std::uint64_t seed) {
  if (images.size() != captions.size()) throw ContractError("mlm_accuracy: one caption per image");
  std::map<std::int64_t, std::size_t> freq;
  for (const auto& t : training_texts) {
    for (auto id : t) {
      if (!Vocabulary::is_special(id)) ++freq[id];
    }
  }
  MlmAccuracy acc;
  std::size_t best = 0;
  for (const auto& [id, c] : freq) {
    if (c > best) {
      best = c;
      acc.unigram_token = id;
    }
  }
  const Model frozen = model.clone(false);
  objectives::Rng rng(seed);
  std::vector<objectives::MaskedText> masked;
  std::vector<std::vector<std::int64_t>> inputs;
  for (const auto& c : captions) {
    masked.push_back(objectives::apply_mlm_mask(c, frozen.config().vocab_size, rng));
    inputs.push_back(masked.back().input_ids);
  }
  std::size_t correct = 0, baseline = 0;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < captions.size(); ++i) pairs.emplace_back(i, i);
  for (std::size_t b = 0; b < pairs.size(); b += kPairChunk) {
    Tape tape;
    const auto chunk = std::span(pairs).subspan(b, std::min(kPairChunk, pairs.size() - b));
    const FusedChunk fc = fuse_pairs(tape, frozen, images, inputs, chunk);
    std::vector<std::size_t> rows;
    std::vector<std::int64_t> targets;
    for (std::size_t r = 0; r < chunk.size(); ++r) {
      const auto& m = masked[b + r];
      for (std::size_t pos : m.masked_positions) {
        rows.push_back(fc.fused.begin[r] + pos);
        targets.push_back(m.original_ids[pos]);
      }
    }
    Tensor h = ops::gather_rows(tape, fc.fused.tokens, rows);
    const auto logits =
        ops::linear(tape, h, frozen.param("head.mlm.weight"), frozen.param("head.mlm.bias")).to_vector();
    const std::size_t v = frozen.config().vocab_size;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto first = logits.begin() + static_cast<std::ptrdiff_t>(r * v);
      const auto pred = std::max_element(first, first + static_cast<std::ptrdiff_t>(v)) - first;
      correct += pred == targets[r];
      baseline += targets[r] == acc.unigram_token;
    }
    acc.masked += rows.size();
  }
  if (acc.masked > 0) {
    acc.accuracy = static_cast<double>(correct) / static_cast<double>(acc.masked);
    acc.unigram_baseline = static_cast<double>(baseline) / static_cast<double>(acc.masked);
  }
  return acc;
}

std::size_t HeatMap::argmax() const {
  return static_cast<std::size_t>(std::max_element(cells.begin(), cells.end()) - cells.begin());
}

std::size_t default_heatmap_layer(const ModelConfig& config) {
  // Word rows of the last layer's cross-attention never reach x_cls, so their
  // gradient is zero there; stop one layer short.
  if (config.fusion_layers < 2) return 0;
  return std::min<std::size_t>(3, config.fusion_layers - 2);
}

std::vector<HeatMap> heatmaps(const Model& model, const Image& image,
                              const std::vector<std::int64_t>& ids, std::size_t layer,
                              const Vocabulary* vocab) {
  if (layer >= model.config().fusion_layers) {
    throw ContractError("heatmaps: layer " + std::to_string(layer) + " outside the " +
                        std::to_string(model.config().fusion_layers) + " fusion layers");
  }
  const Model work = model.clone(true);
  Tape tape;
  const Image* img = &image;
  const VisionBatch vision = work.encode_images(tape, std::span<const Image* const>(&img, 1));
  const ConceptRef ref{0, NormBox::whole_image()};
  const ConceptBank bank = work.build_concepts(tape, vision, std::span<const ConceptRef>(&ref, 1));
  const TextBatch tb = work.encode_texts(tape, {ids});
  const FusionPair pair{0, 0};
  const FusionBatch fused = work.fuse(tape, tb, bank, std::span<const FusionPair>(&pair, 1));
  Tensor logits = objectives::match_logits(tape, work, fused.cls(tape));
  // Matching score: the log-odds of the match class.
  Tensor score = ops::sub(tape, ops::slice(tape, logits, 1, objectives::kMatch, 1),
                          ops::slice(tape, logits, 1, objectives::kNonMatch, 1));
  score = ops::sum(tape, score);
  tape.backward(score);

  const Tensor& probs = fused.cross_probs[layer];
  const auto& layout = *fused.cross_layouts[layer];
  const std::vector<double> p = probs.to_vector();
  const std::vector<double> g = probs.has_grad() ? probs.grad_vector() : std::vector<double>(p.size(), 0.0);
  const PatchGrid grid = vision.grid;
  const PatchSet& cells = bank.patch_sets[0];
  const std::size_t heads = layout.heads();
  std::vector<HeatMap> out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (Vocabulary::is_special(ids[i])) continue;
    HeatMap m;
    m.word_index = i;
    m.word = vocab ? vocab->token(ids[i]) : std::to_string(ids[i]);
    m.layer = layer;
    m.grid = grid;
    m.cells.assign(grid.count(), 0.0);
    for (std::size_t j = 1; j <= cells.size(); ++j) {
      double acc = 0;
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t at = layout.prob_index(0, h, i, j);
        acc += std::max(0.0, g[at] * p[at]);
      }
      m.cells[cells[j - 1]] = acc / static_cast<double>(heads);
    }
    const double peak = *std::max_element(m.cells.begin(), m.cells.end());
    if (peak > 0) {
      for (double& c : m.cells) c /= peak;
    }
    out.push_back(std::move(m));
  }
  return out;
}

Image overlay(const Image& image, const HeatMap& map) {
  Image out = image;
  const std::size_t cell_w = image.width / map.grid.grid_w;
  const std::size_t cell_h = image.height / map.grid.grid_h;
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      const std::size_t cell = std::min(y / cell_h, map.grid.grid_h - 1) * map.grid.grid_w +
                               std::min(x / cell_w, map.grid.grid_w - 1);
      const double a = 0.65 * map.cells[cell];
      const double tint[3] = {255.0, 0.0, 0.0};
      for (std::size_t c = 0; c < 3; ++c) {
        out.at(x, y, c) = static_cast<std::uint8_t>(
            std::lround((1.0 - a) * image.at(x, y, c) + a * tint[c]));
      }
    }
  }
  return out;
}

nlohmann::json to_json(const RetrievalResult& r) {
  auto rec = [](const Recall& x) { return nlohmann::json{{"r1", x.r1}, {"r5", x.r5}, {"r10", x.r10}}; };
  return {{"k", r.k},
          {"text_retrieval", rec(r.text_retrieval)},
          {"image_retrieval", rec(r.image_retrieval)},
          {"image_retrieval_chance_r1", r.image_retrieval_chance_r1},
          {"images", r.text_ranking.size()},
          {"texts", r.image_ranking.size()}};
}

}  // namespace xgrain::evaluation
