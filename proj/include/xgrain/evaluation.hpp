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
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "xgrain/data.hpp"
#include "xgrain/model.hpp"

namespace xgrain::evaluation {

/// Row-major images x texts matrix of s(I, T).
struct SimilarityMatrix {
  std::size_t images = 0;
  std::size_t texts = 0;
  std::vector<double> values;
  double at(std::size_t i, std::size_t t) const { return values[i * texts + t]; }
};

SimilarityMatrix similarity_matrix(const Model& model, const std::vector<const Image*>& images,
                                   const std::vector<std::vector<std::int64_t>>& texts);

/// Matching probability p_match for each (image, text) pair.
std::vector<double> match_probabilities(const Model& model, const std::vector<const Image*>& images,
                                        const std::vector<std::vector<std::int64_t>>& texts,
                                        const std::vector<std::pair<std::size_t, std::size_t>>& pairs);

struct Recall {
  double r1 = 0, r5 = 0, r10 = 0;
};

struct RetrievalResult {
  std::vector<std::vector<std::size_t>> text_ranking;   // per image query
  std::vector<std::vector<std::size_t>> image_ranking;  // per text query
  Recall text_retrieval;                                // image -> text
  Recall image_retrieval;                               // text -> image
  double image_retrieval_chance_r1 = 0;
  std::size_t k = 0;
};

/// Stage 1 ranks by cosine similarity (ties by candidate id); stage 2 re-ranks the top k
/// by matching probability. `relevant[i]` lists the texts that describe image i.
RetrievalResult rank_two_stage(const SimilarityMatrix& sim,
                               const std::vector<std::vector<std::size_t>>& relevant,
                               std::size_t k,
                               const std::function<std::vector<double>(
                                   const std::vector<std::pair<std::size_t, std::size_t>>&)>& rerank);

RetrievalResult retrieve(const Model& model, const std::vector<const Image*>& images,
                         const std::vector<std::vector<std::int64_t>>& texts,
                         const std::vector<std::vector<std::size_t>>& relevant, std::size_t k);

/// Recall@K over rankings where any relevant candidate counts as a hit.
Recall recall_at(const std::vector<std::vector<std::size_t>>& rankings,
                 const std::vector<std::vector<std::size_t>>& relevant);

/// Images with their captions; texts are relevant to an image when the
/// caption strings are identical.
struct CaptionGallery {
  std::vector<const Image*> images;
  std::vector<std::vector<std::int64_t>> texts;
  std::vector<std::vector<std::size_t>> relevant;  // per image
};

/// The first `limit` captioned samples (all when 0). Samples must outlive the gallery.
CaptionGallery caption_gallery(const Dataset& samples, const Vocabulary& vocab, std::size_t max_len,
                               std::size_t limit = 0);

struct GroundingItem {
  const Image* image = nullptr;
  std::vector<std::int64_t> ids;
  NormBox gold;
  std::string image_id;
  std::string text;
};

struct GroundingPrediction {
  NormBox predicted;
  double iou = 0;
  bool hit = false;
};

/// Every boxed concept of every sample.
std::vector<GroundingItem> grounding_items(const Dataset& samples, const Vocabulary& vocab,
                                           std::size_t max_len);

std::vector<NormBox> predict_boxes(const Model& model, const std::vector<GroundingItem>& items);
std::vector<GroundingPrediction> ground(const Model& model, const std::vector<GroundingItem>& items,
                                        double threshold = 0.5);

struct MlmAccuracy {
  double accuracy = 0;
  double unigram_baseline = 0;
  std::size_t masked = 0;
  std::int64_t unigram_token = 0;
};

/// Masked-token accuracy on `captions` paired with their whole images, against always
/// predicting the most frequent non-special token of `training_texts`.
MlmAccuracy mlm_accuracy(const Model& model, const std::vector<const Image*>& images,
                         const std::vector<std::vector<std::int64_t>>& captions,
                         const std::vector<std::vector<std::int64_t>>& training_texts,
                         std::uint64_t seed);

struct HeatMap {
  std::size_t word_index = 0;  // token position in the text
  std::string word;
  std::size_t layer = 0;
  PatchGrid grid;
  std::vector<double> cells;  // row-major, nonnegative, max 1 unless all zero
  std::size_t argmax() const;
};

/// Default Grad-CAM layer: the fourth fusion layer when a later layer exists,
/// otherwise the second to last (layer 0 for a single layer).
std::size_t default_heatmap_layer(const ModelConfig& config);

/// Grad-CAM over the chosen layer's cross-attention to the whole image, one map per
/// non-special token.
std::vector<HeatMap> heatmaps(const Model& model, const Image& image,
                              const std::vector<std::int64_t>& ids, std::size_t layer,
                              const Vocabulary* vocab = nullptr);

/// Image with the map blended in red; cells are upsampled to pixels.
Image overlay(const Image& image, const HeatMap& map);

nlohmann::json to_json(const RetrievalResult& result);

}  // namespace xgrain::evaluation
