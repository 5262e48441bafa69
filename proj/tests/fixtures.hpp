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

// Small models and batches shared by the test files.

#pragma once

#include <random>
#include <vector>

#include "xgrain/model.hpp"
#include "xgrain/objectives.hpp"

namespace xgrain::testing {

inline ModelConfig tiny_config(std::size_t vocab_size = 16, std::size_t image_size = 16,
                               std::size_t patch_size = 8) {
  ModelConfig c;
  c.hidden_dim = 8;
  c.vision_layers = 1;
  c.text_layers = 1;
  c.fusion_layers = 1;
  c.attention_heads = 2;
  c.patch_size = patch_size;
  c.image_size = image_size;
  c.vocab_size = vocab_size;
  c.max_text_len = 8;
  c.projection_dim = 4;
  return c;
}

inline Image noise_image(std::size_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Image img{size, size, std::vector<std::uint8_t>(size * size * 3)};
  for (auto& v : img.rgb) v = static_cast<std::uint8_t>(rng() % 256);
  return img;
}

/// Two images, each with a caption pair and one boxed concept pair.
struct TinyBatch {
  std::vector<Image> images;
  objectives::ObjectiveBatch batch;
};

inline TinyBatch tiny_batch(std::size_t image_size = 16) {
  TinyBatch tb;
  tb.images = {noise_image(image_size, 1), noise_image(image_size, 2)};
  for (const auto& img : tb.images) tb.batch.images.push_back(&img);
  using objectives::PairKind;
  tb.batch.pairs = {
      {0, NormBox::whole_image(), {1, 5, 6, 7, 2}, PairKind::caption, "a"},
      {0, NormBox{0.25, 0.25, 0.4, 0.4}, {1, 8, 9, 2}, PairKind::object, "a"},
      {1, NormBox::whole_image(), {1, 5, 10, 11, 12, 2}, PairKind::caption, "b"},
      {1, NormBox{0.7, 0.6, 0.5, 0.3}, {1, 13, 14, 15, 8, 9, 2}, PairKind::region, "b"},
  };
  return tb;
}

}  // namespace xgrain::testing
