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

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "xgrain/errors.hpp"
#include "xgrain/evaluation.hpp"
#include "xgrain/synthetic.hpp"

using namespace xgrain;
using namespace xgrain::evaluation;
using xgrain::testing::noise_image;
using xgrain::testing::tiny_config;

namespace {

SimilarityMatrix random_similarity(std::size_t images, std::size_t texts, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist;
  SimilarityMatrix s{images, texts, {}};
  for (std::size_t i = 0; i < images * texts; ++i) s.values.push_back(dist(rng));
  return s;
}

std::vector<std::vector<std::size_t>> diagonal(std::size_t n) {
  std::vector<std::vector<std::size_t>> r(n);
  for (std::size_t i = 0; i < n; ++i) r[i] = {i};
  return r;
}

auto random_rerank(std::uint64_t seed) {
  return [seed](const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
    std::vector<double> out;
    for (auto [i, t] : pairs) {
      std::mt19937_64 rng(seed ^ (i * 1000003 + t));
      out.push_back(std::uniform_real_distribution<double>()(rng));
    }
    return out;
  };
}

}  // namespace

TEST_CASE("perfect similarity gives recall one") {
  const std::size_t n = 12;
  SimilarityMatrix s{n, n, std::vector<double>(n * n, 0.0)};
  for (std::size_t i = 0; i < n; ++i) s.values[i * n + i] = 1.0;
  auto r = rank_two_stage(s, diagonal(n), n, [](const auto& pairs) {
    return std::vector<double>(pairs.size(), 0.5);
  });
  CHECK(r.text_retrieval.r1 == 1.0);
  CHECK(r.image_retrieval.r1 == 1.0);
  CHECK(r.image_retrieval_chance_r1 == doctest::Approx(1.0 / n));
}

TEST_CASE("re-ranking keeps the top-k candidate set") {
  const std::size_t n = 30, k = 7;
  SimilarityMatrix s = random_similarity(n, n, 4);
  auto plain = rank_two_stage(s, diagonal(n), 0, random_rerank(1));
  auto re = rank_two_stage(s, diagonal(n), k, random_rerank(1));
  for (std::size_t q = 0; q < n; ++q) {
    std::set<std::size_t> a(plain.text_ranking[q].begin(), plain.text_ranking[q].begin() + k);
    std::set<std::size_t> b(re.text_ranking[q].begin(), re.text_ranking[q].begin() + k);
    CHECK(a == b);
    CHECK(std::equal(plain.text_ranking[q].begin() + k, plain.text_ranking[q].end(),
                     re.text_ranking[q].begin() + k));
    std::set<std::size_t> c(plain.image_ranking[q].begin(), plain.image_ranking[q].begin() + k);
    std::set<std::size_t> d(re.image_ranking[q].begin(), re.image_ranking[q].begin() + k);
    CHECK(c == d);
  }
}

TEST_CASE("stage one breaks ties by id") {
  SimilarityMatrix s{2, 3, {0.5, 0.5, 0.5, 0.1, 0.7, 0.7}};
  auto r = rank_two_stage(s, diagonal(2), 0, random_rerank(0));
  CHECK(r.text_ranking[0] == std::vector<std::size_t>{0, 1, 2});
  CHECK(r.text_ranking[1] == std::vector<std::size_t>{1, 2, 0});
}

TEST_CASE("recall is monotone and any relevant hit counts") {
  const std::size_t n = 40;
  SimilarityMatrix s = random_similarity(n, n, 9);
  std::vector<std::vector<std::size_t>> rel(n);
  for (std::size_t i = 0; i < n; ++i) rel[i] = {i, (i + 1) % n};
  auto r = rank_two_stage(s, rel, 10, random_rerank(3));
  for (const Recall& x : {r.text_retrieval, r.image_retrieval}) {
    CHECK(x.r1 <= x.r5);
    CHECK(x.r5 <= x.r10);
    CHECK(x.r10 <= 1.0);
  }
  CHECK(recall_at({{3, 1, 2}}, {{2, 1}}).r1 == 0.0);
  CHECK(recall_at({{3, 1, 2}}, {{2, 1}}).r5 == 1.0);
  CHECK(recall_at({{1, 3, 2}}, {{2, 1}}).r1 == 1.0);
}

TEST_CASE("gallery permutation leaves recall unchanged") {
  const std::size_t n = 25;
  SimilarityMatrix s = random_similarity(n, n, 12);
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = (i * 7 + 3) % n;
  // Image i of the permuted gallery is image perm[i] of the original.
  SimilarityMatrix p{n, n, std::vector<double>(n * n)};
  std::vector<std::vector<std::size_t>> rel(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < n; ++t) p.values[i * n + t] = s.at(perm[i], t);
    rel[i] = {perm[i]};
  }
  auto a = rank_two_stage(s, diagonal(n), 0, random_rerank(0));
  auto b = rank_two_stage(p, rel, 0, random_rerank(0));
  CHECK(a.text_retrieval.r1 == b.text_retrieval.r1);
  CHECK(a.text_retrieval.r5 == b.text_retrieval.r5);
  CHECK(a.image_retrieval.r1 == b.image_retrieval.r1);
  CHECK(a.image_retrieval.r10 == b.image_retrieval.r10);
}

TEST_CASE("untrained model retrieves at chance") {
  const auto corpus = synthetic::generate_corpus(21, 100, {});
  const Vocabulary vocab = Vocabulary::from_records(corpus.train);
  std::vector<const Image*> images;
  std::vector<std::vector<std::int64_t>> texts;
  std::vector<std::vector<std::size_t>> rel;
  Dataset all = corpus.train_dataset();
  for (auto& s : corpus.heldout_dataset()) all.push_back(s);
  REQUIRE(all.size() == 100);
  for (std::size_t i = 0; i < all.size(); ++i) {
    images.push_back(&all[i].image);
    texts.push_back(vocab.encode(*all[i].record.caption, 20));
  }
  for (std::size_t i = 0; i < all.size(); ++i) {
    rel.emplace_back();
    for (std::size_t t = 0; t < all.size(); ++t)
      if (*all[t].record.caption == *all[i].record.caption) rel.back().push_back(t);
  }
  ModelConfig cfg = tiny_config(vocab.size(), 64, 16);
  cfg.max_text_len = 20;
  Model model(cfg, DType::f32, 31);
  auto r = retrieve(model, images, texts, rel, 16);
  const double p = r.image_retrieval_chance_r1;
  CHECK(p < 0.03);
  CHECK(std::abs(r.image_retrieval.r1 - p) <= 3 * std::sqrt(p * (1 - p) / 100.0));
}

TEST_CASE("grounding hit logic") {
  ModelConfig cfg = tiny_config();
  Model model(cfg, DType::f64, 3);
  // Zero head: every prediction is the centred half-size box.
  Tensor& w = model.param("head.bbox.fc2.weight");
  for (std::size_t i = 0; i < w.numel(); ++i) w.set(i, 0.0);
  const Image img = noise_image(16, 1);
  std::vector<GroundingItem> items{
      {&img, {1, 6, 2}, NormBox{0.5, 0.5, 0.5, 0.5}, "a", "x"},
      {&img, {1, 7, 2}, NormBox{0.1, 0.1, 0.1, 0.1}, "b", "y"},
      {&img, {1, 8, 2}, NormBox{0.5, 0.5, 0.6, 0.6}, "c", "z"},
  };
  auto preds = ground(model, items);
  REQUIRE(preds.size() == 3);
  CHECK(preds[0].iou == doctest::Approx(1.0));
  CHECK(preds[0].hit);
  CHECK(preds[1].iou == 0.0);
  CHECK_FALSE(preds[1].hit);
  CHECK(preds[2].iou == doctest::Approx(0.25 / 0.36));
  CHECK(preds[2].hit);
}

TEST_CASE("heatmap contracts") {
  ModelConfig cfg = tiny_config();
  cfg.fusion_layers = 2;
  Model model(cfg, DType::f64, 5);
  const Image img = noise_image(16, 4);
  const std::vector<std::int64_t> ids{1, 6, 7, 8, 2};
  CHECK(default_heatmap_layer(cfg) == 0);
  cfg.fusion_layers = 6;
  CHECK(default_heatmap_layer(cfg) == 3);
  cfg.fusion_layers = 4;
  CHECK(default_heatmap_layer(cfg) == 2);
  cfg.fusion_layers = 1;
  CHECK(default_heatmap_layer(cfg) == 0);
  cfg.fusion_layers = 2;

  auto maps = heatmaps(model, img, ids, 0);
  CHECK(maps.size() == 3);
  bool any = false;
  for (const auto& m : maps) {
    CHECK(m.cells.size() == 4);
    CHECK(m.grid.count() == 4);
    const double peak = *std::max_element(m.cells.begin(), m.cells.end());
    for (double v : m.cells) CHECK(v >= 0);
    if (peak > 0) {
      any = true;
      CHECK(peak == doctest::Approx(1.0));
      CHECK(m.cells[m.argmax()] == peak);
    }
  }
  CHECK(any);
  CHECK_THROWS_AS(heatmaps(model, img, ids, 2), ContractError);
  // Word rows of the last layer cannot influence x_cls.
  for (const auto& m : heatmaps(model, img, ids, 1))
    for (double v : m.cells) CHECK(v == 0.0);

  const Image over = overlay(img, maps[0]);
  CHECK(over.width == img.width);
  CHECK(over.rgb.size() == img.rgb.size());
}

TEST_CASE("degenerate gradient gives an all-zero heatmap") {
  Model model(tiny_config(), DType::f64, 6);
  for (const char* name : {"head.itm.weight", "head.itm.bias"}) {
    Tensor& t = model.param(name);
    for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, 0.0);
  }
  auto maps = heatmaps(model, noise_image(16, 2), {1, 6, 7, 2}, 0);
  for (const auto& m : maps)
    for (double v : m.cells) CHECK(v == 0.0);
}
