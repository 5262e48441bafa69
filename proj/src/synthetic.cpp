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

#include "xgrain/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <stdexcept>

#include "xgrain/errors.hpp"

namespace xgrain::synthetic {

std::string color_name(Color c) {
  switch (c) {
    case Color::red: return "red";
    case Color::green: return "green";
    case Color::blue: return "blue";
    case Color::yellow: return "yellow";
  }
  return "?";
}

std::string shape_name(ShapeKind s) {
  switch (s) {
    case ShapeKind::circle: return "circle";
    case ShapeKind::square: return "square";
    case ShapeKind::triangle: return "triangle";
  }
  return "?";
}

std::string relation_phrase(Relation r) {
  switch (r) {
    case Relation::left_of: return "left of";
    case Relation::above: return "above";
    case Relation::right_of: return "right of";
    case Relation::below: return "below";
  }
  return "?";
}

std::array<std::uint8_t, 3> color_rgb(Color c) {
  switch (c) {
    case Color::red: return {220, 40, 40};
    case Color::green: return {40, 180, 70};
    case Color::blue: return {50, 80, 230};
    case Color::yellow: return {235, 210, 40};
  }
  return {0, 0, 0};
}

namespace {

constexpr std::array<std::uint8_t, 3> kBackground{24, 24, 24};

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

bool painted(ShapeKind shape, double px, double py, double x0, double y0, double side) {
  const double cx = x0 + side / 2;
  switch (shape) {
    case ShapeKind::square: return true;
    case ShapeKind::circle: {
      const double cy = y0 + side / 2;
      const double r = side / 2;
      return (px - cx) * (px - cx) + (py - cy) * (py - cy) <= r * r;
    }
    case ShapeKind::triangle: {
      const double t = (py - y0) / side;
      return std::abs(px - cx) <= t * side / 2;
    }
  }
  return false;
}

Relation relation_between(const SceneObject& a, const SceneObject& b) {
  if (a.cell_col < b.cell_col) return Relation::left_of;
  if (a.cell_col > b.cell_col) return Relation::right_of;
  return a.cell_row < b.cell_row ? Relation::above : Relation::below;
}

NormBox hull(const NormBox& a, const NormBox& b) {
  return NormBox::from_corners(std::min(a.x1(), b.x1()), std::min(a.y1(), b.y1()),
                               std::max(a.x2(), b.x2()), std::max(a.y2(), b.y2()));
}

}  // namespace

SceneSpec render_scene(std::uint64_t seed, std::size_t index, const CorpusOptions& options) {
  const std::size_t cells = options.placement_grid * options.placement_grid;
  const std::size_t cell_px = options.image_size / options.placement_grid;
  if (options.placement_grid == 0 || options.max_objects > cells ||
      options.max_objects > kColors.size() * kShapes.size() || options.min_objects < 2 ||
      options.min_objects > options.max_objects || options.max_shape_px > cell_px ||
      options.min_shape_px == 0 || options.min_shape_px > options.max_shape_px) {
    throw ContractError("synthetic corpus options are inconsistent");
  }
  std::mt19937_64 rng(splitmix(seed ^ splitmix(index + 1)));

  SceneSpec scene;
  char id[32];
  std::snprintf(id, sizeof(id), "scene_%06zu", index);
  scene.image_id = id;
  scene.image.width = scene.image.height = options.image_size;
  scene.image.rgb.resize(options.image_size * options.image_size * 3);
  for (std::size_t i = 0; i < scene.image.rgb.size(); i += 3) {
    std::copy(kBackground.begin(), kBackground.end(), scene.image.rgb.begin() + static_cast<std::ptrdiff_t>(i));
  }

  const std::size_t n_obj =
      std::uniform_int_distribution<std::size_t>(options.min_objects, options.max_objects)(rng);
  std::vector<std::size_t> cell_ids(cells);
  std::iota(cell_ids.begin(), cell_ids.end(), 0);
  std::shuffle(cell_ids.begin(), cell_ids.end(), rng);
  cell_ids.resize(n_obj);
  std::sort(cell_ids.begin(), cell_ids.end());
  std::vector<std::size_t> combos(kColors.size() * kShapes.size());
  std::iota(combos.begin(), combos.end(), 0);
  std::shuffle(combos.begin(), combos.end(), rng);

  std::uniform_int_distribution<std::size_t> side_dist(options.min_shape_px, options.max_shape_px);
  for (std::size_t o = 0; o < n_obj; ++o) {
    SceneObject obj;
    obj.color = kColors[combos[o] / kShapes.size()];
    obj.shape = kShapes[combos[o] % kShapes.size()];
    obj.cell_row = cell_ids[o] / options.placement_grid;
    obj.cell_col = cell_ids[o] % options.placement_grid;
    const std::size_t side = side_dist(rng);
    const std::size_t centred = (cell_px - side) / 2;
    const std::size_t lo = centred - std::min(centred, options.jitter_px);
    const std::size_t hi = std::min(cell_px - side, centred + options.jitter_px);
    std::uniform_int_distribution<std::size_t> off(lo, hi);
    const std::size_t x0 = obj.cell_col * cell_px + off(rng);
    const std::size_t y0 = obj.cell_row * cell_px + off(rng);
    const auto rgb = color_rgb(obj.color);
    std::size_t min_x = options.image_size, min_y = options.image_size, max_x = 0, max_y = 0;
    for (std::size_t y = y0; y < y0 + side; ++y) {
      for (std::size_t x = x0; x < x0 + side; ++x) {
        if (!painted(obj.shape, x + 0.5, y + 0.5, static_cast<double>(x0), static_cast<double>(y0),
                     static_cast<double>(side))) {
          continue;
        }
        for (std::size_t c = 0; c < 3; ++c) scene.image.at(x, y, c) = rgb[c];
        min_x = std::min(min_x, x);
        min_y = std::min(min_y, y);
        max_x = std::max(max_x, x);
        max_y = std::max(max_y, y);
      }
    }
    const double s = static_cast<double>(options.image_size);
    obj.box = NormBox::from_corners(min_x / s, min_y / s, (max_x + 1) / s, (max_y + 1) / s);
    scene.objects.push_back(obj);
  }

  std::string caption;
  for (std::size_t o = 0; o < n_obj; ++o) {
    caption += (o ? " and a " : "a ") + scene.objects[o].label();
  }
  scene.caption = caption;

  std::bernoulli_distribution coin(0.5);
  for (std::size_t i = 0; i < n_obj; ++i) {
    for (std::size_t j = i + 1; j < n_obj; ++j) {
      RegionPhrase r;
      r.subject = coin(rng) ? i : j;
      r.object = r.subject == i ? j : i;
      const auto& a = scene.objects[r.subject];
      const auto& b = scene.objects[r.object];
      r.relation = relation_between(a, b);
      r.box = hull(a.box, b.box);
      r.text = a.label() + " " + relation_phrase(r.relation) + " " + b.label();
      scene.regions.push_back(r);
    }
  }
  return scene;
}

Dataset Corpus::train_dataset() const {
  Dataset out;
  out.reserve(train.size());
  for (const auto& r : train) out.push_back({r, scene(r.image_id).image});
  return out;
}

Dataset Corpus::heldout_dataset() const {
  Dataset out;
  out.reserve(heldout.size());
  for (const auto& r : heldout) out.push_back({r, scene(r.image_id).image});
  return out;
}

const SceneSpec& Corpus::scene(const std::string& image_id) const {
  // Ids are scene_<index>, generated in order.
  const std::size_t index = std::stoul(image_id.substr(image_id.find('_') + 1));
  if (index >= scenes.size() || scenes[index].image_id != image_id) {
    throw ContractError("unknown scene " + image_id);
  }
  return scenes[index];
}

Corpus generate_corpus(std::uint64_t seed, std::size_t n_images, const CorpusOptions& options) {
  if (n_images == 0) throw ContractError("generate_corpus needs at least one image");
  Corpus corpus;
  corpus.scenes.reserve(n_images);
  for (std::size_t i = 0; i < n_images; ++i) corpus.scenes.push_back(render_scene(seed, i, options));

  std::mt19937_64 rng(splitmix(seed ^ 0x5eedc0deULL));
  std::vector<HeldoutCombo> all;
  for (auto c : kColors) {
    for (auto s : kShapes) {
      for (auto r : kRelations) all.push_back({c, s, r});
    }
  }
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(std::min(options.heldout_combos, all.size()));
  corpus.heldout_combos = all;

  std::size_t n_heldout = 0;
  if (n_images >= 2) {
    n_heldout = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(options.heldout_fraction * n_images)));
    n_heldout = std::min(n_heldout, n_images - 1);
  }
  const std::size_t n_train = n_images - n_heldout;

  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_annotated =
      static_cast<std::size_t>(std::llround(options.annotated_fraction * static_cast<double>(n_train)));
  std::vector<bool> annotated(n_train, false);
  for (std::size_t i = 0; i < n_annotated; ++i) annotated[order[i]] = true;

  auto is_heldout_combo = [&](const SceneSpec& s, const RegionPhrase& r) {
    const auto& subj = s.objects[r.subject];
    return std::find(all.begin(), all.end(), HeldoutCombo{subj.color, subj.shape, r.relation}) !=
           all.end();
  };

  for (std::size_t i = 0; i < n_images; ++i) {
    const SceneSpec& s = corpus.scenes[i];
    const bool train = i < n_train;
    MultiGrainedRecord rec;
    rec.image_id = s.image_id;
    rec.image_path = "images/" + s.image_id + ".ppm";
    rec.caption = s.caption;
    if (!train || annotated[i]) {
      for (const auto& o : s.objects) rec.concepts.push_back({o.box, o.label(), ConceptKind::object});
      for (const auto& r : s.regions) {
        if (train && is_heldout_combo(s, r)) continue;
        rec.concepts.push_back({r.box, r.text, ConceptKind::region});
      }
    }
    (train ? corpus.train : corpus.heldout).push_back(std::move(rec));
  }
  return corpus;
}

void write_corpus(const std::filesystem::path& dir, const Corpus& corpus,
                  const std::vector<MultiGrainedRecord>& train,
                  const std::vector<MultiGrainedRecord>& heldout) {
  std::filesystem::create_directories(dir / "images");
  write_records(dir / "records.jsonl", train);
  write_records(dir / "heldout.jsonl", heldout);
  Vocabulary::from_records(train).save(dir / "vocab.txt");
  for (const auto& s : corpus.scenes) write_ppm(dir / "images" / (s.image_id + ".ppm"), s.image);
}

}  // namespace xgrain::synthetic
