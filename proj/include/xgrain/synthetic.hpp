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

// Procedural scenes of colored shapes with captions, object labels, and
// spatial-relation region phrases.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "xgrain/data.hpp"

namespace xgrain::synthetic {

enum class Color { red, green, blue, yellow };
enum class ShapeKind { circle, square, triangle };
enum class Relation { left_of, above, right_of, below };

inline constexpr std::array kColors{Color::red, Color::green, Color::blue, Color::yellow};
inline constexpr std::array kShapes{ShapeKind::circle, ShapeKind::square, ShapeKind::triangle};
inline constexpr std::array kRelations{Relation::left_of, Relation::above, Relation::right_of,
                                       Relation::below};

std::string color_name(Color c);
std::string shape_name(ShapeKind s);
std::string relation_phrase(Relation r);
std::array<std::uint8_t, 3> color_rgb(Color c);

struct SceneObject {
  Color color;
  ShapeKind shape;
  std::size_t cell_row = 0;
  std::size_t cell_col = 0;
  /// Tight to the painted pixels.
  NormBox box;

  std::string label() const { return color_name(color) + " " + shape_name(shape); }
};

struct RegionPhrase {
  std::size_t subject = 0;
  std::size_t object = 0;
  Relation relation = Relation::left_of;
  NormBox box;  // hull of the two object boxes
  std::string text;
};

/// Everything the generator knows about one scene.
struct SceneSpec {
  std::string image_id;
  Image image;
  std::vector<SceneObject> objects;
  std::vector<RegionPhrase> regions;
  std::string caption;
};

struct CorpusOptions {
  std::size_t image_size = 64;
  std::size_t placement_grid = 4;
  std::size_t min_objects = 2;
  std::size_t max_objects = 4;
  std::size_t min_shape_px = 10;
  std::size_t max_shape_px = 14;
  /// Largest shift of a shape from the centre of its placement cell, in pixels
  /// (clamped to the free space in the cell).
  std::size_t jitter_px = 0;
  double heldout_fraction = 0.1;
  /// Share of training images that keep their box annotations.
  double annotated_fraction = 0.5;
  /// (subject color, subject shape, relation) triples withheld from training
  /// region phrases.
  std::size_t heldout_combos = 6;
};

struct HeldoutCombo {
  Color color;
  ShapeKind shape;
  Relation relation;
  friend bool operator==(const HeldoutCombo&, const HeldoutCombo&) = default;
};

struct Corpus {
  std::vector<SceneSpec> scenes;
  /// Training records: region phrases with held-out combos removed, and only
  /// `annotated_fraction` of images keep concepts.
  std::vector<MultiGrainedRecord> train;
  /// Held-out records keep every annotation.
  std::vector<MultiGrainedRecord> heldout;
  std::vector<HeldoutCombo> heldout_combos;

  /// Train and held-out samples with their images attached.
  Dataset train_dataset() const;
  Dataset heldout_dataset() const;
  const SceneSpec& scene(const std::string& image_id) const;
};

SceneSpec render_scene(std::uint64_t seed, std::size_t index, const CorpusOptions& options);

/// Deterministic for a fixed seed.
Corpus generate_corpus(std::uint64_t seed, std::size_t n_images, const CorpusOptions& options = {});

/// Writes records.jsonl, heldout.jsonl, vocab.txt and images/<id>.ppm.
void write_corpus(const std::filesystem::path& dir, const Corpus& corpus,
                  const std::vector<MultiGrainedRecord>& train,
                  const std::vector<MultiGrainedRecord>& heldout);

}  // namespace xgrain::synthetic
