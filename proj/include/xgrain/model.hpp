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
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "xgrain/autograd.hpp"
#include "xgrain/data.hpp"
#include "xgrain/geometry.hpp"
#include "xgrain/tensor.hpp"

namespace xgrain {

/// Flat `key = value` configuration; `#` starts a comment.
using KeyValues = std::map<std::string, std::string>;

KeyValues read_key_values(const std::filesystem::path& path);
void write_key_values(const std::filesystem::path& path, const KeyValues& values);

struct ModelConfig {
  std::size_t hidden_dim = 64;
  std::size_t vision_layers = 2;
  std::size_t text_layers = 2;
  std::size_t fusion_layers = 2;
  std::size_t attention_heads = 4;
  std::size_t patch_size = 8;
  std::size_t image_size = 64;
  std::size_t vocab_size = 0;
  std::size_t max_text_len = 20;
  std::size_t projection_dim = 32;
  double temperature_init = 0.07;
  /// Truncated-normal std of linear layer weights; embeddings use 0.02.
  double linear_init_std = 0.08;
  /// Amplitude of the 2D sinusoidal start value of the learned patch positions;
  /// 0 draws them like the other embeddings.
  double vision_pos_scale = 4.0;

  /// Throws ContractError when an invariant fails.
  void validate() const;
  PatchGrid grid() const { return PatchGrid::square(image_size, patch_size); }

  /// Returns false for keys that are not model keys.
  bool set(const std::string& key, const std::string& value);
  KeyValues to_key_values() const;
};

/// Pixel normalization applied by `image_to_pixels`.
inline constexpr double kPixelMean = 0.5;
inline constexpr double kPixelStd = 0.25;

/// [height, width, 3] tensor of normalized pixel values.
Tensor image_to_pixels(const Image& image, DType dtype);

struct PatchFeatureMap {
  Tensor features;  // [patches, hidden]
  PatchGrid grid;
};

struct ConceptRepresentation {
  Tensor tokens;  // [M + 1, hidden]; row 0 is the mean of rows 1..M
  PatchSet patch_set;
  NormBox box;
};

struct EncodedText {
  Tensor tokens;  // [L, hidden]
  std::vector<std::int64_t> ids;
};

struct FusedOutput {
  Tensor tokens;  // [L, hidden]
  /// Per fusion layer, [heads, L, M + 1].
  std::vector<Tensor> cross_attention_maps;
};

/// Packed patch features for a batch of images.
struct VisionBatch {
  Tensor features;  // [images * patches, hidden]
  std::size_t images = 0;
  PatchGrid grid;
};

struct ConceptRef {
  std::size_t image = 0;
  NormBox box = NormBox::whole_image();
};

/// Distinct concepts packed row-wise, each as [mean, patches...].
struct ConceptBank {
  Tensor tokens;  // [rows, hidden]
  Tensor means;   // [concepts, hidden]
  std::vector<std::size_t> begin;
  std::vector<std::size_t> length;
  std::vector<PatchSet> patch_sets;
  std::vector<NormBox> boxes;
  std::size_t size() const { return begin.size(); }
};

/// Ragged packed texts; no padding between texts.
struct TextBatch {
  Tensor tokens;  // [total tokens, hidden]
  std::vector<std::vector<std::int64_t>> ids;
  std::vector<std::size_t> begin;
  std::size_t size() const { return begin.size(); }
  Tensor cls(Tape& tape) const;
};

struct FusionPair {
  std::size_t text = 0;
  std::size_t concept_index = 0;
};

struct FusionBatch {
  Tensor tokens;  // [sum of text lengths over pairs, hidden]
  std::vector<std::size_t> begin;
  std::vector<std::size_t> length;
  std::vector<Tensor> cross_probs;  // per layer, packed per kernels::AttentionLayout
  std::vector<std::shared_ptr<const kernels::AttentionLayout>> cross_layouts;
  std::size_t size() const { return begin.size(); }
  Tensor cls(Tape& tape) const;
};

struct NamedParameter {
  std::string name;
  Tensor value;
  bool decay = true;
};

class Model {
 public:
  Model(const ModelConfig& config, DType dtype, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  DType dtype() const { return dtype_; }
  std::vector<NamedParameter>& parameters() { return params_; }
  const std::vector<NamedParameter>& parameters() const { return params_; }
  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;
  std::size_t parameter_count() const;
  void zero_grad();
  /// Deep copy; with `requires_grad` false the copy records nothing on a tape.
  Model clone(bool requires_grad) const;

  // Batched encoders.
  VisionBatch encode_images(Tape& tape, std::span<const Tensor> pixels) const;
  VisionBatch encode_images(Tape& tape, std::span<const Image* const> images) const;
  ConceptBank build_concepts(Tape& tape, const VisionBatch& vision,
                             std::span<const ConceptRef> refs) const;
  TextBatch encode_texts(Tape& tape, const std::vector<std::vector<std::int64_t>>& ids) const;
  FusionBatch fuse(Tape& tape, const TextBatch& texts, const ConceptBank& concepts,
                   std::span<const FusionPair> pairs) const;

  // Single-item views over the batched path.
  PatchFeatureMap encode_image(Tape& tape, const Tensor& pixels) const;
  ConceptRepresentation extract_concept(Tape& tape, const PatchFeatureMap& map,
                                        const NormBox& box) const;
  EncodedText encode_text(Tape& tape, const std::vector<std::int64_t>& ids) const;
  FusedOutput fuse(Tape& tape, const EncodedText& text, const ConceptRepresentation& rep) const;

  /// Bounding-box head on fused [CLS] rows; returns [rows, 4] in (0, 1).
  Tensor box_head(Tape& tape, const Tensor& x_cls) const;

  void save(const std::filesystem::path& dir, const nlohmann::json& extra = {}) const;
  static Model load(const std::filesystem::path& dir);

 private:
  Tensor encoder_stack(Tape& tape, Tensor x, const std::string& prefix, std::size_t layers,
                       std::shared_ptr<const kernels::AttentionLayout> layout) const;
  Tensor self_attention(Tape& tape, const Tensor& x, const std::string& prefix,
                        std::shared_ptr<const kernels::AttentionLayout> layout) const;
  Tensor mlp(Tape& tape, const Tensor& x, const std::string& prefix) const;
  Tensor norm(Tape& tape, const Tensor& x, const std::string& prefix) const;
  void add_param(const std::string& name, const Shape& shape, double init_std, bool decay = true);
  void add_norm(const std::string& prefix);
  void add_linear(const std::string& prefix, std::size_t in, std::size_t out);
  void init_grid_positions(Tensor& pos) const;

  ModelConfig config_;
  DType dtype_;
  std::vector<NamedParameter> params_;
  std::map<std::string, std::size_t> index_;
  std::uint64_t init_state_;
};

}  // namespace xgrain
