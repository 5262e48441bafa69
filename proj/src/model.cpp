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

#include "xgrain/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "xgrain/errors.hpp"

namespace xgrain {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(value, &pos);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got '" + value + "'");
  }
  if (pos != value.size() || v < 0) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
  }
  return static_cast<std::size_t>(v);
}

double parse_double(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(value, &pos);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + value + "'");
  }
  if (pos != value.size() || !std::isfinite(v)) {
    throw ConfigError(key + ": expected a finite number, got '" + value + "'");
  }
  return v;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string layer_name(const std::string& prefix, std::size_t i) {
  return prefix + ".layer" + std::to_string(i);
}

// Row of the block-diagonal self-attention layout for ragged sequences.
std::vector<kernels::AttentionSegment> self_segments(std::span<const std::size_t> begin,
                                                     std::span<const std::size_t> length) {
  std::vector<kernels::AttentionSegment> segs(begin.size());
  for (std::size_t i = 0; i < begin.size(); ++i) segs[i] = {begin[i], length[i], begin[i], length[i]};
  return segs;
}

}  // namespace

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  KeyValues out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || trim(line.substr(0, eq)).empty()) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    }
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

void write_key_values(const std::filesystem::path& path, const KeyValues& values) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  for (const auto& [k, v] : values) out << k << " = " << v << '\n';
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ContractError("model config: " + msg); };
  if (hidden_dim == 0 || attention_heads == 0) fail("hidden_dim and attention_heads must be positive");
  if (hidden_dim % attention_heads != 0) fail("hidden_dim must be divisible by attention_heads");
  if (patch_size == 0 || image_size % patch_size != 0) fail("image_size must be divisible by patch_size");
  if (max_text_len < 2) fail("max_text_len must be at least 2");
  if (fusion_layers == 0) fail("fusion_layers must be at least 1");
  if (projection_dim == 0) fail("projection_dim must be positive");
  if (vocab_size <= static_cast<std::size_t>(Vocabulary::kNumSpecial)) {
    fail("vocab_size must exceed the special-token count");
  }
  if (!(temperature_init >= 5e-3 && temperature_init <= 1.0)) fail("temperature_init outside [5e-3, 1]");
  if (!(linear_init_std > 0 && linear_init_std <= 1.0)) fail("linear_init_std outside (0, 1]");
  if (!(vision_pos_scale >= 0 && vision_pos_scale <= 100.0)) fail("vision_pos_scale outside [0, 100]");
}

bool ModelConfig::set(const std::string& key, const std::string& value) {
  const std::map<std::string, std::size_t ModelConfig::*> sizes{
      {"hidden_dim", &ModelConfig::hidden_dim},     {"vision_layers", &ModelConfig::vision_layers},
      {"text_layers", &ModelConfig::text_layers},   {"fusion_layers", &ModelConfig::fusion_layers},
      {"attention_heads", &ModelConfig::attention_heads}, {"patch_size", &ModelConfig::patch_size},
      {"image_size", &ModelConfig::image_size},     {"vocab_size", &ModelConfig::vocab_size},
      {"max_text_len", &ModelConfig::max_text_len}, {"projection_dim", &ModelConfig::projection_dim}};
  if (auto it = sizes.find(key); it != sizes.end()) {
    this->*(it->second) = parse_size(key, value);
    return true;
  }
  const std::map<std::string, double ModelConfig::*> reals{
      {"temperature_init", &ModelConfig::temperature_init},
      {"linear_init_std", &ModelConfig::linear_init_std},
      {"vision_pos_scale", &ModelConfig::vision_pos_scale}};
  if (auto it = reals.find(key); it != reals.end()) {
    this->*(it->second) = parse_double(key, value);
    return true;
  }
  return false;
}

KeyValues ModelConfig::to_key_values() const {
  return {{"hidden_dim", std::to_string(hidden_dim)},
          {"vision_layers", std::to_string(vision_layers)},
          {"text_layers", std::to_string(text_layers)},
          {"fusion_layers", std::to_string(fusion_layers)},
          {"attention_heads", std::to_string(attention_heads)},
          {"patch_size", std::to_string(patch_size)},
          {"image_size", std::to_string(image_size)},
          {"vocab_size", std::to_string(vocab_size)},
          {"max_text_len", std::to_string(max_text_len)},
          {"projection_dim", std::to_string(projection_dim)},
          {"temperature_init", format_double(temperature_init)},
          {"linear_init_std", format_double(linear_init_std)},
          {"vision_pos_scale", format_double(vision_pos_scale)}};
}

Tensor image_to_pixels(const Image& image, DType dtype) {
  Tensor out = Tensor::zeros({image.height, image.width, 3}, dtype);
  dispatch(dtype, [&]<class T>() {
    auto d = out.data<T>();
    for (std::size_t i = 0; i < image.rgb.size(); ++i) {
      d[i] = static_cast<T>((image.rgb[i] / 255.0 - kPixelMean) / kPixelStd);
    }
  });
  return out;
}

Tensor TextBatch::cls(Tape& tape) const { return ops::gather_rows(tape, tokens, begin); }
Tensor FusionBatch::cls(Tape& tape) const { return ops::gather_rows(tape, tokens, begin); }

Model::Model(const ModelConfig& config, DType dtype, std::uint64_t seed)
    : config_(config), dtype_(dtype), init_state_(seed) {
  config_.validate();
  const std::size_t h = config_.hidden_dim;
  const std::size_t patches = config_.grid().count();
  const std::size_t patch_dim = config_.patch_size * config_.patch_size * 3;

  auto add_stack = [&](const std::string& prefix, std::size_t layers) {
    for (std::size_t i = 0; i < layers; ++i) {
      const std::string l = layer_name(prefix, i);
      add_norm(l + ".ln1");
      add_linear(l + ".attn.qkv", h, 3 * h);
      add_linear(l + ".attn.out", h, h);
      add_norm(l + ".ln2");
      add_linear(l + ".mlp.fc1", h, 4 * h);
      add_linear(l + ".mlp.fc2", 4 * h, h);
    }
    add_norm(prefix + ".norm");
  };

  add_linear("vision.patch", patch_dim, h);
  if (config_.vision_pos_scale > 0) {
    add_param("vision.pos", {patches, h}, 0.0);
    init_grid_positions(param("vision.pos"));
  } else {
    add_param("vision.pos", {patches, h}, 0.02);
  }
  add_stack("vision", config_.vision_layers);

  add_param("text.token", {config_.vocab_size, h}, 0.02);
  add_param("text.pos", {config_.max_text_len, h}, 0.02);
  add_stack("text", config_.text_layers);

  add_param("fusion.concept_pos", {h}, 0.02);
  for (std::size_t i = 0; i < config_.fusion_layers; ++i) {
    const std::string l = layer_name("fusion", i);
    add_norm(l + ".ln1");
    add_linear(l + ".attn.qkv", h, 3 * h);
    add_linear(l + ".attn.out", h, h);
    add_norm(l + ".ln2");
    add_norm(l + ".ln_kv");
    add_linear(l + ".cross.q", h, h);
    add_linear(l + ".cross.kv", h, 2 * h);
    add_linear(l + ".cross.out", h, h);
    add_norm(l + ".ln3");
    add_linear(l + ".mlp.fc1", h, 4 * h);
    add_linear(l + ".mlp.fc2", 4 * h, h);
  }
  add_norm("fusion.norm");

  add_linear("head.proj_v", h, config_.projection_dim);
  add_linear("head.proj_w", h, config_.projection_dim);
  add_param("head.temperature", {}, 0.0, false);
  param("head.temperature").set(0, config_.temperature_init);
  add_linear("head.itm", h, 2);
  add_linear("head.mlm", h, config_.vocab_size);
  add_linear("head.bbox.fc1", h, h);
  add_linear("head.bbox.fc2", h, 4);
}

void Model::add_param(const std::string& name, const Shape& shape, double init_std, bool decay) {
  if (index_.count(name)) throw ContractError("duplicate parameter " + name);
  Tensor t = Tensor::zeros(shape, dtype_);
  if (init_std > 0) {
    // Truncated normal at two standard deviations; one generator per parameter keeps
    // values independent of registration order changes elsewhere.
    std::seed_seq seq{init_state_, std::hash<std::string>{}(name)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < t.numel(); ++i) {
      double z = normal(rng);
      while (std::abs(z) > 2.0) z = normal(rng);
      t.set(i, z * init_std);
    }
  }
  t.set_requires_grad(true);
  index_[name] = params_.size();
  params_.push_back({name, t, decay});
}

void Model::init_grid_positions(Tensor& pos) const {
  // First half of the channels encodes the row, second half the column; within a
  // half, sin/cos pairs at frequencies from 1 down to about 1e-2 rad per cell.
  const PatchGrid grid = config_.grid();
  const std::size_t h = config_.hidden_dim;
  const std::size_t half = h / 2;
  for (std::size_t r = 0; r < grid.grid_h; ++r) {
    for (std::size_t c = 0; c < grid.grid_w; ++c) {
      for (std::size_t d = 0; d < h; ++d) {
        const std::size_t q = half ? d % half : 0;
        const double coord = static_cast<double>(d < half ? r : c);
        const double freq = std::pow(10.0, -static_cast<double>(q / 2) / (static_cast<double>(h) / 8.0));
        const double v = q % 2 ? std::cos(coord * freq) : std::sin(coord * freq);
        pos.set((r * grid.grid_w + c) * h + d, config_.vision_pos_scale * v);
      }
    }
  }
}

void Model::add_norm(const std::string& prefix) {
  add_param(prefix + ".gain", {config_.hidden_dim}, 0.0, false);
  auto& g = param(prefix + ".gain");
  for (std::size_t i = 0; i < g.numel(); ++i) g.set(i, 1.0);
  add_param(prefix + ".bias", {config_.hidden_dim}, 0.0, false);
}

void Model::add_linear(const std::string& prefix, std::size_t in, std::size_t out) {
  add_param(prefix + ".weight", {in, out}, config_.linear_init_std);
  add_param(prefix + ".bias", {out}, 0.0, false);
}

Tensor& Model::param(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter " + name);
  return params_[it->second].value;
}

const Tensor& Model::param(const std::string& name) const {
  return const_cast<Model*>(this)->param(name);
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

void Model::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

Model Model::clone(bool requires_grad) const {
  Model copy = *this;
  for (auto& p : copy.params_) {
    p.value = p.value.clone();
    p.value.set_requires_grad(requires_grad);
  }
  return copy;
}

Tensor Model::norm(Tape& tape, const Tensor& x, const std::string& prefix) const {
  return ops::layer_norm(tape, x, param(prefix + ".gain"), param(prefix + ".bias"));
}

Tensor Model::mlp(Tape& tape, const Tensor& x, const std::string& prefix) const {
  Tensor h = ops::linear(tape, x, param(prefix + ".fc1.weight"), param(prefix + ".fc1.bias"));
  h = ops::gelu(tape, h);
  return ops::linear(tape, h, param(prefix + ".fc2.weight"), param(prefix + ".fc2.bias"));
}

Tensor Model::self_attention(Tape& tape, const Tensor& x, const std::string& prefix,
                             std::shared_ptr<const kernels::AttentionLayout> layout) const {
  const std::size_t h = config_.hidden_dim;
  Tensor qkv = ops::linear(tape, x, param(prefix + ".qkv.weight"), param(prefix + ".qkv.bias"));
  Tensor q = ops::slice(tape, qkv, 1, 0, h);
  Tensor k = ops::slice(tape, qkv, 1, h, h);
  Tensor v = ops::slice(tape, qkv, 1, 2 * h, h);
  Tensor p = ops::attention_probs(tape, q, k, layout);
  Tensor a = ops::attention_apply(tape, p, v, layout);
  return ops::linear(tape, a, param(prefix + ".out.weight"), param(prefix + ".out.bias"));
}

Tensor Model::encoder_stack(Tape& tape, Tensor x, const std::string& prefix, std::size_t layers,
                            std::shared_ptr<const kernels::AttentionLayout> layout) const {
  for (std::size_t i = 0; i < layers; ++i) {
    const std::string l = layer_name(prefix, i);
    x = ops::add(tape, x, self_attention(tape, norm(tape, x, l + ".ln1"), l + ".attn", layout));
    x = ops::add(tape, x, mlp(tape, norm(tape, x, l + ".ln2"), l + ".mlp"));
  }
  return norm(tape, x, prefix + ".norm");
}

VisionBatch Model::encode_images(Tape& tape, std::span<const Tensor> pixels) const {
  const PatchGrid grid = config_.grid();
  const std::size_t s = config_.image_size;
  const std::size_t p = config_.patch_size;
  const std::size_t np = grid.count();
  const std::size_t patch_dim = p * p * 3;
  const std::size_t b = pixels.size();
  if (b == 0) throw ContractError("encode_images: empty batch");

  Tensor patches = Tensor::zeros({b * np, patch_dim}, dtype_);
  dispatch(dtype_, [&]<class T>() {
    auto out = patches.data<T>();
    for (std::size_t i = 0; i < b; ++i) {
      const Tensor& img = pixels[i];
      if (img.shape() != Shape{s, s, 3}) {
        throw DimensionError("encode_image: expected " + shape_string({s, s, 3}) + ", got " +
                             shape_string(img.shape()));
      }
      const Tensor src = img.dtype() == dtype_ ? img : img.to(dtype_);
      auto in = src.data<T>();
      for (std::size_t cell = 0; cell < np; ++cell) {
        const std::size_t y0 = (cell / grid.grid_w) * p;
        const std::size_t x0 = (cell % grid.grid_w) * p;
        T* row = out.data() + (i * np + cell) * patch_dim;
        for (std::size_t dy = 0; dy < p; ++dy) {
          const T* px = in.data() + ((y0 + dy) * s + x0) * 3;
          std::copy(px, px + p * 3, row + dy * p * 3);
        }
      }
    }
  });

  Tensor x = ops::linear(tape, patches, param("vision.patch.weight"), param("vision.patch.bias"));
  std::vector<std::size_t> pos(b * np);
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i % np;
  x = ops::add(tape, x, ops::gather_rows(tape, param("vision.pos"), pos));

  std::vector<std::size_t> begin(b), length(b, np);
  for (std::size_t i = 0; i < b; ++i) begin[i] = i * np;
  auto layout = std::make_shared<kernels::AttentionLayout>(self_segments(begin, length),
                                                           config_.attention_heads);
  x = encoder_stack(tape, x, "vision", config_.vision_layers, layout);
  return {x, b, grid};
}

VisionBatch Model::encode_images(Tape& tape, std::span<const Image* const> images) const {
  std::vector<Tensor> pixels;
  pixels.reserve(images.size());
  for (const Image* img : images) pixels.push_back(image_to_pixels(*img, dtype_));
  return encode_images(tape, pixels);
}

ConceptBank Model::build_concepts(Tape& tape, const VisionBatch& vision,
                                  std::span<const ConceptRef> refs) const {
  const std::size_t np = vision.grid.count();
  const std::size_t c = refs.size();
  if (c == 0) throw ContractError("build_concepts: no concepts");
  ConceptBank bank;
  Tensor pool = Tensor::zeros({c, vision.images * np}, dtype_);
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < c; ++i) {
    const ConceptRef& ref = refs[i];
    if (ref.image >= vision.images) throw ContractError("build_concepts: image index out of range");
    ref.box.validate();
    PatchSet ps = patches_for_box(ref.box, vision.grid);
    const double w = 1.0 / static_cast<double>(ps.size());
    bank.begin.push_back(rows.size());
    bank.length.push_back(ps.size() + 1);
    rows.push_back(i);
    for (std::size_t cell : ps) {
      pool.set(i * vision.images * np + ref.image * np + cell, w);
      rows.push_back(c + ref.image * np + cell);
    }
    bank.patch_sets.push_back(std::move(ps));
    bank.boxes.push_back(ref.box);
  }
  bank.means = ops::matmul(tape, pool, vision.features);
  const Tensor parts[] = {bank.means, vision.features};
  bank.tokens = ops::gather_rows(tape, ops::concat(tape, parts, 0), rows);
  return bank;
}

TextBatch Model::encode_texts(Tape& tape, const std::vector<std::vector<std::int64_t>>& ids) const {
  if (ids.empty()) throw ContractError("encode_texts: empty batch");
  TextBatch out;
  out.ids = ids;
  std::vector<std::int64_t> flat;
  std::vector<std::size_t> pos, length;
  std::vector<std::uint8_t> valid;
  for (const auto& t : ids) {
    if (t.empty() || t.size() > config_.max_text_len) {
      throw ContractError("encode_text: length " + std::to_string(t.size()) + " outside [1, " +
                          std::to_string(config_.max_text_len) + "]");
    }
    out.begin.push_back(flat.size());
    length.push_back(t.size());
    for (std::size_t j = 0; j < t.size(); ++j) {
      flat.push_back(t[j]);
      pos.push_back(j);
      valid.push_back(t[j] != Vocabulary::kPad);
    }
  }
  Tensor x = ops::embedding(tape, param("text.token"), flat);
  x = ops::add(tape, x, ops::gather_rows(tape, param("text.pos"), pos));
  auto layout = std::make_shared<kernels::AttentionLayout>(self_segments(out.begin, length),
                                                           config_.attention_heads, valid);
  out.tokens = encoder_stack(tape, x, "text", config_.text_layers, layout);
  return out;
}

FusionBatch Model::fuse(Tape& tape, const TextBatch& texts, const ConceptBank& concepts,
                        std::span<const FusionPair> pairs) const {
  if (pairs.empty()) throw ContractError("fuse: no pairs");
  const std::size_t h = config_.hidden_dim;
  FusionBatch out;
  std::vector<std::size_t> rows;
  std::vector<std::uint8_t> valid;
  std::vector<kernels::AttentionSegment> cross;
  for (const FusionPair& pr : pairs) {
    if (pr.text >= texts.size() || pr.concept_index >= concepts.size()) {
      throw ContractError("fuse: pair index out of range");
    }
    const auto& ids = texts.ids[pr.text];
    out.begin.push_back(rows.size());
    out.length.push_back(ids.size());
    cross.push_back({rows.size(), ids.size(), concepts.begin[pr.concept_index],
                     concepts.length[pr.concept_index]});
    for (std::size_t j = 0; j < ids.size(); ++j) {
      rows.push_back(texts.begin[pr.text] + j);
      valid.push_back(ids[j] != Vocabulary::kPad);
    }
  }
  auto self_layout = std::make_shared<kernels::AttentionLayout>(
      self_segments(out.begin, out.length), config_.attention_heads, valid);
  auto cross_layout = std::make_shared<kernels::AttentionLayout>(std::move(cross), config_.attention_heads);

  // [CONCEPT-CLS] positional vector on each concept's leading row.
  const std::size_t bank_rows = concepts.tokens.dim(0);
  Tensor lead = Tensor::zeros({bank_rows, 1}, dtype_);
  for (std::size_t b : concepts.begin) lead.set(b, 1.0);
  Tensor kv_src = ops::add(
      tape, concepts.tokens,
      ops::matmul(tape, lead, ops::reshape(tape, param("fusion.concept_pos"), {1, h})));

  Tensor x = ops::gather_rows(tape, texts.tokens, rows);
  for (std::size_t i = 0; i < config_.fusion_layers; ++i) {
    const std::string l = layer_name("fusion", i);
    x = ops::add(tape, x, self_attention(tape, norm(tape, x, l + ".ln1"), l + ".attn", self_layout));

    Tensor q = ops::linear(tape, norm(tape, x, l + ".ln2"), param(l + ".cross.q.weight"),
                           param(l + ".cross.q.bias"));
    Tensor kv = ops::linear(tape, norm(tape, kv_src, l + ".ln_kv"), param(l + ".cross.kv.weight"),
                            param(l + ".cross.kv.bias"));
    Tensor k = ops::slice(tape, kv, 1, 0, h);
    Tensor v = ops::slice(tape, kv, 1, h, h);
    Tensor p = ops::attention_probs(tape, q, k, cross_layout);
    out.cross_probs.push_back(p);
    out.cross_layouts.push_back(cross_layout);
    Tensor a = ops::attention_apply(tape, p, v, cross_layout);
    x = ops::add(tape, x,
                 ops::linear(tape, a, param(l + ".cross.out.weight"), param(l + ".cross.out.bias")));

    x = ops::add(tape, x, mlp(tape, norm(tape, x, l + ".ln3"), l + ".mlp"));
  }
  out.tokens = norm(tape, x, "fusion.norm");
  return out;
}

PatchFeatureMap Model::encode_image(Tape& tape, const Tensor& pixels) const {
  VisionBatch v = encode_images(tape, std::span<const Tensor>(&pixels, 1));
  return {v.features, v.grid};
}

ConceptRepresentation Model::extract_concept(Tape& tape, const PatchFeatureMap& map,
                                             const NormBox& box) const {
  const VisionBatch v{map.features, 1, map.grid};
  const ConceptRef ref{0, box};
  ConceptBank bank = build_concepts(tape, v, std::span<const ConceptRef>(&ref, 1));
  return {bank.tokens, bank.patch_sets[0], box};
}

EncodedText Model::encode_text(Tape& tape, const std::vector<std::int64_t>& ids) const {
  TextBatch t = encode_texts(tape, {ids});
  return {t.tokens, ids};
}

FusedOutput Model::fuse(Tape& tape, const EncodedText& text,
                        const ConceptRepresentation& rep) const {
  const TextBatch t{text.tokens, {text.ids}, {0}};
  ConceptBank bank;
  bank.tokens = rep.tokens;
  bank.means = ops::slice(tape, rep.tokens, 0, 0, 1);
  bank.begin = {0};
  bank.length = {rep.tokens.dim(0)};
  const FusionPair pair{0, 0};
  FusionBatch f = fuse(tape, t, bank, std::span<const FusionPair>(&pair, 1));
  FusedOutput out{f.tokens, {}};
  for (const Tensor& p : f.cross_probs) {
    out.cross_attention_maps.push_back(
        ops::reshape(tape, p, {config_.attention_heads, text.ids.size(), rep.tokens.dim(0)}));
  }
  return out;
}

Tensor Model::box_head(Tape& tape, const Tensor& x_cls) const {
  Tensor hdn = ops::linear(tape, x_cls, param("head.bbox.fc1.weight"), param("head.bbox.fc1.bias"));
  hdn = ops::gelu(tape, hdn);
  return ops::sigmoid(
      tape, ops::linear(tape, hdn, param("head.bbox.fc2.weight"), param("head.bbox.fc2.bias")));
}

void Model::save(const std::filesystem::path& dir, const nlohmann::json& extra) const {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = extra.is_object() ? extra : nlohmann::json::object();
  manifest["format"] = "xgrain-checkpoint";
  manifest["version"] = 1;
  manifest["dtype"] = to_string(dtype_);
  manifest["config"] = config_.to_key_values();
  nlohmann::json list = nlohmann::json::array();
  for (const auto& p : params_) list.push_back({{"name", p.name}, {"shape", p.value.shape()}});
  manifest["parameters"] = list;
  {
    std::ofstream bin(dir / "params.bin", std::ios::binary);
    for (const auto& p : params_) write_tensor(bin, p.value);
    if (!bin) throw FormatError("failed writing " + (dir / "params.bin").string());
  }
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

Model Model::load(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw FormatError("missing checkpoint manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mf);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "xgrain-checkpoint") throw FormatError("not an xgrain checkpoint");
  ModelConfig config;
  for (const auto& [k, v] : manifest.at("config").items()) {
    if (!config.set(k, v.get<std::string>())) throw FormatError("unknown config key " + k);
  }
  Model model(config, parse_dtype(manifest.at("dtype").get<std::string>()), 0);
  const auto& list = manifest.at("parameters");
  if (list.size() != model.params_.size()) throw FormatError("checkpoint parameter count mismatch");
  std::ifstream bin(dir / "params.bin", std::ios::binary);
  if (!bin) throw FormatError("missing params.bin in " + dir.string());
  for (std::size_t i = 0; i < list.size(); ++i) {
    auto& p = model.params_[i];
    if (list[i].at("name").get<std::string>() != p.name) {
      throw FormatError("checkpoint parameter order mismatch at " + p.name);
    }
    Tensor t = read_tensor(bin, model.dtype_);
    if (t.shape() != p.value.shape()) throw FormatError("checkpoint shape mismatch for " + p.name);
    t.set_requires_grad(true);
    p.value = t;
  }
  return model;
}

}  // namespace xgrain
