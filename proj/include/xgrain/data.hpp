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

// Record schema, annotation filtering, tokenizer, and image I/O.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "xgrain/geometry.hpp"

namespace xgrain {

enum class ConceptKind { object, region };

std::string to_string(ConceptKind kind);
ConceptKind parse_concept_kind(const std::string& name);

struct ConceptAnnotation {
  NormBox box;
  std::string text;
  ConceptKind kind = ConceptKind::object;

  friend bool operator==(const ConceptAnnotation&, const ConceptAnnotation&) = default;
};

/// One image with an optional caption and any number of boxed concepts.
struct MultiGrainedRecord {
  std::string image_id;
  std::string image_path;
  std::optional<std::string> caption;
  std::vector<ConceptAnnotation> concepts;

  bool annotated() const { return !concepts.empty(); }
  friend bool operator==(const MultiGrainedRecord&, const MultiGrainedRecord&) = default;
};

std::string record_to_json_line(const MultiGrainedRecord& record);
/// Throws FormatError on malformed input.
MultiGrainedRecord record_from_json_line(const std::string& line);

struct RecordLoadResult {
  std::vector<MultiGrainedRecord> records;
  std::size_t unreadable = 0;
};

/// Reads JSON Lines. Malformed lines are skipped with a warning on stderr.
RecordLoadResult read_records(const std::filesystem::path& path);
void write_records(const std::filesystem::path& path,
                   const std::vector<MultiGrainedRecord>& records);

// ---------------------------------------------------------------------------
// Annotation filtering

struct FilterOptions {
  /// Corner overflow outside [0, 1] that is clamped instead of rejected.
  double clamp_tolerance = 0.02;
  double min_area = 0.01;
  double max_region_overlap = 0.75;
};

struct FilterReport {
  std::size_t unreadable = 0;
  std::size_t invalid_box = 0;
  std::size_t too_small = 0;
  std::size_t overlapping_region_text = 0;
  std::size_t kept_concepts = 0;
};

/// Token-set Jaccard similarity over lowercased words.
double text_overlap(const std::string& a, const std::string& b);

/// Drops invalid boxes, boxes under min_area, and region texts that overlap
/// an earlier kept region text of the same image. Idempotent.
std::vector<MultiGrainedRecord> filter_annotations(const std::vector<MultiGrainedRecord>& records,
                                                   FilterReport& report,
                                                   const FilterOptions& options = {});

// ---------------------------------------------------------------------------
// Tokenizer

/// Lowercased words split on whitespace and punctuation.
std::vector<std::string> split_words(const std::string& text);

class Vocabulary {
 public:
  static constexpr std::int64_t kPad = 0;
  static constexpr std::int64_t kCls = 1;
  static constexpr std::int64_t kSep = 2;
  static constexpr std::int64_t kMask = 3;
  static constexpr std::int64_t kUnk = 4;
  static constexpr std::int64_t kNumSpecial = 5;

  Vocabulary();
  /// Specials followed by every corpus word in sorted order.
  static Vocabulary from_records(const std::vector<MultiGrainedRecord>& records);
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return tokens_.size(); }
  std::int64_t id(const std::string& token) const;
  const std::string& token(std::int64_t id) const;
  static bool is_special(std::int64_t id) { return id >= 0 && id < kNumSpecial; }

  /// [CLS] words... [SEP], truncated to max_len with [SEP] kept last.
  std::vector<std::int64_t> encode(const std::string& text, std::size_t max_len) const;
  std::string decode(const std::vector<std::int64_t>& ids) const;

 private:
  void add(const std::string& token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int64_t> index_;
};

// ---------------------------------------------------------------------------
// Images

/// 8-bit RGB, row-major, interleaved.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;

  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) { return rgb[(y * width + x) * 3 + c]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const {
    return rgb[(y * width + x) * 3 + c];
  }
  friend bool operator==(const Image&, const Image&) = default;
};

void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);

/// A record paired with its decoded image.
struct Sample {
  MultiGrainedRecord record;
  Image image;
};

using Dataset = std::vector<Sample>;

/// Loads records from `jsonl` and resolves image paths relative to `root`.
Dataset load_dataset(const std::filesystem::path& root, const std::string& jsonl);

}  // namespace xgrain
