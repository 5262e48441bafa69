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

#include "xgrain/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "xgrain/errors.hpp"
#include "xgrain/log.hpp"

namespace xgrain {

using nlohmann::json;

std::string to_string(ConceptKind kind) { return kind == ConceptKind::object ? "object" : "region"; }

ConceptKind parse_concept_kind(const std::string& name) {
  if (name == "object") return ConceptKind::object;
  if (name == "region") return ConceptKind::region;
  throw FormatError("unknown concept kind '" + name + "'");
}

std::string record_to_json_line(const MultiGrainedRecord& record) {
  json j;
  j["image_id"] = record.image_id;
  j["image_path"] = record.image_path;
  j["caption"] = record.caption ? json(*record.caption) : json(nullptr);
  j["concepts"] = json::array();
  for (const auto& c : record.concepts) {
    j["concepts"].push_back({{"box", {{"cx", c.box.cx}, {"cy", c.box.cy}, {"w", c.box.w}, {"h", c.box.h}}},
                             {"text", c.text},
                             {"kind", to_string(c.kind)}});
  }
  return j.dump();
}

MultiGrainedRecord record_from_json_line(const std::string& line) {
  try {
    const json j = json::parse(line);
    MultiGrainedRecord r;
    r.image_id = j.at("image_id").get<std::string>();
    r.image_path = j.at("image_path").get<std::string>();
    if (j.contains("caption") && !j.at("caption").is_null()) {
      r.caption = j.at("caption").get<std::string>();
    }
    if (j.contains("concepts")) {
      for (const auto& c : j.at("concepts")) {
        const auto& b = c.at("box");
        r.concepts.push_back({NormBox{b.at("cx").get<double>(), b.at("cy").get<double>(),
                                      b.at("w").get<double>(), b.at("h").get<double>()},
                              c.at("text").get<std::string>(),
                              parse_concept_kind(c.at("kind").get<std::string>())});
      }
    }
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad record: ") + e.what());
  }
}

RecordLoadResult read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  RecordLoadResult out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.records.push_back(record_from_json_line(line));
    } catch (const FormatError& e) {
      ++out.unreadable;
      log_warn(path.string() + ":" + std::to_string(line_no) + ": skipped (" + e.what() + ")");
    }
  }
  return out;
}

void write_records(const std::filesystem::path& path,
                   const std::vector<MultiGrainedRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  for (const auto& r : records) out << record_to_json_line(r) << '\n';
}

// ---------------------------------------------------------------------------

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (unsigned char ch : text) {
    // Bytes >= 0x80 belong to UTF-8 sequences and stay inside words.
    if (ch >= 0x80 || std::isalnum(ch)) {
      cur.push_back(static_cast<char>(ch >= 0x80 ? ch : std::tolower(ch)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

double text_overlap(const std::string& a, const std::string& b) {
  const auto wa = split_words(a);
  const auto wb = split_words(b);
  const std::set<std::string> sa(wa.begin(), wa.end());
  const std::set<std::string> sb(wb.begin(), wb.end());
  if (sa.empty() && sb.empty()) return 1.0;
  std::size_t inter = 0;
  for (const auto& w : sa) inter += sb.count(w);
  return static_cast<double>(inter) / static_cast<double>(sa.size() + sb.size() - inter);
}

namespace {

// Clamps small overflow; returns nullopt when the box is unusable.
std::optional<NormBox> sanitize_box(const NormBox& b, double tol) {
  const double vals[] = {b.cx, b.cy, b.w, b.h};
  for (double v : vals) {
    if (!std::isfinite(v)) return std::nullopt;
  }
  if (b.w <= 0 || b.h <= 0) return std::nullopt;
  double x1 = b.x1(), y1 = b.y1(), x2 = b.x2(), y2 = b.y2();
  if (x1 < -tol || y1 < -tol || x2 > 1 + tol || y2 > 1 + tol) return std::nullopt;
  x1 = std::clamp(x1, 0.0, 1.0);
  y1 = std::clamp(y1, 0.0, 1.0);
  x2 = std::clamp(x2, 0.0, 1.0);
  y2 = std::clamp(y2, 0.0, 1.0);
  if (x2 <= x1 || y2 <= y1) return std::nullopt;
  if (x1 == b.x1() && y1 == b.y1() && x2 == b.x2() && y2 == b.y2()) return b;
  return NormBox::from_corners(x1, y1, x2, y2);
}

}  // namespace

std::vector<MultiGrainedRecord> filter_annotations(const std::vector<MultiGrainedRecord>& records,
                                                   FilterReport& report,
                                                   const FilterOptions& options) {
  std::vector<MultiGrainedRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    MultiGrainedRecord kept = r;
    kept.concepts.clear();
    std::vector<std::string> region_texts;
    for (const auto& c : r.concepts) {
      const auto box = sanitize_box(c.box, options.clamp_tolerance);
      if (!box || !box->valid()) {
        ++report.invalid_box;
        continue;
      }
      if (box->area() < options.min_area) {
        ++report.too_small;
        continue;
      }
      if (c.kind == ConceptKind::region) {
        const bool dup = std::any_of(region_texts.begin(), region_texts.end(), [&](const auto& t) {
          return text_overlap(t, c.text) > options.max_region_overlap;
        });
        if (dup) {
          ++report.overlapping_region_text;
          continue;
        }
        region_texts.push_back(c.text);
      }
      kept.concepts.push_back({*box, c.text, c.kind});
      ++report.kept_concepts;
    }
    out.push_back(std::move(kept));
  }
  return out;
}

// ---------------------------------------------------------------------------

Vocabulary::Vocabulary() {
  for (const char* s : {"[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"}) add(s);
}

void Vocabulary::add(const std::string& token) {
  if (index_.count(token)) return;
  index_.emplace(token, static_cast<std::int64_t>(tokens_.size()));
  tokens_.push_back(token);
}

Vocabulary Vocabulary::from_records(const std::vector<MultiGrainedRecord>& records) {
  std::set<std::string> words;
  for (const auto& r : records) {
    if (r.caption) {
      for (auto& w : split_words(*r.caption)) words.insert(std::move(w));
    }
    for (const auto& c : r.concepts) {
      for (auto& w : split_words(c.text)) words.insert(std::move(w));
    }
  }
  Vocabulary v;
  for (const auto& w : words) v.add(w);
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open vocabulary " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  Vocabulary v;
  if (lines.size() < static_cast<std::size_t>(kNumSpecial)) {
    throw FormatError("vocabulary " + path.string() + " lacks the special tokens");
  }
  for (std::int64_t i = 0; i < kNumSpecial; ++i) {
    if (lines[static_cast<std::size_t>(i)] != v.tokens_[static_cast<std::size_t>(i)]) {
      throw FormatError("vocabulary line " + std::to_string(i) + " must be " +
                        v.tokens_[static_cast<std::size_t>(i)]);
    }
  }
  for (std::size_t i = static_cast<std::size_t>(kNumSpecial); i < lines.size(); ++i) {
    if (v.index_.count(lines[i])) throw FormatError("duplicate vocabulary token " + lines[i]);
    v.add(lines[i]);
  }
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

std::int64_t Vocabulary::id(const std::string& token) const {
  const auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(std::int64_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw ContractError("token id " + std::to_string(id) + " outside vocabulary");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::int64_t> Vocabulary::encode(const std::string& text, std::size_t max_len) const {
  if (max_len < 2) throw ContractError("max_len must leave room for [CLS] and [SEP]");
  std::vector<std::int64_t> ids{kCls};
  for (const auto& w : split_words(text)) {
    if (ids.size() + 1 >= max_len) break;
    ids.push_back(id(w));
  }
  ids.push_back(kSep);
  return ids;
}

std::string Vocabulary::decode(const std::vector<std::int64_t>& ids) const {
  std::string out;
  for (auto id : ids) {
    if (!out.empty()) out.push_back(' ');
    out += token(id);
  }
  return out;
}

// ---------------------------------------------------------------------------

void write_ppm(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.rgb.data()),
            static_cast<std::streamsize>(image.rgb.size()));
}

namespace {

std::string next_ppm_token(std::istream& in) {
  std::string tok;
  while (in) {
    const int ch = in.get();
    if (ch == EOF) break;
    if (ch == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

}  // namespace

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open image " + path.string());
  if (next_ppm_token(in) != "P6") throw FormatError(path.string() + ": not a P6 PPM");
  Image img;
  try {
    img.width = std::stoul(next_ppm_token(in));
    img.height = std::stoul(next_ppm_token(in));
    if (std::stoul(next_ppm_token(in)) != 255) {
      throw FormatError(path.string() + ": only 8-bit PPM is supported");
    }
  } catch (const std::logic_error&) {
    throw FormatError(path.string() + ": malformed PPM header");
  }
  img.rgb.resize(img.width * img.height * 3);
  if (!in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()))) {
    throw FormatError(path.string() + ": truncated pixel data");
  }
  return img;
}

Dataset load_dataset(const std::filesystem::path& root, const std::string& jsonl) {
  auto loaded = read_records(root / jsonl);
  Dataset out;
  out.reserve(loaded.records.size());
  for (auto& r : loaded.records) {
    Image img = read_ppm(root / r.image_path);
    out.push_back({std::move(r), std::move(img)});
  }
  return out;
}

}  // namespace xgrain
