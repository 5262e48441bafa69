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

// xgrain command line: corpus generation, training, and evaluation.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
// Every command writes manifest.json into its output directory.

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "xgrain/errors.hpp"
#include "xgrain/evaluation.hpp"
#include "xgrain/kernels.hpp"
#include "xgrain/log.hpp"
#include "xgrain/synthetic.hpp"
#include "xgrain/training.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace xgrain;

namespace {

/// Bad flags, missing inputs, or invalid configuration (exit 2).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string hex(const unsigned char* p, unsigned n) {
  std::ostringstream o;
  for (unsigned i = 0; i < n; ++i) o << std::hex << std::setw(2) << std::setfill('0') << int(p[i]);
  return o.str();
}

std::string sha1(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned n = 0;
  EVP_Digest(bytes.data(), bytes.size(), md, &n, EVP_sha1(), nullptr);
  return hex(md, n);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

/// Git blob hash of a file; for a directory, the blob hash of its sorted
/// "<relative path> <blob hash>" listing.
std::string content_hash(const fs::path& p) {
  auto blob = [](const std::string& data) {
    return sha1("blob " + std::to_string(data.size()) + '\0' + data);
  };
  if (!fs::is_directory(p)) return blob(read_file(p));
  std::vector<std::string> lines;
  for (const auto& e : fs::recursive_directory_iterator(p)) {
    if (!e.is_regular_file()) continue;
    lines.push_back(fs::relative(e.path(), p).generic_string() + ' ' + blob(read_file(e.path())));
  }
  std::sort(lines.begin(), lines.end());
  std::string listing;
  for (const auto& l : lines) listing += l + '\n';
  return blob(listing);
}

std::string now_utc() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class Manifest {
 public:
  Manifest(std::string command, fs::path out) : out_(std::move(out)) {
    doc_["command"] = std::move(command);
    doc_["started_at"] = now_utc();
  }
  void config(ordered_json c) { doc_["config"] = std::move(c); }
  void seed(std::uint64_t s) { doc_["seed"] = s; }
  void inputs(const std::vector<fs::path>& paths) {
    std::string joined;
    ordered_json list = ordered_json::array();
    for (const auto& p : paths) {
      const std::string h = content_hash(p);
      list.push_back({{"path", p.string()}, {"hash", h}});
      joined += h;
    }
    doc_["inputs"] = list;
    doc_["input_hash"] = sha1(joined);
  }
  void write() {
    doc_["finished_at"] = now_utc();
    fs::create_directories(out_);
    std::ofstream(out_ / "manifest.json") << doc_.dump(2) << '\n';
  }

 private:
  fs::path out_;
  ordered_json doc_;
};

ordered_json kv_json(const KeyValues& kv) {
  ordered_json j = ordered_json::object();
  for (const auto& [k, v] : kv) j[k] = v;
  return j;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream(path) << j.dump(2) << '\n';
}

Model load_checkpoint(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) throw UsageError("no checkpoint at " + dir.string());
  return Model::load(dir);
}

Vocabulary load_vocab(const fs::path& data) {
  if (!fs::exists(data / "vocab.txt")) throw UsageError("no vocab.txt in " + data.string());
  return Vocabulary::load(data / "vocab.txt");
}

Dataset load_split(const fs::path& data, const std::string& split) {
  const std::string file = split == "train" ? "records.jsonl" : "heldout.jsonl";
  if (!fs::exists(data / file)) throw UsageError("no " + file + " in " + data.string());
  return load_dataset(data, file);
}

std::size_t clamp_k(std::size_t k, std::size_t gallery) {
  if (k > gallery) {
    log_warn("--k " + std::to_string(k) + " exceeds the gallery of " + std::to_string(gallery) +
             "; clamped");
    return gallery;
  }
  return k;
}

// ---------------------------------------------------------------------------

struct DatagenArgs {
  std::uint64_t seed = 0;
  std::size_t n = 0;
  fs::path out;
};

void run_datagen(const DatagenArgs& a) {
  if (a.n == 0) throw UsageError("--n must be at least 1");
  Manifest m("datagen", a.out);
  m.seed(a.seed);
  m.config({{"n", a.n}});
  const synthetic::Corpus corpus = synthetic::generate_corpus(a.seed, a.n);
  FilterReport train_report, held_report;
  const auto train = filter_annotations(corpus.train, train_report);
  const auto held = filter_annotations(corpus.heldout, held_report);
  synthetic::write_corpus(a.out, corpus, train, held);
  log_info("datagen: " + std::to_string(train.size()) + " train and " + std::to_string(held.size()) +
           " held-out records in " + a.out.string());
  m.inputs({});
  m.write();
}

struct TrainArgs {
  fs::path config;
  fs::path data;
  std::size_t steps = 0;
  bool no_object = false, no_region = false, no_bbox_loss = false;
  fs::path out;
  fs::path resume;
  std::vector<std::string> overrides;
};

void run_train(const TrainArgs& a) {
  training::TrainConfig cfg;
  try {
    if (!a.config.empty()) {
      if (!fs::exists(a.config)) throw UsageError("no config file " + a.config.string());
      cfg = training::load_train_config(a.config);
    }
    for (const auto& o : a.overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects KEY=VALUE, got '" + o + "'");
      if (!cfg.set(o.substr(0, eq), o.substr(eq + 1))) throw UsageError("unknown config key '" + o.substr(0, eq) + "'");
    }
    if (a.steps > 0) cfg.schedule.total_steps = a.steps;
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  const Vocabulary vocab = load_vocab(a.data);
  const Dataset raw = load_split(a.data, "train");
  std::vector<MultiGrainedRecord> records;
  for (const auto& s : raw) records.push_back(s.record);
  FilterReport report;
  records = filter_annotations(records, report);
  Dataset dataset;
  for (std::size_t i = 0; i < raw.size(); ++i) dataset.push_back({records[i], raw[i].image});
  if (!a.resume.empty() && !fs::exists(a.resume / "manifest.json")) {
    throw UsageError("no checkpoint at " + a.resume.string());
  }

  Manifest m("train", a.out);
  m.seed(cfg.seed);
  ordered_json c = kv_json(cfg.to_key_values());
  c["no_object"] = a.no_object;
  c["no_region"] = a.no_region;
  c["no_bbox_loss"] = a.no_bbox_loss;
  if (!a.resume.empty()) c["resume"] = a.resume.string();
  m.config(c);
  std::vector<fs::path> inputs{a.data};
  if (!a.config.empty()) inputs.push_back(a.config);
  m.inputs(inputs);

  std::optional<fs::path> resume;
  if (!a.resume.empty()) resume = a.resume;
  try {
    const auto result = training::train(cfg, dataset, vocab, {a.no_object, a.no_region, a.no_bbox_loss}, a.out, resume);
    if (!result.metrics.empty()) log_info("train: " + training::metrics_line(result.metrics.back()));
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  m.write();
}

struct EvalArgs {
  fs::path ckpt;
  fs::path data;
  fs::path out;
  std::string split = "heldout";
  std::size_t k = 16;
  std::size_t limit = 200;
  long layer = -1;
};

void run_eval_retrieval(const EvalArgs& a) {
  const Model model = load_checkpoint(a.ckpt);
  const Vocabulary vocab = load_vocab(a.data);
  const Dataset data = load_split(a.data, a.split);
  Manifest m("eval-retrieval", a.out);
  m.config({{"split", a.split}, {"k", a.k}, {"limit", a.limit}});
  m.inputs({a.ckpt, a.data});
  const auto g = evaluation::caption_gallery(data, vocab, model.config().max_text_len, a.limit);
  if (g.images.empty()) throw UsageError("no captioned samples in the " + a.split + " split");
  const std::size_t k = clamp_k(a.k, g.images.size());
  const auto r = evaluation::retrieve(model, g.images, g.texts, g.relevant, k);
  const nlohmann::json j = evaluation::to_json(r);
  write_json(a.out / "retrieval.json", j);
  std::cout << j.dump() << '\n';
  m.write();
}

void run_eval_grounding(const EvalArgs& a) {
  const Model model = load_checkpoint(a.ckpt);
  const Vocabulary vocab = load_vocab(a.data);
  const Dataset data = load_split(a.data, a.split);
  Manifest m("eval-grounding", a.out);
  m.config({{"split", a.split}, {"threshold", 0.5}});
  m.inputs({a.ckpt, a.data});
  const auto items = evaluation::grounding_items(data, vocab, model.config().max_text_len);
  if (items.empty()) throw UsageError("no boxed concepts in the " + a.split + " split");
  const auto preds = evaluation::ground(model, items);
  nlohmann::json per = nlohmann::json::array();
  double hits = 0, iou = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    hits += preds[i].hit;
    iou += preds[i].iou;
    const NormBox& b = preds[i].predicted;
    per.push_back({{"image_id", items[i].image_id}, {"text", items[i].text},
                   {"predicted", {b.cx, b.cy, b.w, b.h}},
                   {"gold", {items[i].gold.cx, items[i].gold.cy, items[i].gold.w, items[i].gold.h}},
                   {"iou", preds[i].iou}, {"hit", preds[i].hit}});
  }
  const double n = static_cast<double>(items.size());
  const nlohmann::json summary{{"items", items.size()}, {"hit_rate", hits / n}, {"mean_iou", iou / n}};
  write_json(a.out / "grounding.json", {{"summary", summary}, {"items", per}});
  std::cout << summary.dump() << '\n';
  m.write();
}

void run_heatmaps(const EvalArgs& a) {
  const Model model = load_checkpoint(a.ckpt);
  const Vocabulary vocab = load_vocab(a.data);
  const Dataset data = load_split(a.data, a.split);
  const std::size_t layer = a.layer < 0 ? evaluation::default_heatmap_layer(model.config())
                                        : static_cast<std::size_t>(a.layer);
  if (layer >= model.config().fusion_layers) {
    throw UsageError("--layer " + std::to_string(layer) + " outside the " +
                     std::to_string(model.config().fusion_layers) + " fusion layers");
  }
  Manifest m("heatmaps", a.out);
  m.config({{"split", a.split}, {"layer", layer}, {"limit", a.limit}});
  m.inputs({a.ckpt, a.data});
  fs::create_directories(a.out / "overlays");
  nlohmann::json all = nlohmann::json::array();
  std::size_t done = 0;
  for (const Sample& s : data) {
    if (a.limit > 0 && done == a.limit) break;
    // The first region phrase, else the first concept, else the caption.
    std::string text;
    for (const auto& c : s.record.concepts) {
      if (c.kind == ConceptKind::region) {
        text = c.text;
        break;
      }
    }
    if (text.empty() && !s.record.concepts.empty()) text = s.record.concepts.front().text;
    if (text.empty() && s.record.caption) text = *s.record.caption;
    if (text.empty()) continue;
    const auto maps = evaluation::heatmaps(model, s.image, vocab.encode(text, model.config().max_text_len),
                                           layer, &vocab);
    nlohmann::json words = nlohmann::json::array();
    for (const auto& hm : maps) {
      const std::string name = s.record.image_id + "_" + std::to_string(hm.word_index) + ".ppm";
      write_ppm(a.out / "overlays" / name, evaluation::overlay(s.image, hm));
      words.push_back({{"word_index", hm.word_index}, {"word", hm.word}, {"argmax", hm.argmax()},
                       {"cells", hm.cells}, {"overlay", "overlays/" + name}});
    }
    all.push_back({{"image_id", s.record.image_id}, {"text", text}, {"layer", layer},
                   {"grid", {model.config().grid().grid_h, model.config().grid().grid_w}},
                   {"words", words}});
    ++done;
  }
  write_json(a.out / "heatmaps.json", all);
  std::cout << "heatmaps: " << done << " texts, layer " << layer << ", written to " << a.out.string() << '\n';
  m.write();
}

void run_eval_mlm(const EvalArgs& a, std::uint64_t seed) {
  const Model model = load_checkpoint(a.ckpt);
  const Vocabulary vocab = load_vocab(a.data);
  const Dataset data = load_split(a.data, a.split);
  const Dataset train = load_split(a.data, "train");
  Manifest m("eval-mlm", a.out);
  m.seed(seed);
  m.config({{"split", a.split}, {"limit", a.limit}});
  m.inputs({a.ckpt, a.data});
  const std::size_t len = model.config().max_text_len;
  const auto g = evaluation::caption_gallery(data, vocab, len, a.limit);
  std::vector<std::vector<std::int64_t>> training_texts;
  for (const auto& s : train) {
    if (s.record.caption) training_texts.push_back(vocab.encode(*s.record.caption, len));
  }
  const auto r = evaluation::mlm_accuracy(model, g.images, g.texts, training_texts, seed);
  const nlohmann::json j{{"accuracy", r.accuracy}, {"unigram_baseline", r.unigram_baseline},
                         {"masked", r.masked}, {"unigram_token", vocab.token(r.unigram_token)}};
  write_json(a.out / "mlm.json", j);
  std::cout << j.dump() << '\n';
  m.write();
}

}  // namespace

int main(int argc, char** argv) {
  kernels::configure_threads();
  CLI::App app{"xgrain: multi-grained vision-language alignment at desk scale"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Only print warnings and errors");

  DatagenArgs dg;
  auto* datagen = app.add_subcommand("datagen", "Generate the synthetic corpus");
  datagen->add_option("--seed", dg.seed, "Corpus seed");
  datagen->add_option("--n", dg.n, "Number of images")->required();
  datagen->add_option("--out", dg.out, "Output directory")->required();

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", tr.config, "Key-value config file");
  train->add_option("--data", tr.data, "Corpus directory from datagen")->required();
  train->add_option("--steps", tr.steps, "Total steps (overrides total_steps)");
  train->add_flag("--no-object", tr.no_object, "Drop object concept pairs");
  train->add_flag("--no-region", tr.no_region, "Drop region concept pairs");
  train->add_flag("--no-bbox-loss", tr.no_bbox_loss, "Disable the box loss");
  train->add_option("--out", tr.out, "Run directory")->required();
  train->add_option("--resume", tr.resume, "Checkpoint directory to resume from");
  train->add_option("--set", tr.overrides, "Config override KEY=VALUE (repeatable)");

  EvalArgs ev;
  std::uint64_t mlm_seed = 99;
  auto add_eval = [&](const char* name, const char* help) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--ckpt", ev.ckpt, "Checkpoint directory")->required();
    sub->add_option("--data", ev.data, "Corpus directory")->required();
    sub->add_option("--out", ev.out, "Output directory")->required();
    sub->add_option("--split", ev.split, "train or heldout")->check(CLI::IsMember({"train", "heldout"}));
    return sub;
  };
  auto* retrieval = add_eval("eval-retrieval", "Two-stage image-text retrieval");
  retrieval->add_option("--k", ev.k, "Re-ranking depth");
  retrieval->add_option("--limit", ev.limit, "Gallery size (0 = whole split)");
  auto* grounding = add_eval("eval-grounding", "Box prediction accuracy");
  auto* heat = add_eval("heatmaps", "Grad-CAM cross-attention heatmaps");
  heat->add_option("--layer", ev.layer, "Fusion layer (default per model depth)");
  heat->add_option("--limit", ev.limit, "Number of images (0 = whole split)");
  auto* mlm = add_eval("eval-mlm", "Masked-token accuracy against the unigram baseline");
  mlm->add_option("--limit", ev.limit, "Number of captions (0 = whole split)");
  mlm->add_option("--seed", mlm_seed, "Masking seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (quiet) log_level() = LogLevel::warn;

  try {
    if (*datagen) run_datagen(dg);
    if (*train) run_train(tr);
    if (*retrieval) run_eval_retrieval(ev);
    if (*grounding) run_eval_grounding(ev);
    if (*heat) run_heatmaps(ev);
    if (*mlm) run_eval_mlm(ev, mlm_seed);
  } catch (const UsageError& e) {
    std::cerr << "xgrain: " << e.what() << "\n" << app.help();
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "xgrain: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
