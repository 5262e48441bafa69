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

// Acceptance suite: one PASS/FAIL line per criterion.
//
// Usage: acceptance [--work DIR] [criterion ...]
// Criteria 7 to 10 train the toy model on the synthetic corpus; the first training
// run is shared by 7, 9 and 10.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "random_tensors.hpp"
#include "xgrain/evaluation.hpp"
#include "xgrain/kernels.hpp"
#include "xgrain/log.hpp"
#include "xgrain/objectives.hpp"
#include "xgrain/synthetic.hpp"
#include "xgrain/training.hpp"

namespace fs = std::filesystem;
using namespace xgrain;
using xgrain::testing::grad_check;
using xgrain::testing::probe;
using xgrain::testing::randn;

namespace {

constexpr std::uint64_t kCorpusSeed = 1;
constexpr std::size_t kCorpusImages = 2000;
constexpr std::size_t kSteps = 3000;
constexpr std::size_t kGallery = 200;
constexpr std::size_t kHeatmapPhrases = 100;
const std::vector<std::uint64_t> kAblationSeeds{0, 1, 2};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int id, bool pass, const std::string& what, const std::string& measured) {
  if (!pass) ++failures;
  std::cout << (pass ? "PASS" : "FAIL") << " criterion " << id << ": " << what << " | "
            << measured << std::endl;
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream o;
  o << std::setprecision(precision) << v;
  return o.str();
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness

void criterion_1() {
  const auto t0 = Clock::now();
  double worst = 0;
  std::string worst_name;
  auto check = [&](const std::string& name, const testing::LossFn& fn, std::vector<Tensor> in) {
    const double e = grad_check(fn, std::move(in)).max_rel_error;
    if (e >= worst) {
      worst = e;
      worst_name = name;
    }
  };
  const Tensor a = testing::away_from_zero({3, 4}, 10);
  const Tensor b = testing::away_from_zero({3, 4}, 11);
  const Tensor p = testing::positive({3, 4}, 14);
  const Tensor row = testing::away_from_zero({4}, 12);
  check("add", [&](Tape& t) { return probe(t, ops::add(t, a, row)); }, {a, row});
  check("sub", [&](Tape& t) { return probe(t, ops::sub(t, a, p)); }, {a, p});
  check("mul", [&](Tape& t) { return probe(t, ops::mul(t, a, b)); }, {a, b});
  check("div", [&](Tape& t) { return probe(t, ops::div(t, a, p)); }, {a, p});
  check("minimum", [&](Tape& t) { return probe(t, ops::minimum(t, a, b)); }, {a, b});
  check("maximum", [&](Tape& t) { return probe(t, ops::maximum(t, a, b)); }, {a, b});
  check("exp", [&](Tape& t) { return probe(t, ops::exp(t, a)); }, {a});
  check("log", [&](Tape& t) { return probe(t, ops::log(t, p)); }, {p});
  check("sigmoid", [&](Tape& t) { return probe(t, ops::sigmoid(t, a)); }, {a});
  check("gelu", [&](Tape& t) { return probe(t, ops::gelu(t, a)); }, {a});
  check("relu", [&](Tape& t) { return probe(t, ops::relu(t, a)); }, {a});
  check("abs", [&](Tape& t) { return probe(t, ops::abs(t, a)); }, {a});
  check("clamp_min", [&](Tape& t) { return probe(t, ops::clamp_min(t, a, 0.05)); }, {a});

  const Tensor x = randn({2, 3, 4}, 20);
  const Tensor w = randn({4, 5}, 21);
  const Tensor bias = randn({5}, 22);
  check("matmul", [&](Tape& t) { return probe(t, ops::matmul(t, x, w)); }, {x, w});
  check("linear", [&](Tape& t) { return probe(t, ops::linear(t, x, w, bias)); }, {x, w, bias});
  check("transpose", [&](Tape& t) { return probe(t, ops::transpose(t, x)); }, {x});
  check("reshape", [&](Tape& t) { return probe(t, ops::reshape(t, x, {6, 4})); }, {x});
  for (std::size_t axis = 0; axis < 3; ++axis) {
    check("softmax", [&](Tape& t) { return probe(t, ops::softmax(t, x, axis)); }, {x});
    check("sum_axis", [&](Tape& t) { return probe(t, ops::sum_axis(t, x, axis)); }, {x});
    check("mean_axis", [&](Tape& t) { return probe(t, ops::mean_axis(t, x, axis)); }, {x});
    check("slice", [&](Tape& t) { return probe(t, ops::slice(t, x, axis, 1, 1)); }, {x});
    const std::vector<Tensor> parts{x, x};
    check("concat", [&](Tape& t) { return probe(t, ops::concat(t, parts, axis)); }, {x});
  }
  const Tensor m = randn({5, 6}, 30);
  const Tensor gamma = randn({6}, 31);
  const Tensor beta = randn({6}, 32);
  check("layer_norm", [&](Tape& t) { return probe(t, ops::layer_norm(t, m, gamma, beta)); },
        {m, gamma, beta});
  check("l2_normalize", [&](Tape& t) { return probe(t, ops::l2_normalize(t, m)); }, {m});
  const Tensor table = randn({7, 3}, 33);
  const std::vector<std::int64_t> ids{3, 0, 3, 6};
  check("embedding", [&](Tape& t) { return probe(t, ops::embedding(t, table, ids)); }, {table});
  const std::vector<std::size_t> rows{4, 4, 1};
  check("gather_rows", [&](Tape& t) { return probe(t, ops::gather_rows(t, m, rows)); }, {m});
  const std::vector<std::size_t> targets{0, 5, 2, 2, 1};
  check("cross_entropy", [&](Tape& t) { return ops::cross_entropy(t, m, targets); }, {m});

  std::vector<std::uint8_t> valid(11, 1);
  valid[3] = 0;
  auto layout = std::make_shared<const kernels::AttentionLayout>(
      std::vector<kernels::AttentionSegment>{{0, 3, 0, 5}, {3, 4, 0, 5}, {7, 2, 5, 6}}, 2, valid);
  const Tensor q = randn({9, 8}, 40);
  const Tensor k = randn({11, 8}, 41);
  const Tensor v = randn({11, 8}, 42);
  check("attention",
        [&](Tape& t) {
          return probe(t, ops::attention_apply(t, ops::attention_probs(t, q, k, layout), v, layout));
        },
        {q, k, v});

  // Full loss on a two-record batch, every parameter.
  const auto tb = testing::tiny_batch();
  Model model(testing::tiny_config(), DType::f64, 9);
  std::vector<Tensor> params;
  for (auto& np : model.parameters()) params.push_back(np.value);
  const auto full = grad_check(
      [&](Tape& tape) {
        objectives::Rng rng(10);
        return objectives::total_loss(tape, model, tb.batch, rng).loss;
      },
      params);
  if (full.max_rel_error >= worst) {
    worst = full.max_rel_error;
    worst_name = "total loss";
  }
  const double secs = seconds_since(t0);
  report(1, worst < 1e-4 && secs < 120, "gradients vs central differences (f64), rel < 1e-4, < 2 min",
         "max rel " + fmt(worst) + " (" + worst_name + "), " + std::to_string(full.checked) +
             " loss coordinates, " + fmt(secs, 3) + " s");
}

// ---------------------------------------------------------------------------
// 2. GIoU oracle

void criterion_2() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2026);
  double worst = 0;
  for (int i = 0; i < 200; ++i) {
    const NormBox a = testing::random_box(rng);
    const NormBox b = testing::random_box(rng);
    worst = std::max(worst, std::abs(giou(a, b) - testing::rasterized_overlap(a, b).giou));
  }
  bool exact = true;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const NormBox outer = testing::random_box(rng, 0.2);
    const double w = outer.w * (0.1 + 0.9 * unit(rng));
    const double h = outer.h * (0.1 + 0.9 * unit(rng));
    const double x1 = outer.x1() + unit(rng) * (outer.w - w);
    const double y1 = outer.y1() + unit(rng) * (outer.h - h);
    const NormBox inner = NormBox::from_corners(x1, y1, x1 + w, y1 + h);
    exact = exact && giou(outer, inner) == iou(outer, inner) && giou(inner, outer) == iou(inner, outer);
  }
  const double secs = seconds_since(t0);
  report(2, worst < 5e-3 && exact && secs < 60,
         "GIoU vs 1000x1000 raster < 5e-3 on 200 pairs; giou == iou on containment",
         "max diff " + fmt(worst) + ", containment exact " + (exact ? "yes" : "no") + ", " +
             fmt(secs, 3) + " s");
}

// ---------------------------------------------------------------------------
// 3. Closed-form loss values

void criterion_3() {
  double worst_cl = 0;
  for (std::size_t n : {2u, 8u, 32u}) {
    Tape tape;
    const Tensor logits = Tensor::from_values(std::vector<double>(n * n, 0.37), {n, n});
    worst_cl = std::max(worst_cl, std::abs(objectives::contrastive_loss(tape, logits).item() -
                                           std::log(static_cast<double>(n))));
  }
  Model model(testing::tiny_config(), DType::f64, 1);
  for (const char* name : {"head.itm.weight", "head.itm.bias"}) {
    Tensor& t = model.param(name);
    for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, 0.0);
  }
  Tape tape;
  const double match = objectives::matching_loss(tape, model, randn({6, 8}, 4), {1, 0, 0, 1, 0, 0}).item();
  const Tensor boxes = objectives::boxes_tensor(
      {NormBox{0.3, 0.4, 0.2, 0.5}, NormBox{0.6, 0.5, 0.4, 0.3}, NormBox::whole_image()}, DType::f64);
  const double bbox = objectives::loss_bbox(tape, boxes, boxes).item();
  const double err_match = std::abs(match - std::numbers::ln2);
  report(3, worst_cl <= 1e-9 && err_match <= 1e-9 && std::abs(bbox) <= 1e-9,
         "uniform contrastive = ln N, zero-logit matching = ln 2, perfect L_bbox = 0 (+-1e-9)",
         "contrastive err " + fmt(worst_cl) + ", matching err " + fmt(err_match) + ", bbox " + fmt(bbox));
}

// ---------------------------------------------------------------------------
// 4. MLM masking statistics

void criterion_4() {
  // A random replacement that draws the original token reads as kept; a large
  // vocabulary makes that rare (about 1e-3 of random draws).
  constexpr std::size_t kMlmVocab = 1000;
  std::vector<std::int64_t> ids{Vocabulary::kCls};
  for (int i = 0; i < 100; ++i) ids.push_back(Vocabulary::kNumSpecial + i * 7);
  ids.push_back(Vocabulary::kSep);
  objectives::Rng rng(4);
  std::size_t tokens = 0, selected = 0, masked = 0, randomized = 0, kept = 0;
  while (tokens < 100000) {
    const auto m = objectives::apply_mlm_mask(ids, kMlmVocab, rng);
    tokens += 100;
    selected += m.masked_positions.size();
    for (std::size_t p : m.masked_positions) {
      if (m.input_ids[p] == Vocabulary::kMask) {
        ++masked;
      } else if (m.input_ids[p] == m.original_ids[p]) {
        ++kept;
      } else {
        ++randomized;
      }
    }
  }
  const double sel = static_cast<double>(selected) / static_cast<double>(tokens);
  const double s = static_cast<double>(selected);
  const double fm = masked / s, fr = randomized / s, fk = kept / s;
  const bool pass = std::abs(sel - 0.25) <= 0.005 && std::abs(fm - 0.80) <= 0.01 &&
                    std::abs(fr - 0.10) <= 0.01 && std::abs(fk - 0.10) <= 0.01;
  report(4, pass, "MLM over 100,000 tokens: selection 0.25 +-0.005, split 0.80/0.10/0.10 +-0.01",
         "selection " + fmt(sel) + ", mask " + fmt(fm) + ", random " + fmt(fr) + ", kept " + fmt(fk));
}

// ---------------------------------------------------------------------------
// Shared corpus and training runs

struct CorpusData {
  synthetic::Corpus corpus;
  Dataset train;
  Dataset heldout;
  Vocabulary vocab;
};

const CorpusData& corpus_data() {
  static const CorpusData data = [] {
    CorpusData d;
    d.corpus = synthetic::generate_corpus(kCorpusSeed, kCorpusImages);
    FilterReport report;
    const auto records = filter_annotations(d.corpus.train, report);
    d.vocab = Vocabulary::from_records(records);
    d.train = d.corpus.train_dataset();
    for (std::size_t i = 0; i < d.train.size(); ++i) d.train[i].record = records[i];
    d.heldout = d.corpus.heldout_dataset();
    return d;
  }();
  return data;
}

// 5. Batch composition

void criterion_5() {
  const auto& d = corpus_data();
  const auto prepared = training::prepare(d.train, d.vocab, 20);
  objectives::Rng rng(5);
  std::size_t good = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto tb = training::assemble_batch(prepared, 8, {}, rng);
    std::size_t annotated = 0;
    for (std::size_t s : tb.samples) annotated += d.train[s].record.annotated();
    good += tb.samples.size() == 8 && annotated == 4;
  }
  report(5, good == 1000, "1,000 batches of 8 each hold exactly 4 annotated images",
         std::to_string(good) + " of 1000");
}

// 6. Schedule

void criterion_6() {
  const training::Schedule s{1e-5, 1e-4, 1e-5, 2500, 10000};
  const bool anchors = training::lr_at(0, s) == 1e-5 && training::lr_at(2500, s) == 1e-4 &&
                       training::lr_at(10000, s) == 1e-5;
  // Independent linear interpolation between the anchors.
  auto line = [](double x0, double y0, double x1, double y1, double x) {
    return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
  };
  double worst = 0;
  for (std::size_t step : {1u, 400u, 1250u, 2000u, 2499u, 2501u, 4000u, 6250u, 8000u, 9999u}) {
    const double expect = step <= 2500 ? line(0, 1e-5, 2500, 1e-4, step)
                                       : line(2500, 1e-4, 10000, 1e-5, step);
    worst = std::max(worst, std::abs(training::lr_at(step, s) - expect) / expect);
  }
  report(6, anchors && worst < 1e-12, "lr 1e-5 -> 1e-4 (2500 steps) -> 1e-5: exact anchors, linear",
         std::string("anchors ") + (anchors ? "exact" : "wrong") + ", max rel dev " + fmt(worst) +
             " at 10 interior steps");
}

struct RunMetrics {
  double hit_rate = 0;
  double mean_iou = 0;
  double recall1 = 0;
  double chance1 = 0;
  double mlm = 0;
  double mlm_baseline = 0;
  double seconds = 0;
  double loss_first = 0, loss_last = 0;
};

RunMetrics evaluate(const Model& model) {
  const auto& d = corpus_data();
  RunMetrics m;
  const auto preds = evaluation::ground(model, evaluation::grounding_items(d.heldout, d.vocab, 20));
  for (const auto& p : preds) {
    m.hit_rate += p.hit;
    m.mean_iou += p.iou;
  }
  m.hit_rate /= static_cast<double>(preds.size());
  m.mean_iou /= static_cast<double>(preds.size());
  const auto g = evaluation::caption_gallery(d.heldout, d.vocab, 20, kGallery);
  const auto r = evaluation::retrieve(model, g.images, g.texts, g.relevant, 16);
  m.recall1 = r.image_retrieval.r1;
  m.chance1 = r.image_retrieval_chance_r1;
  std::vector<std::vector<std::int64_t>> training_texts;
  for (const auto& s : d.train) training_texts.push_back(d.vocab.encode(*s.record.caption, 20));
  const auto mlm = evaluation::mlm_accuracy(model, g.images, g.texts, training_texts, 99);
  m.mlm = mlm.accuracy;
  m.mlm_baseline = mlm.unigram_baseline;
  return m;
}

struct Run {
  fs::path dir;
  RunMetrics metrics;
  std::optional<Model> model;
};

fs::path work_dir = fs::temp_directory_path() / "xgrain_acceptance";

Run train_run(const std::string& name, std::uint64_t seed, const training::AblationFlags& flags) {
  const auto& d = corpus_data();
  training::TrainConfig cfg;
  cfg.seed = seed;
  cfg.schedule.total_steps = kSteps;
  Run run;
  run.dir = work_dir / name;
  fs::remove_all(run.dir);
  std::cout << "  training " << name << " (" << kSteps << " steps)" << std::endl;
  const auto t0 = Clock::now();
  auto result = training::train(cfg, d.train, d.vocab, flags, run.dir);
  run.metrics = evaluate(*result.model);
  run.metrics.seconds = seconds_since(t0);
  const std::size_t tenth = std::max<std::size_t>(1, result.metrics.size() / 10);
  for (std::size_t i = 0; i < tenth; ++i) {
    run.metrics.loss_first += result.metrics[i].total / tenth;
    run.metrics.loss_last += result.metrics[result.metrics.size() - 1 - i].total / tenth;
  }
  run.model = std::move(result.model);
  std::cout << "  " << name << ": hit " << fmt(run.metrics.hit_rate) << ", R@1 "
            << fmt(run.metrics.recall1) << ", mlm " << fmt(run.metrics.mlm) << " vs "
            << fmt(run.metrics.mlm_baseline) << ", " << fmt(run.metrics.seconds, 4) << " s"
            << std::endl;
  return run;
}

Run& main_run() {
  static Run run = train_run("full_seed0", kAblationSeeds[0], {});
  return run;
}

// 7. End-to-end training

void criterion_7() {
  const Run& run = main_run();
  const auto& m = run.metrics;
  report(7, m.seconds < 1800, "7 runtime: 2,000 images, 3,000 steps < 30 min",
         fmt(m.seconds, 4) + " s including evaluation");
  report(7, m.hit_rate >= 0.70, "7a held-out grounding hit-rate@0.5 >= 0.70", fmt(m.hit_rate));
  report(7, m.recall1 >= 10 * m.chance1, "7b text->image R@1 >= 10x chance on 200-pair gallery",
         "R@1 " + fmt(m.recall1) + " vs chance " + fmt(m.chance1));
  report(7, m.mlm >= 3 * m.mlm_baseline, "7c masked-token accuracy >= 3x unigram baseline",
         fmt(m.mlm) + " vs baseline " + fmt(m.mlm_baseline));
  report(7, m.mean_iou >= 0.5, "7 held-out mean IoU of predicted boxes >= 0.5", fmt(m.mean_iou));
  report(7, m.loss_last < m.loss_first, "7 mean total loss of the last 10% of steps < first 10%",
         fmt(m.loss_last) + " vs " + fmt(m.loss_first));
}

// 8. Ablation ordering

void criterion_8() {
  int ordered_votes = 0, worst_votes = 0;
  std::ostringstream detail;
  for (std::uint64_t seed : kAblationSeeds) {
    const std::string tag = "_seed" + std::to_string(seed);
    const RunMetrics full = seed == kAblationSeeds[0] ? main_run().metrics
                                                      : train_run("full" + tag, seed, {}).metrics;
    const RunMetrics no_obj = train_run("no_object" + tag, seed, {true, false, false}).metrics;
    const RunMetrics no_box = train_run("no_bbox" + tag, seed, {false, false, true}).metrics;
    const RunMetrics no_all = train_run("no_all" + tag, seed, {true, true, true}).metrics;
    const bool ordered = full.hit_rate >= no_obj.hit_rate && no_obj.hit_rate >= no_box.hit_rate;
    auto score = [](const RunMetrics& r) { return r.hit_rate + r.recall1; };
    const bool worst = score(no_all) < score(full) && score(no_all) < score(no_obj) &&
                       score(no_all) < score(no_box);
    ordered_votes += ordered;
    worst_votes += worst;
    detail << " seed " << seed << ": hit " << fmt(full.hit_rate, 3) << "/" << fmt(no_obj.hit_rate, 3)
           << "/" << fmt(no_box.hit_rate, 3) << ", sum " << fmt(score(full), 3) << "/"
           << fmt(score(no_obj), 3) << "/" << fmt(score(no_box), 3) << "/" << fmt(score(no_all), 3)
           << ";";
  }
  const int majority = static_cast<int>(kAblationSeeds.size()) / 2 + 1;
  report(8, ordered_votes >= majority && worst_votes >= majority,
         "ablations: hit full >= w/o-object >= w/o-bbox-loss; w/o-all worst on hit+R@1 (majority of 3 seeds)",
         "ordering " + std::to_string(ordered_votes) + "/3, w/o-all worst " +
             std::to_string(worst_votes) + "/3;" + detail.str());
}

// 9. Determinism

void criterion_9() {
  const Run& first = main_run();
  const Run second = train_run("full_seed0_repeat", kAblationSeeds[0], {});
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  const std::string a = slurp(first.dir / "metrics.jsonl");
  const std::string b = slurp(second.dir / "metrics.jsonl");
  report(9, !a.empty() && a == b, "two runs of criterion 7 give identical metrics.jsonl",
         std::to_string(a.size()) + " and " + std::to_string(b.size()) + " bytes, " +
             (a == b ? "identical" : "different"));
}

// 10. Heatmap localization

void criterion_10() {
  const Model& model = *main_run().model;
  const auto& d = corpus_data();
  const std::size_t layer = evaluation::default_heatmap_layer(model.config());
  const PatchGrid grid = model.config().grid();
  std::size_t inside = 0, total = 0;
  for (const Sample& s : d.heldout) {
    const auto& scene = d.corpus.scene(s.record.image_id);
    for (const auto& region : scene.regions) {
      if (total == kHeatmapPhrases) break;
      const auto maps =
          evaluation::heatmaps(model, s.image, d.vocab.encode(region.text, 20), layer, &d.vocab);
      // Phrases read "<color> <shape> <relation> <color> <shape>"; the subject noun is the second word.
      const NormBox cell = grid.cell_box(maps.at(1).argmax());
      const NormBox& box = scene.objects[region.subject].box;
      inside += cell.cx >= box.x1() && cell.cx <= box.x2() && cell.cy >= box.y1() && cell.cy <= box.y2();
      ++total;
    }
  }
  const double rate = total ? static_cast<double>(inside) / static_cast<double>(total) : 0.0;
  report(10, total == kHeatmapPhrases && rate >= 0.60,
         "subject-noun heatmap argmax inside its gold box on >= 60% of 100 held-out region phrases",
         fmt(rate) + " of " + std::to_string(total) + " (layer " + std::to_string(layer) + ")");
}

}  // namespace

int main(int argc, char** argv) {
  kernels::configure_threads();
  log_level() = LogLevel::warn;
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--work" && i + 1 < argc) {
      work_dir = argv[++i];
    } else {
      try {
        selected.insert(std::stoi(arg));
      } catch (const std::exception&) {
        std::cerr << "usage: acceptance [--work DIR] [criterion ...]\n";
        return 2;
      }
    }
  }
  const std::map<int, std::function<void()>> criteria{
      {1, criterion_1}, {2, criterion_2}, {3, criterion_3}, {4, criterion_4},  {5, criterion_5},
      {6, criterion_6}, {7, criterion_7}, {9, criterion_9}, {10, criterion_10}, {8, criterion_8}};
  // Run 8 last: it is the longest and reuses the criterion 7 model.
  for (int id : {1, 2, 3, 4, 5, 6, 7, 9, 10, 8}) {
    if (!selected.empty() && !selected.count(id)) continue;
    try {
      criteria.at(id)();
    } catch (const std::exception& e) {
      report(id, false, "aborted", e.what());
    }
  }
  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << std::endl;
  return failures == 0 ? 0 : 1;
}
