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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "xgrain/errors.hpp"
#include "xgrain/log.hpp"
#include "xgrain/synthetic.hpp"
#include "xgrain/training.hpp"

using namespace xgrain;
using namespace xgrain::training;
using xgrain::synthetic::Corpus;
using xgrain::synthetic::generate_corpus;

namespace {

namespace fs = std::filesystem;

struct SmallCorpus {
  Corpus corpus;
  Dataset train;
  Vocabulary vocab;
};

const SmallCorpus& small_corpus() {
  static const SmallCorpus c = [] {
    SmallCorpus s;
    s.corpus = generate_corpus(3, 40);
    s.train = s.corpus.train_dataset();
    s.vocab = Vocabulary::from_records(s.corpus.train);
    return s;
  }();
  return c;
}

TrainConfig small_train_config(std::size_t steps) {
  TrainConfig cfg;
  cfg.model = xgrain::testing::tiny_config(0, 64, 16);
  cfg.model.max_text_len = 20;
  cfg.schedule.total_steps = steps;
  cfg.batch_size = 6;
  cfg.seed = 5;
  cfg.dtype = DType::f64;
  return cfg;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("xgrain_test_" + name);
  fs::remove_all(p);
  return p;
}

std::vector<NamedParameter> scalar_param(double value) {
  return {{"x", Tensor::from_values({value}, {1}).set_requires_grad(true), true}};
}

void set_grad(NamedParameter& p, double g) {
  p.value.zero_grad();
  p.value.grad<double>()[0] = g;
}

std::set<std::string> pair_ids(const TrainBatch& tb) {
  std::set<std::string> out;
  for (const auto& p : tb.batch.pairs) out.insert(p.record_id + "/" + std::to_string(int(p.kind)));
  return out;
}

}  // namespace

TEST_CASE("learning rate schedule") {
  const Schedule reference{1e-5, 1e-4, 1e-5, 2500, 10000};
  CHECK(lr_at(0, reference) == 1e-5);
  CHECK(lr_at(2500, reference) == 1e-4);
  CHECK(lr_at(10000, reference) == 1e-5);
  CHECK(lr_at(1250, reference) == doctest::Approx(5.5e-5).epsilon(1e-12));
  CHECK(lr_at(6250, reference) == doctest::Approx(5.5e-5).epsilon(1e-12));
  CHECK(std::abs(lr_at(2499, reference) - lr_at(2501, reference)) < 1e-7);
  CHECK_THROWS_AS(lr_at(10001, reference), ContractError);

  const Schedule flat{3e-4, 3e-4, 3e-4, 10, 100};
  for (std::size_t s = 0; s <= 100; s += 7) CHECK(lr_at(s, flat) == doctest::Approx(3e-4).epsilon(1e-15));
}

TEST_CASE("adamw with zero gradients") {
  auto p = scalar_param(2.0);
  OptimizerState state;
  set_grad(p[0], 0.0);
  CHECK(optimizer_step(p, state, 0.1, AdamWOptions{0.9, 0.999, 1e-8, 0.0}));
  CHECK(p[0].value.at(0) == 2.0);

  set_grad(p[0], 0.0);
  CHECK(optimizer_step(p, state, 0.1, AdamWOptions{0.9, 0.999, 1e-8, 0.02}));
  CHECK(p[0].value.at(0) == doctest::Approx(2.0 * (1 - 0.1 * 0.02)).epsilon(1e-14));

  p[0].decay = false;
  set_grad(p[0], 0.0);
  const double before = p[0].value.at(0);
  optimizer_step(p, state, 0.1);
  CHECK(p[0].value.at(0) == before);
}

TEST_CASE("adamw minimizes a quadratic") {
  auto p = scalar_param(1.0);
  OptimizerState state;
  const double target = -1.0;
  for (int step = 0; step < 500; ++step) {
    set_grad(p[0], 2 * (p[0].value.at(0) - target));
    optimizer_step(p, state, 1e-2, AdamWOptions{0.9, 0.999, 1e-8, 0.0});
  }
  // Constant-rate Adam settles into an oscillation of a few lr around the optimum.
  CHECK(std::abs(p[0].value.at(0) - target) < 5e-2);
}

TEST_CASE("adamw skips non-finite gradients") {
  auto p = scalar_param(1.0);
  OptimizerState state;
  const auto prev = log_level();
  log_level() = LogLevel::quiet;
  set_grad(p[0], std::nan(""));
  CHECK_FALSE(optimizer_step(p, state, 0.1));
  log_level() = prev;
  CHECK(p[0].value.at(0) == 1.0);
  CHECK(state.step == 0);
}

TEST_CASE("gradient clipping") {
  std::vector<NamedParameter> ps = {
      {"a", Tensor::from_values({0, 0}, {2}).set_requires_grad(true), true},
      {"b", Tensor::from_values({0}, {1}).set_requires_grad(true), true}};
  ps[0].value.zero_grad();
  ps[1].value.zero_grad();
  ps[0].value.grad<double>()[0] = 3;
  ps[0].value.grad<double>()[1] = 4;
  ps[1].value.grad<double>()[0] = 12;
  CHECK(clip_grad_norm(ps, 1.0) == doctest::Approx(13.0));
  CHECK(ps[1].value.grad_vector()[0] == doctest::Approx(12.0 / 13));
}

TEST_CASE("batch composition") {
  const auto& c = small_corpus();
  const PreparedDataset data = prepare(c.train, c.vocab, 20);
  REQUIRE(!data.annotated.empty());
  REQUIRE(!data.caption_only.empty());
  objectives::Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    TrainBatch tb = assemble_batch(data, 8, {}, rng);
    CHECK(tb.samples.size() == 8);
    std::size_t annotated = 0;
    for (std::size_t s : tb.samples) annotated += c.train[s].record.annotated();
    CHECK(annotated == 4);
    CHECK(std::set<std::size_t>(tb.samples.begin(), tb.samples.end()).size() == 8);
    std::size_t concept_pairs = 0;
    for (const auto& p : tb.batch.pairs) concept_pairs += p.kind != objectives::PairKind::caption;
    CHECK(concept_pairs == 4);
  }
  CHECK_THROWS_AS(assemble_batch(data, 1, {}, rng), ContractError);
}

TEST_CASE("ablation flags restrict concept kinds") {
  const auto& c = small_corpus();
  const PreparedDataset data = prepare(c.train, c.vocab, 20);
  objectives::Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    for (const auto& p : assemble_batch(data, 8, {true, true, false}, rng).batch.pairs)
      CHECK(p.kind == objectives::PairKind::caption);
    for (const auto& p : assemble_batch(data, 8, {true, false, false}, rng).batch.pairs)
      CHECK(p.kind != objectives::PairKind::object);
    for (const auto& p : assemble_batch(data, 8, {false, true, false}, rng).batch.pairs)
      CHECK(p.kind != objectives::PairKind::region);
  }
}

TEST_CASE("batches are deterministic and independent of the bbox flag") {
  const auto& c = small_corpus();
  const PreparedDataset data = prepare(c.train, c.vocab, 20);
  for (std::uint64_t step = 0; step < 10; ++step) {
    auto r1 = step_rng(9, step);
    auto r2 = step_rng(9, step);
    auto r3 = step_rng(9, step);
    TrainBatch a = assemble_batch(data, 8, {}, r1);
    TrainBatch b = assemble_batch(data, 8, {}, r2);
    TrainBatch n = assemble_batch(data, 8, {false, false, true}, r3);
    CHECK(a.samples == b.samples);
    CHECK(pair_ids(a) == pair_ids(b));
    CHECK(a.samples == n.samples);
    CHECK(pair_ids(a) == pair_ids(n));
  }
}

TEST_CASE("one step smoke run") {
  const auto& c = small_corpus();
  const fs::path out = scratch("smoke");
  TrainResult r = train(small_train_config(1), c.train, c.vocab, {}, out);
  REQUIRE(r.metrics.size() == 1);
  const auto& m = r.metrics[0];
  CHECK(m.step == 1);
  for (double v : {m.l_bbox, m.l_cl, m.l_match, m.l_mlm, m.total}) CHECK(std::isfinite(v));
  std::ifstream in(out / "metrics.jsonl");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) ++lines;
  CHECK(lines == 1);
  CHECK(fs::exists(out / "checkpoint" / "manifest.json"));
  CHECK(fs::exists(out / "config.txt"));
  fs::remove_all(out);
}

TEST_CASE("no bbox loss logs zero box loss") {
  const auto& c = small_corpus();
  const fs::path out = scratch("nobox");
  TrainResult r = train(small_train_config(3), c.train, c.vocab, {false, false, true}, out);
  for (const auto& m : r.metrics) CHECK(m.l_bbox == 0.0);
  fs::remove_all(out);
}

TEST_CASE("resume matches an uninterrupted run") {
  const auto& c = small_corpus();
  const fs::path full = scratch("full");
  const fs::path part = scratch("part");
  TrainResult a = train(small_train_config(4), c.train, c.vocab, {}, full);

  TrainConfig first = small_train_config(4);
  first.stop_after = 2;
  TrainResult b1 = train(first, c.train, c.vocab, {}, part);
  CHECK(b1.final_step == 2);
  TrainResult b2 = train(small_train_config(4), c.train, c.vocab, {}, part, part / "checkpoint");
  REQUIRE(b2.metrics.size() == 2);
  CHECK(b2.metrics[0].step == 3);
  CHECK(b2.metrics[1].total == a.metrics[3].total);
  const auto& pa = a.model->parameters();
  const auto& pb = b2.model->parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].value.to_vector() == pb[i].value.to_vector());

  // A reloaded checkpoint gives bit-identical outputs on a probe batch.
  Model loaded = Model::load(full / "checkpoint");
  Tape t1, t2;
  const std::vector<std::int64_t> probe{1, 6, 7, 2};
  CHECK(loaded.encode_text(t1, probe).tokens.to_vector() == a.model->encode_text(t2, probe).tokens.to_vector());
  fs::remove_all(full);
  fs::remove_all(part);
}

TEST_CASE("config file parsing") {
  const fs::path dir = scratch("cfg");
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "ok.txt");
    f << "# comment\nhidden_dim = 32\nlr_peak = 1e-3\ntotal_steps = 50\nseed = 4\n";
  }
  TrainConfig cfg = load_train_config(dir / "ok.txt");
  CHECK(cfg.model.hidden_dim == 32);
  CHECK(cfg.schedule.lr_peak == 1e-3);
  cfg.finalize();
  CHECK(cfg.schedule.warmup_steps == 5);
  {
    std::ofstream f(dir / "bad.txt");
    f << "hiden_dim = 32\n";
  }
  CHECK_THROWS_AS(load_train_config(dir / "bad.txt"), ConfigError);
  {
    std::ofstream f(dir / "badval.txt");
    f << "batch_size = many\n";
  }
  CHECK_THROWS_AS(load_train_config(dir / "badval.txt"), ConfigError);
  fs::remove_all(dir);
}
