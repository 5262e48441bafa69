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

#include "xgrain/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "xgrain/errors.hpp"
#include "xgrain/log.hpp"

namespace xgrain::training {

double lr_at(std::size_t step, const Schedule& s) {
  if (step > s.total_steps) {
    throw ContractError("lr_at: step " + std::to_string(step) + " beyond total " +
                        std::to_string(s.total_steps));
  }
  if (step <= s.warmup_steps && s.warmup_steps > 0) {
    const double t = static_cast<double>(step) / static_cast<double>(s.warmup_steps);
    return (1.0 - t) * s.lr_start + t * s.lr_peak;
  }
  if (s.total_steps == s.warmup_steps) return s.lr_peak;
  const double t = static_cast<double>(step - s.warmup_steps) /
                   static_cast<double>(s.total_steps - s.warmup_steps);
  return (1.0 - t) * s.lr_peak + t * s.lr_end;
}

double clip_grad_norm(std::vector<NamedParameter>& params, double max_norm) {
  double sq = 0;
  for (auto& p : params) {
    if (!p.value.has_grad()) continue;
    for (double g : p.value.grad_vector()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && std::isfinite(norm)) {
    const double f = max_norm / norm;
    for (auto& p : params) {
      if (!p.value.has_grad()) continue;
      dispatch(p.value.dtype(), [&]<class T>() {
        for (T& g : p.value.grad<T>()) g = static_cast<T>(g * f);
      });
    }
  }
  return norm;
}

bool optimizer_step(std::vector<NamedParameter>& params, OptimizerState& state, double lr,
                    const AdamWOptions& o) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.value.numel(), 0.0);
      state.v.emplace_back(p.value.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ContractError("optimizer state does not match parameters");
  std::vector<std::vector<double>> grads(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& t = params[i].value;
    if (state.m[i].size() != t.numel()) throw ContractError("optimizer moment shape mismatch for " + params[i].name);
    grads[i] = t.has_grad() ? t.grad_vector() : std::vector<double>(t.numel(), 0.0);
    for (double g : grads[i]) {
      if (!std::isfinite(g)) {
        log_warn("non-finite gradient in " + params[i].name + "; step skipped");
        return false;
      }
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& t = params[i].value;
    const double wd = params[i].decay ? o.weight_decay : 0.0;
    auto& m = state.m[i];
    auto& v = state.v[i];
    dispatch(t.dtype(), [&]<class T>() {
      auto w = t.data<T>();
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double g = grads[i][j];
        m[j] = o.beta1 * m[j] + (1.0 - o.beta1) * g;
        v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * g * g;
        const double update = (m[j] / c1) / (std::sqrt(v[j] / c2) + o.eps);
        const double old = w[j];
        w[j] = static_cast<T>(old - lr * wd * old - lr * update);
      }
    });
  }
  return true;
}

void save_optimizer(const std::filesystem::path& path, const OptimizerState& state) {
  std::ofstream out(path, std::ios::binary);
  auto put = [&](std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); };
  put(state.step);
  put(state.m.size());
  for (std::size_t i = 0; i < state.m.size(); ++i) {
    put(state.m[i].size());
    out.write(reinterpret_cast<const char*>(state.m[i].data()), state.m[i].size() * sizeof(double));
    out.write(reinterpret_cast<const char*>(state.v[i].data()), state.v[i].size() * sizeof(double));
  }
  if (!out) throw FormatError("failed writing " + path.string());
}

OptimizerState load_optimizer(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open optimizer state " + path.string());
  auto get = [&]() {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw FormatError("truncated optimizer state " + path.string());
    return v;
  };
  OptimizerState s;
  s.step = get();
  const std::uint64_t count = get();
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t n = get();
    s.m.emplace_back(n);
    s.v.emplace_back(n);
    in.read(reinterpret_cast<char*>(s.m.back().data()), n * sizeof(double));
    in.read(reinterpret_cast<char*>(s.v.back().data()), n * sizeof(double));
    if (!in) throw FormatError("truncated optimizer state " + path.string());
  }
  return s;
}

PreparedDataset prepare(const Dataset& dataset, const Vocabulary& vocab, std::size_t max_text_len) {
  PreparedDataset out;
  out.samples = &dataset;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& r = dataset[i].record;
    (r.annotated() ? out.annotated : out.caption_only).push_back(i);
    if (r.caption) {
      out.caption_ids.emplace_back(vocab.encode(*r.caption, max_text_len));
    } else {
      out.caption_ids.emplace_back(std::nullopt);
    }
    std::vector<std::vector<std::int64_t>> ids;
    for (const auto& c : r.concepts) ids.push_back(vocab.encode(c.text, max_text_len));
    out.concept_ids.push_back(std::move(ids));
  }
  return out;
}

namespace {

std::vector<std::size_t> draw_distinct(const std::vector<std::size_t>& pool, std::size_t k,
                                       objectives::Rng& rng) {
  std::vector<std::size_t> out;
  if (k == 0) return out;
  if (k > pool.size()) {
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    for (std::size_t i = 0; i < k; ++i) out.push_back(pool[pick(rng)]);
    return out;
  }
  std::vector<std::size_t> tmp = pool;
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, tmp.size() - 1);
    std::swap(tmp[i], tmp[pick(rng)]);
    out.push_back(tmp[i]);
  }
  return out;
}

}  // namespace

TrainBatch assemble_batch(const PreparedDataset& data, std::size_t batch_size,
                          const AblationFlags& flags, objectives::Rng& rng) {
  if (batch_size < 2) throw ContractError("assemble_batch: batch_size must be at least 2");
  if (data.samples == nullptr || data.samples->empty()) throw ContractError("assemble_batch: empty dataset");
  std::size_t annotated_slots = 0;
  if (!data.annotated.empty()) annotated_slots = data.caption_only.empty() ? batch_size : batch_size / 2;
  TrainBatch tb;
  tb.samples = draw_distinct(data.annotated, annotated_slots, rng);
  const auto rest = draw_distinct(data.caption_only, batch_size - annotated_slots, rng);
  tb.samples.insert(tb.samples.end(), rest.begin(), rest.end());
  tb.annotated_images = annotated_slots;

  for (std::size_t slot = 0; slot < tb.samples.size(); ++slot) {
    const std::size_t idx = tb.samples[slot];
    const Sample& s = (*data.samples)[idx];
    tb.batch.images.push_back(&s.image);
    if (data.caption_ids[idx]) {
      tb.batch.pairs.push_back({slot, NormBox::whole_image(), *data.caption_ids[idx],
                                objectives::PairKind::caption, s.record.image_id});
    }
    std::vector<std::size_t> allowed;
    for (std::size_t c = 0; c < s.record.concepts.size(); ++c) {
      const bool object = s.record.concepts[c].kind == ConceptKind::object;
      if ((object && !flags.no_object) || (!object && !flags.no_region)) allowed.push_back(c);
    }
    if (!allowed.empty()) {
      std::uniform_int_distribution<std::size_t> pick(0, allowed.size() - 1);
      const std::size_t c = allowed[pick(rng)];
      const auto& concept_ann = s.record.concepts[c];
      tb.batch.pairs.push_back({slot, concept_ann.box, data.concept_ids[idx][c],
                                concept_ann.kind == ConceptKind::object ? objectives::PairKind::object
                                                                        : objectives::PairKind::region,
                                s.record.image_id});
    }
  }
  return tb;
}

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

double parse_num(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(value, &pos);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + value + "'");
  }
  if (pos != value.size() || !std::isfinite(v)) throw ConfigError(key + ": bad number '" + value + "'");
  return v;
}

std::size_t parse_count(const std::string& key, const std::string& value) {
  const double v = parse_num(key, value);
  if (v < 0 || v != std::floor(v)) throw ConfigError(key + ": expected a non-negative integer");
  return static_cast<std::size_t>(v);
}

}  // namespace

bool TrainConfig::set(const std::string& key, const std::string& value) {
  if (model.set(key, value)) return true;
  if (key == "lr_start") schedule.lr_start = parse_num(key, value);
  else if (key == "lr_peak") schedule.lr_peak = parse_num(key, value);
  else if (key == "lr_end") schedule.lr_end = parse_num(key, value);
  else if (key == "warmup_steps") {
    schedule.warmup_steps = parse_count(key, value);
    auto_warmup = false;
  } else if (key == "total_steps") schedule.total_steps = parse_count(key, value);
  else if (key == "batch_size") batch_size = parse_count(key, value);
  else if (key == "seed") seed = parse_count(key, value);
  else if (key == "grad_clip") grad_clip = parse_num(key, value);
  else if (key == "checkpoint_every") checkpoint_every = parse_count(key, value);
  else if (key == "weight_decay") adamw.weight_decay = parse_num(key, value);
  else if (key == "beta1") adamw.beta1 = parse_num(key, value);
  else if (key == "beta2") adamw.beta2 = parse_num(key, value);
  else if (key == "eps") adamw.eps = parse_num(key, value);
  else if (key == "dtype") {
    try {
      dtype = parse_dtype(value);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("dtype: ") + e.what());
    }
  } else {
    return false;
  }
  return true;
}

KeyValues TrainConfig::to_key_values() const {
  KeyValues kv = model.to_key_values();
  kv["lr_start"] = fmt(schedule.lr_start);
  kv["lr_peak"] = fmt(schedule.lr_peak);
  kv["lr_end"] = fmt(schedule.lr_end);
  kv["warmup_steps"] = std::to_string(schedule.warmup_steps);
  kv["total_steps"] = std::to_string(schedule.total_steps);
  kv["batch_size"] = std::to_string(batch_size);
  kv["seed"] = std::to_string(seed);
  kv["grad_clip"] = fmt(grad_clip);
  kv["checkpoint_every"] = std::to_string(checkpoint_every);
  kv["weight_decay"] = fmt(adamw.weight_decay);
  kv["beta1"] = fmt(adamw.beta1);
  kv["beta2"] = fmt(adamw.beta2);
  kv["eps"] = fmt(adamw.eps);
  kv["dtype"] = to_string(dtype);
  return kv;
}

void TrainConfig::finalize() {
  if (auto_warmup) schedule.warmup_steps = schedule.total_steps / 10;
  if (schedule.total_steps == 0) throw ConfigError("total_steps must be at least 1");
  if (schedule.warmup_steps > schedule.total_steps) throw ConfigError("warmup_steps exceeds total_steps");
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
  if (!(grad_clip > 0)) throw ConfigError("grad_clip must be positive");
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  TrainConfig cfg;
  for (const auto& [k, v] : read_key_values(path)) {
    if (!cfg.set(k, v)) throw ConfigError("unknown config key '" + k + "' in " + path.string());
  }
  return cfg;
}

objectives::Rng step_rng(std::uint64_t seed, std::uint64_t step, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32),
                    static_cast<std::uint32_t>(stream)};
  return objectives::Rng(seq);
}

std::string metrics_line(const StepMetrics& m) {
  nlohmann::ordered_json j;
  j["step"] = m.step;
  j["lr"] = m.lr;
  j["l_bbox"] = m.l_bbox;
  j["l_cl"] = m.l_cl;
  j["l_match"] = m.l_match;
  j["l_mlm"] = m.l_mlm;
  j["total"] = m.total;
  return j.dump();
}

TrainResult train(const TrainConfig& config, const Dataset& dataset, const Vocabulary& vocab,
                  const AblationFlags& flags, const std::filesystem::path& out,
                  const std::optional<std::filesystem::path>& resume) {
  namespace fs = std::filesystem;
  if (dataset.empty()) throw ContractError("train: empty dataset");
  TrainConfig cfg = config;
  cfg.model.vocab_size = vocab.size();
  cfg.finalize();

  std::optional<Model> model;
  OptimizerState state;
  std::size_t start = 0;
  if (resume) {
    model = Model::load(*resume);
    state = load_optimizer(*resume / "optimizer.bin");
    std::ifstream mf(*resume / "manifest.json");
    start = nlohmann::json::parse(mf).at("step").get<std::size_t>();
    if (model->config().vocab_size != vocab.size()) {
      throw ContractError("train: checkpoint vocabulary size differs from the dataset vocabulary");
    }
    cfg.model = model->config();
  } else {
    model.emplace(cfg.model, cfg.dtype, cfg.seed);
  }
  if (start > cfg.schedule.total_steps) throw ContractError("train: checkpoint step beyond total_steps");

  fs::create_directories(out);
  write_key_values(out / "config.txt", cfg.to_key_values());
  const fs::path metrics_path = out / "metrics.jsonl";
  std::ofstream metrics(metrics_path, start > 0 && fs::exists(metrics_path) ? std::ios::app : std::ios::trunc);

  const PreparedDataset data = prepare(dataset, vocab, cfg.model.max_text_len);
  nlohmann::json flag_json{{"no_object", flags.no_object},
                           {"no_region", flags.no_region},
                           {"no_bbox_loss", flags.no_bbox_loss}};
  auto checkpoint = [&](std::size_t step) {
    const fs::path dir = out / "checkpoint";
    model->save(dir, {{"step", step}, {"seed", cfg.seed}, {"flags", flag_json}});
    save_optimizer(dir / "optimizer.bin", state);
  };

  objectives::LossOptions loss_options;
  loss_options.bbox_loss = !flags.no_bbox_loss;
  TrainResult result;
  const std::size_t end =
      cfg.stop_after > 0 ? std::min(cfg.stop_after, cfg.schedule.total_steps) : cfg.schedule.total_steps;
  for (std::size_t step = start; step < end; ++step) {
    objectives::Rng rng = step_rng(cfg.seed, step);
    const TrainBatch tb = assemble_batch(data, cfg.batch_size, flags, rng);
    Tape tape;
    model->zero_grad();
    const objectives::LossReport report = objectives::total_loss(tape, *model, tb.batch, rng, loss_options);
    if (!std::isfinite(report.total)) {
      nlohmann::json dump{{"step", step + 1}, {"l_bbox", report.l_bbox}, {"l_cl", report.l_cl},
                          {"l_match", report.l_match}, {"l_mlm", report.l_mlm}};
      std::vector<std::string> ids;
      for (std::size_t i : tb.samples) ids.push_back(dataset[i].record.image_id);
      dump["image_ids"] = ids;
      std::ofstream(out / "abort.json") << dump.dump(2) << '\n';
      throw TrainingAborted("non-finite loss at step " + std::to_string(step + 1) + "; batch ids in " +
                            (out / "abort.json").string());
    }
    tape.backward(report.loss);
    clip_grad_norm(model->parameters(), cfg.grad_clip);
    const double lr = lr_at(step, cfg.schedule);
    optimizer_step(model->parameters(), state, lr, cfg.adamw);
    objectives::clamp_temperature(*model);

    const StepMetrics m{step + 1, lr, report.l_bbox, report.l_cl, report.l_match, report.l_mlm, report.total};
    metrics << metrics_line(m) << '\n';
    result.metrics.push_back(m);
    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) checkpoint(step + 1);
  }
  metrics.flush();
  result.final_step = std::max(start, end);
  checkpoint(result.final_step);
  result.model = std::move(model);
  return result;
}

}  // namespace xgrain::training
