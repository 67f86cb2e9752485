// Copyright 2026  smt-lab authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "smt/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "smt/metrics.hpp"

namespace smt::train {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error("InvalidConfig", what);
  };
  require(batch_size > 0, "train.batch_size must be positive");
  require(learning_rate > 0 && std::isfinite(learning_rate), "train.learning_rate must be positive");
  require(warmup_steps > 0, "train.warmup_steps must be positive");
  require(clip_norm > 0, "train.clip_norm must be positive");
  require(max_steps > 0, "train.max_steps must be positive");
  require(validation_interval > 0, "train.validation_interval must be positive");
  require(validation_interval <= max_steps, "train.validation_interval must not exceed max_steps");
  require(label_smoothing >= 0 && label_smoothing < 1, "train.label_smoothing must be in [0, 1)");
  require(target_loss >= 0, "train.target_loss must be non-negative");
  require(validation_limit >= 0, "train.validation_limit must be non-negative");
}

void TrainConfig::apply(const KeyValueConfig& kv) {
  kv.read("train.preset", preset);
  if (auto b = kv.get_string("train.backbone")) backbone = model::backbone_from_string(*b);
  kv.read("train.batch_size", batch_size);
  kv.read("train.learning_rate", learning_rate);
  kv.read("train.warmup_steps", warmup_steps);
  kv.read("train.clip_norm", clip_norm);
  kv.read("train.max_steps", max_steps);
  kv.read("train.validation_interval", validation_interval);
  kv.read("train.seed", seed);
  kv.read("train.label_smoothing", label_smoothing);
  kv.read("train.target_loss", target_loss);
  kv.read("train.validation_limit", validation_limit);
}

double TrainConfig::lr_at(std::int64_t step) const {
  const double ramp = std::min(1.0, static_cast<double>(step) / warmup_steps);
  return learning_rate * ramp;
}

TrainConfig micro_train_config() {
  TrainConfig c;
  c.preset = "micro";
  c.batch_size = 4;
  c.learning_rate = 1e-3;
  c.warmup_steps = 100;
  c.max_steps = 5000;
  c.validation_interval = 500;
  return c;
}

std::vector<Example> make_examples(std::span<const synth::ImageSample> samples,
                                   const kern::Vocabulary& vocab) {
  std::vector<Example> out;
  out.reserve(samples.size());
  for (const auto& s : samples)
    out.push_back({s.pixels, kern::encode_for_model(s.kern, vocab).ids, s.sample_id, s.piece_id});
  return out;
}

// ---------------------------------------------------------------------------
// Loss

template <typename Scalar>
double batch_loss(const model::SmtModel<Scalar>& model, std::span<const Example> batch,
                  double label_smoothing, Rng* dropout_rng, std::vector<Mat<Scalar>>* grads) {
  constexpr int kPad = kern::Vocabulary::kPad;
  const int max_len = model.config().decoder.max_decode_length;
  std::size_t count = 0;
  for (const auto& ex : batch) {
    if (ex.tokens.size() < 2) throw Error("InvalidArgument", "sequence shorter than two tokens");
    std::size_t used = ex.tokens.size();
    while (used > 0 && ex.tokens[used - 1] == kPad) --used;
    if (static_cast<int>(used) - 1 > max_len)
      throw Error("SequenceExceedsMaxLength",
                  ex.sample_id + " needs " + std::to_string(used - 1) +
                      " decoder positions, max decode length is " + std::to_string(max_len));
    for (std::size_t i = 1; i < ex.tokens.size(); ++i) count += ex.tokens[i] != kPad;
  }
  if (count == 0) throw Error("InvalidArgument", "batch has no target tokens");

  const auto& ps = model.params();
  if (grads) {
    grads->clear();
    for (int i = 0; i < ps.size(); ++i)
      grads->push_back(Mat<Scalar>::Zero(ps.value(i).rows(), ps.value(i).cols()));
  }
  const Scalar inv_count = Scalar(1) / static_cast<Scalar>(count);
  double total = 0.0;
  for (const auto& ex : batch) {
    ad::Tape<Scalar> t(grads != nullptr);
    const std::span<const int> all(ex.tokens);
    auto memory = model.encode_flat(t, ex.image);
    auto logits = model.decoder_logits(t, memory, all.first(all.size() - 1), dropout_rng);
    std::vector<int> targets(all.begin() + 1, all.end());
    auto loss = ad::scale(ad::cross_entropy_sum(logits, std::move(targets), kPad,
                                                static_cast<Scalar>(label_smoothing)),
                          inv_count);
    total += static_cast<double>(loss.value()(0, 0));
    if (!grads) continue;
    t.backward(loss);
    for (int i = 0; i < ps.size(); ++i) {
      const int node = t.param_node(i);
      if (node >= 0 && t.has_grad(node)) (*grads)[static_cast<std::size_t>(i)] += t.grad(node);
    }
  }
  return total;
}

template double batch_loss<float>(const model::SmtModel<float>&, std::span<const Example>, double,
                                  Rng*, std::vector<Mat<float>>*);
template double batch_loss<double>(const model::SmtModel<double>&, std::span<const Example>,
                                   double, Rng*, std::vector<Mat<double>>*);

// ---------------------------------------------------------------------------
// Optimizer

Adam::Adam(const nn::ParameterSet<float>& ps) {
  for (int i = 0; i < ps.size(); ++i) {
    state_.m.push_back(Mat<float>::Zero(ps.value(i).rows(), ps.value(i).cols()));
    state_.v.push_back(Mat<float>::Zero(ps.value(i).rows(), ps.value(i).cols()));
  }
}

double Adam::update(nn::ParameterSet<float>& ps, std::vector<Mat<float>>& grads, double lr,
                    double clip_norm) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double sq = 0.0;
  for (const auto& g : grads) sq += static_cast<double>(g.squaredNorm());
  const double norm = std::sqrt(sq);
  if (clip_norm > 0 && norm > clip_norm) {
    const auto s = static_cast<float>(clip_norm / norm);
    for (auto& g : grads) g *= s;
  }
  ++state_.step;
  const auto t = static_cast<double>(state_.step);
  const auto bc1 = static_cast<float>(1.0 - std::pow(b1, t));
  const auto bc2 = static_cast<float>(1.0 - std::pow(b2, t));
  const auto step_size = static_cast<float>(lr);
  for (int i = 0; i < ps.size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    auto& m = state_.m[k];
    auto& v = state_.v[k];
    const auto& g = grads[k];
    m = static_cast<float>(b1) * m + static_cast<float>(1 - b1) * g;
    v = static_cast<float>(b2) * v + static_cast<float>(1 - b2) * g.cwiseProduct(g);
    ps.value(i).array() -= step_size * (m.array() / bc1) /
                           ((v.array() / bc2).sqrt() + static_cast<float>(eps));
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(model::SmtModel<float>& model, TrainConfig cfg)
    : model_(&model), cfg_(std::move(cfg)), adam_(model.params()) {
  cfg_.validate();
}

double Trainer::training_step(std::span<const Example> batch) {
  const std::int64_t next = step() + 1;
  Rng dropout(derive_seed(cfg_.seed, "dropout", static_cast<std::uint64_t>(next)));
  std::vector<Mat<float>> grads;
  const double loss = batch_loss(*model_, batch, cfg_.label_smoothing, &dropout, &grads);
  adam_.update(model_->params(), grads, cfg_.lr_at(next), cfg_.clip_norm);
  return loss;
}

std::vector<std::size_t> Trainer::batch_indices(std::int64_t step, std::size_t n) const {
  Rng rng(derive_seed(cfg_.seed, "batch", static_cast<std::uint64_t>(step)));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t k = std::min(n, static_cast<std::size_t>(cfg_.batch_size));
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(n - i) - 1));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

// ---------------------------------------------------------------------------
// History and leakage

std::string format_history_row(const HistoryRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%lld\t%.6f\t%.4f\t%.4f\t%.4f\n", static_cast<long long>(r.step),
                r.loss, r.cer, r.ser, r.ler);
  return buf;
}

std::vector<HistoryRow> read_history(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("IO", "cannot read " + path.string());
  std::vector<HistoryRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    HistoryRow r;
    if (!(ss >> r.step >> r.loss >> r.cer >> r.ser >> r.ler))
      throw Error("IO", "malformed history line: " + line);
    rows.push_back(r);
  }
  return rows;
}

void check_leakage(std::span<const synth::ManifestEntry> train,
                   std::span<const synth::ManifestEntry> validation) {
  std::set<std::string> train_pieces;
  for (const auto& e : train) train_pieces.insert(e.piece_id);
  for (const auto& e : validation)
    if (train_pieces.count(e.piece_id))
      throw Error("SplitLeakage", "piece '" + e.piece_id + "' appears in training and validation data");
}

std::string ids_to_text(std::span<const int> ids, const kern::Vocabulary& vocab) {
  kern::TokenSequence seq;
  seq.granularity = kern::Granularity::kCharacter;
  for (int id : ids)
    if (!kern::Vocabulary::is_control(id)) seq.ids.push_back(id);
  return kern::detokenize(seq, vocab);
}

std::vector<std::string> transcribe_all(const model::SmtModel<float>& model,
                                        const kern::Vocabulary& vocab,
                                        std::span<const synth::ImageSample> samples) {
  std::vector<std::string> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(ids_to_text(model.greedy_decode(s.pixels), vocab));
  return out;
}

// ---------------------------------------------------------------------------
// fit

namespace {

std::vector<synth::ManifestEntry> entries_of(const fs::path& manifest, Split split) {
  std::vector<synth::ManifestEntry> out;
  for (auto& e : synth::read_manifest(manifest))
    if (e.split == split) out.push_back(std::move(e));
  return out;
}

metrics::MetricReport score_samples(std::span<const std::string> hyps,
                                    std::span<const synth::ImageSample> samples) {
  std::vector<metrics::SampleMetrics> scored;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto m = metrics::score_pair(hyps[i], kern::to_text(samples[i].kern, false));
    m.sample_id = samples[i].sample_id;
    scored.push_back(std::move(m));
  }
  return metrics::aggregate(std::move(scored));
}

}  // namespace

FitResult fit(const fs::path& train_manifest, const fs::path& val_manifest,
              const FitOptions& options, const fs::path& out_dir) {
  const TrainConfig& cfg = options.train;
  cfg.validate();
  const auto train_entries = entries_of(train_manifest, Split::kTrain);
  const auto val_entries = entries_of(val_manifest, Split::kValidation);
  check_leakage(train_entries, val_entries);
  if (train_entries.empty()) throw Error("InvalidConfig", "no training samples in " + train_manifest.string());
  if (val_entries.empty()) throw Error("InvalidConfig", "no validation samples in " + val_manifest.string());

  auto mcfg = model::ModelConfig::preset_named(cfg.preset, cfg.backbone, 0);
  mcfg.apply(options.model_overrides);
  const auto train_samples = synth::load_samples(train_manifest, Split::kTrain, mcfg.image_height);
  auto val_samples = synth::load_samples(val_manifest, Split::kValidation, mcfg.image_height);
  if (cfg.validation_limit > 0 && static_cast<int>(val_samples.size()) > cfg.validation_limit)
    val_samples.resize(static_cast<std::size_t>(cfg.validation_limit));

  fs::create_directories(out_dir);
  const auto vocab_path = out_dir / "vocab.txt";
  const auto history_path = out_dir / "history.tsv";
  FitResult result;
  result.best = out_dir / "best.smt";
  result.last = out_dir / "last.smt";

  std::vector<kern::KernDocument> docs;
  for (const auto& s : train_samples) docs.push_back(s.kern);
  kern::Vocabulary vocab = kern::Vocabulary::build(docs, kern::Granularity::kCharacter);

  std::optional<model::SmtModel<float>> model;
  std::optional<Trainer> trainer;
  double best_ser = std::numeric_limits<double>::infinity();
  if (options.resume && fs::exists(result.last)) {
    const auto stored = kern::Vocabulary::load(vocab_path.string());
    if (!(stored == vocab))
      throw Error("VocabularyMismatch", "training corpus vocabulary differs from " + vocab_path.string());
    auto loaded = checkpoint::load(result.last, vocab.hash());
    if (!loaded.has_optimizer) throw Error("CorruptCheckpoint", "last.smt has no optimizer state");
    best_ser = loaded.meta.value("best_ser", best_ser);
    model.emplace(std::move(loaded.model));
    trainer.emplace(*model, cfg);
    trainer->optimizer().state() = std::move(loaded.optimizer);
  } else {
    mcfg.vocab_size = vocab.size();
    model.emplace(mcfg, derive_seed(cfg.seed, "model"));
    trainer.emplace(*model, cfg);
    checkpoint::atomic_write(vocab_path, vocab.serialize());
    checkpoint::atomic_write(history_path, "");
  }

  const auto examples = make_examples(train_samples, vocab);
  std::deque<double> recent;
  double interval_loss = 0.0;
  int interval_steps = 0;
  std::ofstream history(history_path, std::ios::app);
  for (std::int64_t step = trainer->step() + 1; step <= cfg.max_steps; ++step) {
    std::vector<Example> batch;
    for (auto i : trainer->batch_indices(step, examples.size())) batch.push_back(examples[i]);
    const double loss = trainer->training_step(batch);
    interval_loss += loss;
    ++interval_steps;
    recent.push_back(loss);
    if (recent.size() > 10) recent.pop_front();
    const double recent_mean = std::accumulate(recent.begin(), recent.end(), 0.0) / recent.size();
    const bool stop = cfg.target_loss > 0 && recent.size() == 10 && recent_mean < cfg.target_loss;
    result.steps = step;
    if (options.verbose && step % 50 == 0)
      std::cerr << "step " << step << " loss " << loss << "\n";
    if (step % cfg.validation_interval != 0 && step != cfg.max_steps && !stop) continue;

    const auto hyps = transcribe_all(*model, vocab, val_samples);
    const auto report = score_samples(hyps, val_samples);
    const HistoryRow row{step, interval_loss / interval_steps, report.cer, report.ser, report.ler};
    history << format_history_row(row) << std::flush;
    result.history.push_back(row);
    if (options.verbose)
      std::cerr << "validation step " << step << " cer " << row.cer << " ser " << row.ser << "\n";
    interval_loss = 0.0;
    interval_steps = 0;
    checkpoint::Metadata meta{vocab.hash(), step, {}};
    if (row.ser < best_ser) {
      best_ser = row.ser;
      meta.values = {{"best_ser", best_ser}, {"val_ser", row.ser}};
      checkpoint::save(result.best, *model, meta);
    }
    meta.values = {{"best_ser", best_ser}, {"val_ser", row.ser}};
    checkpoint::save(result.last, *model, meta, &trainer->optimizer().state());
    if (stop) break;
  }
  result.best_ser = best_ser;
  return result;
}

}  // namespace smt::train
