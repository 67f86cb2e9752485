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

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "smt/checkpoint.hpp"
#include "smt/config.hpp"
#include "smt/kern.hpp"
#include "smt/model.hpp"
#include "smt/synth.hpp"

namespace smt::train {

struct TrainConfig {
  std::string preset = "paper";
  model::Backbone backbone = model::Backbone::kCnn;
  int batch_size = 8;
  double learning_rate = 1e-4;
  int warmup_steps = 500;
  double clip_norm = 1.0;
  int max_steps = 20000;
  int validation_interval = 1000;
  std::uint64_t seed = 0;
  double label_smoothing = 0.0;
  /// Stop once the mean loss of the last 10 steps falls below this (0: off).
  double target_loss = 0.0;
  /// Decode at most this many validation samples (0: all).
  int validation_limit = 0;

  /// Throws Error("InvalidConfig").
  void validate() const;
  /// Reads `train.*` keys.
  void apply(const KeyValueConfig& kv);
  /// Learning rate at 1-based `step`: linear warmup, then constant.
  double lr_at(std::int64_t step) const;
};

/// Settings of the desk-scale preset (larger steps, short warmup, batch 4).
TrainConfig micro_train_config();

/// One training pair: image and model-facing ids (<sot> ... <eot>, optionally
/// followed by <pad>).
struct Example {
  GrayImage image;
  std::vector<int> tokens;
  std::string sample_id;
  std::string piece_id;
};

std::vector<Example> make_examples(std::span<const synth::ImageSample> samples,
                                   const kern::Vocabulary& vocab);

/// Mean next-token cross-entropy over non-<pad> targets of the batch. When
/// `grads` is non-null it receives d(loss)/d(param) for every parameter.
template <typename Scalar>
double batch_loss(const model::SmtModel<Scalar>& model, std::span<const Example> batch,
                  double label_smoothing, Rng* dropout_rng, std::vector<Mat<Scalar>>* grads);

class Adam {
 public:
  Adam() = default;
  explicit Adam(const nn::ParameterSet<float>& ps);

  /// One update with global-norm clipping; returns the pre-clip norm.
  double update(nn::ParameterSet<float>& ps, std::vector<Mat<float>>& grads, double lr,
                double clip_norm);

  checkpoint::OptimizerState& state() { return state_; }
  const checkpoint::OptimizerState& state() const { return state_; }

 private:
  checkpoint::OptimizerState state_;
};

/// Teacher-forced optimizer loop over one model.
class Trainer {
 public:
  Trainer(model::SmtModel<float>& model, TrainConfig cfg);

  /// Forward, backward and one Adam step. Throws SequenceExceedsMaxLength.
  double training_step(std::span<const Example> batch);

  /// Samples the batch for a 1-based step; depends only on (seed, step).
  std::vector<std::size_t> batch_indices(std::int64_t step, std::size_t n) const;

  std::int64_t step() const { return adam_.state().step; }
  Adam& optimizer() { return adam_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  model::SmtModel<float>* model_;
  TrainConfig cfg_;
  Adam adam_;
};

struct HistoryRow {
  std::int64_t step = 0;
  double loss = 0.0;
  double cer = 0.0;  ///< percent
  double ser = 0.0;
  double ler = 0.0;
};

std::string format_history_row(const HistoryRow& row);
std::vector<HistoryRow> read_history(const std::filesystem::path& path);

/// Throws Error("SplitLeakage") when a piece id occurs in both sets.
void check_leakage(std::span<const synth::ManifestEntry> train,
                   std::span<const synth::ManifestEntry> validation);

struct FitOptions {
  TrainConfig train;
  /// `model.*` overrides applied on top of the preset.
  KeyValueConfig model_overrides;
  /// Continue from `last.smt` in the output directory when present.
  bool resume = false;
  /// Progress lines on stderr.
  bool verbose = false;
};

struct FitResult {
  std::vector<HistoryRow> history;  ///< rows written by this run
  std::filesystem::path best;
  std::filesystem::path last;
  double best_ser = 0.0;
  std::int64_t steps = 0;
};

/// Trains on the train split of `train_manifest` and selects by SER on the
/// validation split of `val_manifest`. Writes vocab.txt, history.tsv,
/// best.smt and last.smt under `out_dir`.
FitResult fit(const std::filesystem::path& train_manifest,
              const std::filesystem::path& val_manifest, const FitOptions& options,
              const std::filesystem::path& out_dir);

/// Greedy-decodes `samples` and scores them against their references.
std::vector<std::string> transcribe_all(const model::SmtModel<float>& model,
                                        const kern::Vocabulary& vocab,
                                        std::span<const synth::ImageSample> samples);

/// Turns model output ids into kern text, dropping control tokens.
std::string ids_to_text(std::span<const int> ids, const kern::Vocabulary& vocab);

}  // namespace smt::train
