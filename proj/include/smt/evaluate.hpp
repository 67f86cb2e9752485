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

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "smt/kern.hpp"
#include "smt/metrics.hpp"
#include "smt/model.hpp"
#include "smt/types.hpp"

namespace smt::eval {

struct EvalOptions {
  std::string dataset = "synthetic";
  std::string model_name = "smt";
  /// Score every reference against itself instead of decoding.
  bool oracle = false;
  /// Evaluate at most this many samples (0: all).
  int limit = 0;
  /// Image height used when no model is given.
  int image_height = 128;
};

struct EvalResult {
  metrics::MetricReport report;
  std::vector<std::string> sample_ids;
  std::vector<std::string> hypotheses;
  std::vector<std::string> references;
  std::string results_table;
  std::string sample_table;
  std::string diff;
};

/// Throws Error("VocabularyMismatch") when a reference uses a character the
/// vocabulary does not contain.
void check_vocabulary_covers(const kern::Vocabulary& vocab,
                             const std::vector<kern::KernDocument>& references);

/// Decodes every sample of `split` in the manifest greedily (or echoes the
/// references in oracle mode) and scores it. `model` may be null in oracle mode.
EvalResult evaluate_set(const std::filesystem::path& manifest, Split split,
                        const model::SmtModel<float>* model, const kern::Vocabulary* vocab,
                        const EvalOptions& options);

/// Writes results.tsv, samples.tsv and diff.txt.
void write_outputs(const std::filesystem::path& out_dir, const EvalResult& result);

}  // namespace smt::eval
