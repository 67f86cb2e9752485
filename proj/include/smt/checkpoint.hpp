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
#include <string>
#include <vector>

#include "smt/kern.hpp"
#include "smt/model.hpp"

namespace smt::checkpoint {

/// Adam moments saved alongside parameters so training can resume exactly.
struct OptimizerState {
  std::int64_t step = 0;
  std::vector<Mat<float>> m;
  std::vector<Mat<float>> v;
};

/// Everything a checkpoint file holds besides the parameters themselves.
struct Metadata {
  std::string vocab_hash;
  std::int64_t step = 0;
  /// Free-form numeric annotations (e.g. best validation SER).
  std::vector<std::pair<std::string, double>> values;

  double value(const std::string& key, double fallback) const;
};

/// Writes a self-describing archive: magic, JSON header (model config,
/// vocabulary hash, parameter shapes, payload checksum), raw float payload.
/// The file appears atomically (temp file, then rename).
void save(const std::filesystem::path& path, const model::SmtModel<float>& model,
          const Metadata& meta, const OptimizerState* optimizer = nullptr);

struct Loaded {
  model::SmtModel<float> model;
  Metadata meta;
  bool has_optimizer = false;
  OptimizerState optimizer;
};

/// Reads an archive. Throws Error("CorruptCheckpoint") on damaged or
/// missing files and Error("VocabularyMismatch") when `expected_vocab_hash`
/// is non-empty and differs from the stored hash.
Loaded load(const std::filesystem::path& path, const std::string& expected_vocab_hash = "");

/// Reads only the header's vocabulary hash and model config.
Metadata read_metadata(const std::filesystem::path& path, model::ModelConfig* config = nullptr);

/// Writes `bytes` to `path` through a temporary file and a rename.
void atomic_write(const std::filesystem::path& path, const std::string& bytes);

}  // namespace smt::checkpoint
