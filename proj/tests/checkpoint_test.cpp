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

#include <filesystem>
#include <functional>

#include "doctest.h"
#include "oracles.hpp"
#include "smt/checkpoint.hpp"

using namespace smt;

namespace {

std::string kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return "";
}

}  // namespace

TEST_CASE("parameters, metadata and optimizer state round trip") {
  const auto dir = testing::fresh_dir("checkpoint_rt");
  for (auto b : {model::Backbone::kCnn, model::Backbone::kSwin, model::Backbone::kConvNext}) {
    const model::SmtModel<float> m(model::ModelConfig::micro(b, 17), 4);
    checkpoint::OptimizerState opt;
    opt.step = 42;
    Rng rng(1);
    for (int i = 0; i < m.params().size(); ++i) {
      const auto& v = m.params().value(i);
      opt.m.push_back(nn::random_normal<float>(v.rows(), v.cols(), 1.0, rng));
      opt.v.push_back(nn::random_normal<float>(v.rows(), v.cols(), 1.0, rng).cwiseAbs());
    }
    const checkpoint::Metadata meta{"00112233aabbccdd", 42, {{"best_ser", 12.5}}};
    const auto path = dir / (model::to_string(b) + ".smt");
    checkpoint::save(path, m, meta, &opt);
    const auto loaded = checkpoint::load(path, "00112233aabbccdd");
    CHECK(loaded.model.config().to_json() == m.config().to_json());
    REQUIRE(loaded.model.params().size() == m.params().size());
    for (int i = 0; i < m.params().size(); ++i) {
      CHECK(loaded.model.params().name(i) == m.params().name(i));
      CHECK(loaded.model.params().value(i) == m.params().value(i));
      CHECK(loaded.optimizer.m[static_cast<std::size_t>(i)] == opt.m[static_cast<std::size_t>(i)]);
      CHECK(loaded.optimizer.v[static_cast<std::size_t>(i)] == opt.v[static_cast<std::size_t>(i)]);
    }
    CHECK(loaded.has_optimizer);
    CHECK(loaded.optimizer.step == 42);
    CHECK(loaded.meta.step == 42);
    CHECK(loaded.meta.value("best_ser", 0) == 12.5);
    CHECK(checkpoint::read_metadata(path).vocab_hash == "00112233aabbccdd");
    const auto img = testing::random_image(64, 80, 2);
    CHECK(loaded.model.greedy_decode(img) == m.greedy_decode(img));
  }
}

TEST_CASE("saving twice gives identical bytes and leaves no temporaries") {
  const auto dir = testing::fresh_dir("checkpoint_bytes");
  const model::SmtModel<float> m(model::ModelConfig::micro(model::Backbone::kCnn, 9), 4);
  checkpoint::save(dir / "a.smt", m, {"h", 1, {}});
  checkpoint::save(dir / "b.smt", m, {"h", 1, {}});
  CHECK(testing::read_file(dir / "a.smt") == testing::read_file(dir / "b.smt"));
  int files = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir)) ++files;
  CHECK(files == 2);
}

TEST_CASE("damaged, missing and mismatched checkpoints are refused") {
  const auto dir = testing::fresh_dir("checkpoint_bad");
  const model::SmtModel<float> m(model::ModelConfig::micro(model::Backbone::kCnn, 9), 4);
  const auto path = dir / "m.smt";
  checkpoint::save(path, m, {"abcd", 1, {}});
  const std::string bytes = testing::read_file(path);

  CHECK(kind_of([&] { checkpoint::load(dir / "missing.smt"); }) == "CorruptCheckpoint");
  CHECK(kind_of([&] { checkpoint::load(path, "other"); }) == "VocabularyMismatch");
  CHECK(kind_of([&] { checkpoint::load(path, "abcd"); }).empty());

  std::string flipped = bytes;
  flipped[flipped.size() - 3] = static_cast<char>(flipped[flipped.size() - 3] ^ 0x40);
  testing::write_file(dir / "flipped.smt", flipped);
  CHECK(kind_of([&] { checkpoint::load(dir / "flipped.smt"); }) == "CorruptCheckpoint");

  testing::write_file(dir / "short.smt", bytes.substr(0, bytes.size() / 2));
  CHECK(kind_of([&] { checkpoint::load(dir / "short.smt"); }) == "CorruptCheckpoint");

  testing::write_file(dir / "magic.smt", "NOTACKPT" + bytes.substr(8));
  CHECK(kind_of([&] { checkpoint::load(dir / "magic.smt"); }) == "CorruptCheckpoint");

  testing::write_file(dir / "junk.smt", "hello");
  CHECK(kind_of([&] { checkpoint::read_metadata(dir / "junk.smt"); }) == "CorruptCheckpoint");
}
