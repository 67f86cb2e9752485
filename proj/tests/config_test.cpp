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

#include "doctest.h"
#include "smt/config.hpp"
#include "smt/model.hpp"
#include "smt/trainer.hpp"

using smt::Error;
using smt::KeyValueConfig;

TEST_CASE("key value parsing with comments and overrides") {
  const auto kv = KeyValueConfig::parse("# header\na = 1\n\nb=  two words \nlist = 1, 2,3\na = 5\nflag = true\n");
  CHECK(kv.get_int("a") == 5);
  CHECK(kv.get_string("b") == "two words");
  CHECK(kv.get_int_list("list") == std::vector<int>{1, 2, 3});
  CHECK(kv.get_bool("flag") == true);
  CHECK_FALSE(kv.get_int("missing").has_value());
}

TEST_CASE("malformed input and values are InvalidConfig") {
  CHECK_THROWS_AS(KeyValueConfig::parse("no equals sign\n"), Error);
  const auto kv = KeyValueConfig::parse("n = abc\nx = 1.5.2\nb = maybe\nl = 1,,2\n");
  CHECK_THROWS_AS(kv.get_int("n"), Error);
  CHECK_THROWS_AS(kv.get_double("x"), Error);
  CHECK_THROWS_AS(kv.get_bool("b"), Error);
  CHECK_THROWS_AS(kv.get_int_list("l"), Error);
  try {
    kv.get_int("n");
  } catch (const Error& e) {
    CHECK(e.kind() == "InvalidConfig");
  }
}

TEST_CASE("unread keys are reported") {
  const auto kv = KeyValueConfig::parse("model.decoder.layers = 3\nmodel.decoder.typo = 1\n");
  auto cfg = smt::model::ModelConfig::micro(smt::model::Backbone::kCnn, 20);
  cfg.apply(kv);
  CHECK(cfg.decoder.layers == 3);
  CHECK(kv.unused() == std::vector<std::string>{"model.decoder.typo"});
}

TEST_CASE("model config validation") {
  using smt::model::Backbone;
  using smt::model::ModelConfig;
  for (auto b : {Backbone::kCnn, Backbone::kSwin, Backbone::kConvNext}) {
    CHECK_NOTHROW(ModelConfig::paper(b, 40).validate());
    CHECK_NOTHROW(ModelConfig::micro(b, 40).validate());
    CHECK(ModelConfig::paper(b, 40).channels() == 256);
  }
  auto c = ModelConfig::paper(Backbone::kCnn, 40);
  c.decoder.heads = 3;
  CHECK_THROWS_AS(c.validate(), Error);
  c = ModelConfig::paper(Backbone::kCnn, 40);
  c.cnn.stride_w.pop_back();
  CHECK_THROWS_AS(c.validate(), Error);
  c = ModelConfig::paper(Backbone::kCnn, 40);
  c.cnn.channels.back() = 30;
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK_THROWS_AS(ModelConfig::preset_named("huge", Backbone::kCnn, 40), Error);
}

TEST_CASE("paper and micro presets carry the documented sizes") {
  using smt::model::Backbone;
  using smt::model::ModelConfig;
  const auto p = ModelConfig::paper(Backbone::kCnn, 40);
  CHECK(p.decoder.layers == 8);
  CHECK(p.decoder.heads == 4);
  CHECK(p.decoder.width == 256);
  CHECK(p.decoder.ff_width == 256);
  CHECK(p.downscale() == std::array<int, 2>{16, 8});
  CHECK(ModelConfig::paper(Backbone::kSwin, 40).downscale() == std::array<int, 2>{16, 16});
  CHECK(ModelConfig::paper(Backbone::kConvNext, 40).downscale() == std::array<int, 2>{16, 16});
  const auto m = ModelConfig::micro(Backbone::kCnn, 40);
  CHECK(m.decoder.layers == 2);
  CHECK(m.decoder.width == 64);
  CHECK(m.downscale() == std::array<int, 2>{16, 8});
}

TEST_CASE("model config survives JSON serialization") {
  auto c = smt::model::ModelConfig::micro(smt::model::Backbone::kSwin, 33);
  c.decoder.dropout = 0.25;
  c.swin.window = 5;
  const auto back = smt::model::ModelConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.backbone == smt::model::Backbone::kSwin);
  CHECK(back.swin.window == 5);
}

TEST_CASE("train config validation and schedule") {
  smt::train::TrainConfig t;
  CHECK_NOTHROW(t.validate());
  CHECK(t.lr_at(1) == doctest::Approx(1e-4 / 500));
  CHECK(t.lr_at(500) == doctest::Approx(1e-4));
  CHECK(t.lr_at(10000) == doctest::Approx(1e-4));
  t.validation_interval = t.max_steps + 1;
  CHECK_THROWS_AS(t.validate(), Error);
  t = {};
  t.batch_size = 0;
  CHECK_THROWS_AS(t.validate(), Error);
  t = {};
  t.apply(KeyValueConfig::parse("train.batch_size = 2\ntrain.seed = 17\n"));
  CHECK(t.batch_size == 2);
  CHECK(t.seed == 17);
}
