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

#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "smt/kern.hpp"
#include "smt/model.hpp"

using namespace smt;
using model::Backbone;
using model::ModelConfig;
using model::SmtModel;

namespace {

constexpr int kSot = kern::Vocabulary::kSot;
constexpr int kEot = kern::Vocabulary::kEot;

int ceil_div(int a, int b) { return (a + b - 1) / b; }

}  // namespace

TEST_CASE("2D positional encoding matches the closed form") {
  const auto pe = model::positional_encoding_2d<double>(7, 11, 16);
  REQUIRE(pe.rows() == 77);
  REQUIRE(pe.cols() == 16);
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 11; ++x)
      for (int c = 0; c < 16; ++c) CHECK(std::abs(pe(y * 11 + x, c) - testing::pe_reference(y, x, c, 16)) < 1e-6);
  for (int c = 0; c < 8; ++c)
    for (int x = 0; x < 11; ++x)
      for (int y = 1; y < 7; ++y) CHECK(pe(y * 11 + x, c) == pe(x, c));
  for (int c = 8; c < 16; ++c)
    for (int y = 0; y < 7; ++y)
      for (int x = 1; x < 11; ++x) CHECK(pe(y * 11 + x, c) == pe(y * 11, c));
}

TEST_CASE("positional encoding spot values") {
  const auto pe = model::positional_encoding_2d<double>(1, 2, 256);
  CHECK(pe(0, 0) == 0.0);
  CHECK(pe(0, 1) == 1.0);
  CHECK(pe(1, 0) == doctest::Approx(0.841471).epsilon(1e-6));
  CHECK_THROWS_AS(model::positional_encoding_2d<double>(2, 2, 6), Error);
  try {
    model::positional_encoding_2d<double>(2, 2, 6);
  } catch (const Error& e) {
    CHECK(e.kind() == "ChannelCountNotDivisibleBy4");
  }
}

TEST_CASE("adding PE is an elementwise sum that depends only on the shape") {
  Rng rng(1);
  model::FeatureMap<double> fm{nn::random_normal<double>(6, 8, 1.0, rng), 2, 3, 16, 8};
  const auto out = model::add_2d_pe(fm);
  const Mat<double> expected = fm.values + model::positional_encoding_2d<double>(2, 3, 8);
  CHECK(out.values == expected);
  CHECK(out.r_h == 16);
  CHECK(out.r_w == 8);
}

TEST_CASE("flatten is row major and invertible") {
  Rng rng(2);
  model::FeatureMap<double> fm{nn::random_normal<double>(6, 4, 1.0, rng), 2, 3};
  const auto seq = model::flatten(fm);
  CHECK(seq.rows() == 6);
  for (int c = 0; c < 4; ++c) CHECK(seq(3, c) == fm.at(1, 0, c));
  const auto back = model::unflatten(seq, 2, 3);
  CHECK(back.values == fm.values);
  model::FeatureMap<double> one{nn::random_normal<double>(1, 4, 1.0, rng), 1, 1};
  CHECK(model::flatten(one) == one.values);
}

TEST_CASE("encoder output follows the ceil formula for every backbone") {
  Rng rng(3);
  for (auto b : {Backbone::kCnn, Backbone::kSwin, Backbone::kConvNext}) {
    const SmtModel<float> m(ModelConfig::micro(b, 12), 5);
    const auto [rh, rw] = m.config().downscale();
    for (int trial = 0; trial < 6; ++trial) {
      const int h = rng.uniform_int(rh, 80), w = rng.uniform_int(rw, 160);
      const auto fm = m.encode(testing::random_image(h, w, 10 + static_cast<std::uint64_t>(trial)));
      INFO(model::to_string(b) << " " << h << "x" << w);
      CHECK(fm.h == ceil_div(h, rh));
      CHECK(fm.w == ceil_div(w, rw));
      CHECK(fm.channels() == m.config().channels());
      CHECK(fm.r_h == rh);
      CHECK(fm.r_w == rw);
    }
  }
}

TEST_CASE("full-size encoders on a 128x512 image") {
  const auto img = testing::random_image(128, 512, 4);
  const SmtModel<float> cnn(ModelConfig::paper(Backbone::kCnn, 12), 1);
  const auto a = cnn.encode(img);
  CHECK(a.h == 8);
  CHECK(a.w == 64);
  CHECK(a.channels() == 256);
  const SmtModel<float> next(ModelConfig::paper(Backbone::kConvNext, 12), 1);
  const auto b = next.encode(img);
  CHECK(b.h == 8);
  CHECK(b.w == 32);
  CHECK(b.channels() == 256);
}

TEST_CASE("images below one downscale step are rejected") {
  const SmtModel<float> m(ModelConfig::micro(Backbone::kCnn, 12), 1);
  try {
    m.encode(testing::random_image(15, 512, 1));
    FAIL("expected ImageTooSmall");
  } catch (const Error& e) {
    CHECK(e.kind() == "ImageTooSmall");
  }
}

TEST_CASE("decoder distributions are normalized and causal") {
  const SmtModel<double> m(ModelConfig::micro(Backbone::kCnn, 12), 7);
  const auto memory = m.memory(testing::random_image(64, 96, 2));
  Rng rng(8);
  std::vector<int> prefix{kSot};
  for (int i = 0; i < 15; ++i) prefix.push_back(rng.uniform_int(3, 11));
  const auto full = m.logits(prefix, memory);
  for (int t = 0; t < 8; ++t) {
    auto changed = prefix;
    for (std::size_t j = static_cast<std::size_t>(t) + 1; j < changed.size(); ++j) changed[j] = rng.uniform_int(3, 11);
    const auto other = m.logits(changed, memory);
    CHECK(other.row(t) == full.row(t));
  }
  for (std::size_t n = 1; n <= prefix.size(); n += 4) {
    const auto p = m.decode_step(std::span<const int>(prefix.data(), n), memory);
    CHECK(p.minCoeff() >= 0.0);
    CHECK(std::abs(p.sum() - 1.0) < 1e-6);
  }
}

TEST_CASE("zero output projection gives the uniform distribution") {
  SmtModel<double> m(ModelConfig::micro(Backbone::kCnn, 12), 7);
  m.params().value(m.params().find("decoder.output.weight")).setZero();
  m.params().value(m.params().find("decoder.output.bias")).setZero();
  const auto p = m.decode_step(std::vector<int>{kSot}, m.memory(testing::random_image(64, 64, 1)));
  for (Eigen::Index i = 0; i < p.size(); ++i) CHECK(p(i) == doctest::Approx(1.0 / 12).epsilon(1e-12));
}

TEST_CASE("shuffling features before PE changes the output") {
  // Cross-attention is order-blind, so only the positional encoding can
  // make the decoder sensitive to where a feature came from.
  const SmtModel<double> m(ModelConfig::micro(Backbone::kCnn, 12), 7);
  const auto fm = m.encode(testing::random_image(64, 128, 5));
  REQUIRE(fm.values.rows() > 2);
  auto shuffled = fm;
  shuffled.values = fm.values.colwise().reverse();
  const std::vector<int> prefix{kSot, 5, 6};
  const auto with_pe = m.logits(prefix, model::flatten(model::add_2d_pe(fm)));
  const auto shuffled_pe = m.logits(prefix, model::flatten(model::add_2d_pe(shuffled)));
  CHECK((with_pe - shuffled_pe).cwiseAbs().maxCoeff() > 1e-6);
  const auto raw = m.logits(prefix, model::flatten(fm));
  const auto shuffled_raw = m.logits(prefix, model::flatten(shuffled));
  CHECK((raw - shuffled_raw).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(model::flatten(model::add_2d_pe(fm)) == m.memory(testing::random_image(64, 128, 5)));
}

TEST_CASE("cached greedy decoding equals step-by-step decoding") {
  for (auto b : {Backbone::kCnn, Backbone::kSwin, Backbone::kConvNext}) {
    auto cfg = ModelConfig::micro(b, 12);
    cfg.decoder.max_decode_length = 40;
    const SmtModel<float> m(cfg, 11);
    const auto memory = m.memory(testing::random_image(64, 96, 6));
    const auto fast = m.greedy_decode_memory(memory);
    CHECK(fast == m.greedy_decode_reference(memory));
    CHECK(fast == m.greedy_decode(testing::random_image(64, 96, 6)));
    CHECK(std::find(fast.begin(), fast.end(), kSot) == fast.end());
    CHECK(std::find(fast.begin(), fast.end(), kEot) == fast.end());
  }
}

TEST_CASE("greedy decoding stops at the length cap") {
  auto cfg = ModelConfig::micro(Backbone::kCnn, 12);
  cfg.decoder.max_decode_length = 4;
  SmtModel<float> m(cfg, 3);
  m.params().value(m.params().find("decoder.output.weight")).setZero();
  auto& bias = m.params().value(m.params().find("decoder.output.bias"));
  bias.setZero();
  bias(0, 7) = 5.0f;
  const auto out = m.greedy_decode(testing::random_image(64, 64, 1));
  CHECK(out == std::vector<int>{7, 7, 7, 7});
  // Ties go to the lowest id.
  bias(0, 9) = 5.0f;
  CHECK(m.greedy_decode(testing::random_image(64, 64, 1)) == std::vector<int>{7, 7, 7, 7});
  try {
    m.logits(std::vector<int>{kSot, 3, 3, 3, 3}, m.memory(testing::random_image(64, 64, 1)));
    FAIL("expected PrefixTooLong");
  } catch (const Error& e) {
    CHECK(e.kind() == "PrefixTooLong");
  }
}

TEST_CASE("construction is a function of the seed") {
  const SmtModel<float> a(ModelConfig::micro(Backbone::kSwin, 12), 21), b(ModelConfig::micro(Backbone::kSwin, 12), 21),
      c(ModelConfig::micro(Backbone::kSwin, 12), 22);
  REQUIRE(a.params().size() == b.params().size());
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < a.params().size(); ++i) {
    all_equal = all_equal && a.params().value(i) == b.params().value(i);
    any_diff = any_diff || a.params().value(i) != c.params().value(i);
  }
  CHECK(all_equal);
  CHECK(any_diff);
  const auto img = testing::random_image(64, 80, 1);
  CHECK(a.greedy_decode(img) == b.greedy_decode(img));
}
