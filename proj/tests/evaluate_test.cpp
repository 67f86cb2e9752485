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

#include "doctest.h"
#include "oracles.hpp"
#include "smt/evaluate.hpp"
#include "smt/synth.hpp"

using namespace smt;

namespace {

std::filesystem::path corpus_dir() {
  static const auto dir = [] {
    const auto d = testing::fresh_dir("evaluate");
    synth::CorpusConfig c;
    c.n_pieces = 6;
    c.excerpts_per_piece = 2;
    c.image_height = 64;
    c.grammar.measures_per_excerpt = 1;
    synth::make_corpus(c, d);
    return d;
  }();
  return dir;
}

kern::Vocabulary corpus_vocab() {
  std::vector<kern::KernDocument> docs;
  for (const auto& s : synth::load_samples(corpus_dir() / "manifest.tsv", std::nullopt, 64)) docs.push_back(s.kern);
  return kern::Vocabulary::build(docs, kern::Granularity::kCharacter);
}

}  // namespace

TEST_CASE("oracle mode scores zero error and full render rate") {
  eval::EvalOptions o;
  o.oracle = true;
  o.image_height = 64;
  const auto r = eval::evaluate_set(corpus_dir() / "manifest.tsv", Split::kTrain, nullptr, nullptr, o);
  CHECK(r.report.count() > 0);
  CHECK(r.report.cer == 0.0);
  CHECK(r.report.ser == 0.0);
  CHECK(r.report.ler == 0.0);
  CHECK(r.report.render_pct == 100.0);
  CHECK(r.results_table.find("synthetic\toracle\t") != std::string::npos);
}

TEST_CASE("a model that emits nothing scores one hundred percent error") {
  const auto vocab = corpus_vocab();
  model::SmtModel<float> m(model::ModelConfig::micro(model::Backbone::kCnn, vocab.size()), 1);
  m.params().value(m.params().find("decoder.output.bias"))(0, kern::Vocabulary::kEot) = 100.0f;
  eval::EvalOptions o;
  const auto r = eval::evaluate_set(corpus_dir() / "manifest.tsv", Split::kTest, &m, &vocab, o);
  REQUIRE(r.report.count() > 0);
  for (const auto& h : r.hypotheses) CHECK(h.empty());
  CHECK(r.report.cer == 100.0);
  CHECK(r.report.ser == 100.0);
  CHECK(r.report.ler == 100.0);
  CHECK(r.report.render_pct == 0.0);
  const auto out = testing::fresh_dir("evaluate_out");
  eval::write_outputs(out, r);
  CHECK(testing::read_file(out / "results.tsv") == r.results_table);
  CHECK(testing::read_file(out / "samples.tsv") == r.sample_table);
  CHECK(std::filesystem::exists(out / "diff.txt"));
}

TEST_CASE("a vocabulary missing corpus characters is rejected") {
  const std::vector<kern::KernDocument> tiny{kern::parse_kern("**kern\n4c\n*-\n")};
  const auto vocab = kern::Vocabulary::build(tiny, kern::Granularity::kCharacter);
  const model::SmtModel<float> m(model::ModelConfig::micro(model::Backbone::kCnn, vocab.size()), 1);
  try {
    eval::evaluate_set(corpus_dir() / "manifest.tsv", Split::kTest, &m, &vocab, {});
    FAIL("expected VocabularyMismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == "VocabularyMismatch");
  }
}

TEST_CASE("render percentage is the validator acceptance fraction") {
  const auto corpus = testing::fixture_corpus();
  std::vector<metrics::SampleMetrics> scored;
  int accepted = 0;
  for (std::size_t i = 0; i < 40; ++i) {
    const std::string& ref = corpus[i % corpus.size()];
    std::string hyp = ref;
    if (i % 3 == 0) {
      const auto muts = testing::delimiter_mutations(ref);
      if (!muts.empty()) hyp = muts[i % muts.size()].text;
    }
    accepted += kern::validate_structure(hyp).valid ? 1 : 0;
    scored.push_back(metrics::score_pair(hyp, ref));
  }
  const auto report = metrics::aggregate(scored);
  CHECK(accepted < 40);
  CHECK(report.render_pct == 100.0 * accepted / 40.0);
}
