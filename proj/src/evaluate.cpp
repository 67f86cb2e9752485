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

#include "smt/evaluate.hpp"

#include "smt/checkpoint.hpp"
#include "smt/synth.hpp"
#include "smt/trainer.hpp"

namespace smt::eval {

void check_vocabulary_covers(const kern::Vocabulary& vocab,
                             const std::vector<kern::KernDocument>& references) {
  for (const auto& doc : references)
    for (const auto& tok : kern::tokenize(doc, kern::Granularity::kCharacter))
      if (!vocab.find(tok))
        throw Error("VocabularyMismatch", "symbol '" + tok + "' is not in the model vocabulary");
}

EvalResult evaluate_set(const std::filesystem::path& manifest, Split split,
                        const model::SmtModel<float>* model, const kern::Vocabulary* vocab,
                        const EvalOptions& options) {
  if (!options.oracle && (!model || !vocab))
    throw Error("InvalidArgument", "a model and vocabulary are required unless in oracle mode");
  const int height = model ? model->config().image_height : options.image_height;
  auto samples = synth::load_samples(manifest, split, height);
  if (options.limit > 0 && static_cast<int>(samples.size()) > options.limit)
    samples.resize(static_cast<std::size_t>(options.limit));
  if (samples.empty()) throw Error("InvalidConfig", "no samples in split " + to_string(split));

  EvalResult r;
  std::vector<kern::KernDocument> docs;
  for (const auto& s : samples) docs.push_back(s.kern);
  if (!options.oracle) check_vocabulary_covers(*vocab, docs);

  std::vector<metrics::SampleMetrics> scored;
  for (const auto& s : samples) {
    const std::string ref = kern::to_text(s.kern, false);
    const std::string hyp =
        options.oracle ? ref : train::ids_to_text(model->greedy_decode(s.pixels), *vocab);
    auto m = metrics::score_pair(hyp, ref);
    m.sample_id = s.sample_id;
    scored.push_back(std::move(m));
    r.sample_ids.push_back(s.sample_id);
    r.hypotheses.push_back(hyp);
    r.references.push_back(ref);
    r.diff += "== " + s.sample_id + "\n" + metrics::line_diff(hyp, ref);
  }
  r.report = metrics::aggregate(std::move(scored));
  const metrics::ResultRow row{options.dataset, options.oracle ? "oracle" : options.model_name, r.report};
  r.results_table = metrics::results_table(std::span<const metrics::ResultRow>(&row, 1));
  r.sample_table = metrics::sample_table(r.report);
  return r;
}

void write_outputs(const std::filesystem::path& out_dir, const EvalResult& result) {
  checkpoint::atomic_write(out_dir / "results.tsv", result.results_table);
  checkpoint::atomic_write(out_dir / "samples.tsv", result.sample_table);
  checkpoint::atomic_write(out_dir / "diff.txt", result.diff);
}

}  // namespace smt::eval
