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
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "smt/kern.hpp"
#include "smt/synth.hpp"

using namespace smt;
namespace fs = std::filesystem;

namespace {

std::string cli() { return testing::cli_path(); }

int run_logged(const std::string& args, const fs::path& out, const fs::path& err) {
  return testing::run(cli() + " " + args + " > '" + out.string() + "' 2> '" + err.string() + "'");
}

// A 12-sample corpus with one-measure excerpts, built once per process.
fs::path corpus() {
  static const fs::path dir = [] {
    const auto d = testing::fresh_dir("cli_corpus");
    testing::write_file(d / "corpus.cfg", "corpus.measures_per_excerpt = 1\n");
    const int rc = testing::run(cli() + " make-dataset --out '" + (d / "data").string() +
                                "' --pieces 6 --excerpts 2 --height 64 --seed 3 --config '" +
                                (d / "corpus.cfg").string() + "' > /dev/null 2>&1");
    REQUIRE(rc == 0);
    return d / "data";
  }();
  return dir;
}

}  // namespace

TEST_CASE("make-dataset summarizes, refuses to overwrite, and honours --force") {
  const auto dir = testing::fresh_dir("cli_make");
  const auto out = dir / "out.txt", err = dir / "err.txt";
  const std::string args = "make-dataset --out '" + (dir / "data").string() + "' --pieces 16 --excerpts 4 --height 32";
  REQUIRE(run_logged(args, out, err) == 0);
  const auto summary = testing::read_file(out);
  CHECK(summary.find("samples\t64") != std::string::npos);
  CHECK(summary.find("valid_pct\t100") != std::string::npos);
  CHECK(synth::read_manifest(dir / "data" / "manifest.tsv").size() == 64);
  CHECK(run_logged(args, out, err) == 2);
  CHECK(run_logged(args + " --force", out, err) == 0);
}

TEST_CASE("quartet style yields four-spine documents") {
  const auto dir = testing::fresh_dir("cli_quartet");
  REQUIRE(testing::run(cli() + " make-dataset --out '" + (dir / "q").string() +
                       "' --style quartet --pieces 3 --excerpts 1 --height 64 > /dev/null 2>&1") == 0);
  for (const auto& e : synth::read_manifest(dir / "q" / "manifest.tsv"))
    CHECK(kern::parse_kern(testing::read_file(dir / "q" / e.kern_path)).spine_count() == 4);
}

TEST_CASE("validate-kern reports one verdict per file and counts failures") {
  const auto dir = testing::fresh_dir("cli_validate");
  for (int i = 0; i < 10; ++i)
    testing::write_file(dir / "set" / ("f" + std::to_string(i) + ".krn"), "**kern\t**kern\n4c\t4e\n*-\t*-\n");
  const auto out = dir / "out.txt", err = dir / "err.txt";
  CHECK(run_logged("validate-kern '" + (dir / "set").string() + "'", out, err) == 0);
  testing::write_file(dir / "set" / "f3.krn", "**kern\t**kern\n4c4e\n*-\t*-\n");
  CHECK(run_logged("validate-kern '" + (dir / "set").string() + "'", out, err) == 1);
  const auto text = testing::read_file(out);
  CHECK(text.find("f3.krn\tINVALID\tMalformedRecord at line 2") != std::string::npos);
  CHECK(text.find("f2.krn\tVALID\t") != std::string::npos);

  testing::write_file(dir / "empty.krn", "");
  CHECK(run_logged("validate-kern '" + (dir / "empty.krn").string() + "' '" + (dir / "nope.krn").string() + "'", out,
                   err) == 2);
  const auto two = testing::read_file(out);
  CHECK(two.find("empty.krn\tINVALID\tMissingExclusiveInterpretation") != std::string::npos);
  CHECK(two.find("nope.krn\tINVALID\tIO") != std::string::npos);
}

TEST_CASE("configuration and usage errors exit with 4") {
  const auto dir = testing::fresh_dir("cli_config");
  const auto out = dir / "out.txt", err = dir / "err.txt";
  testing::write_file(dir / "bad.cfg", "train.batch_sise = 3\n");
  CHECK(run_logged("train --manifest '" + (corpus() / "manifest.tsv").string() + "' --out '" + (dir / "run").string() +
                       "' --config '" + (dir / "bad.cfg").string() + "'",
                   out, err) == 4);
  testing::write_file(dir / "neg.cfg", "train.batch_size = 0\n");
  CHECK(run_logged("train --manifest '" + (corpus() / "manifest.tsv").string() + "' --out '" + (dir / "run").string() +
                       "' --config '" + (dir / "neg.cfg").string() + "'",
                   out, err) == 4);
  CHECK(run_logged("make-dataset --bogus", out, err) == 4);
  CHECK(run_logged("", out, err) == 4);
}

TEST_CASE("leaked manifests exit with 3") {
  const auto dir = testing::fresh_dir("cli_leak");
  auto entries = synth::read_manifest(corpus() / "manifest.tsv");
  std::string train_piece;
  for (const auto& e : entries)
    if (e.split == Split::kTrain) train_piece = e.piece_id;
  for (auto& e : entries) {
    e.image_path = (corpus() / e.image_path).string();
    e.kern_path = (corpus() / e.kern_path).string();
    if (e.split == Split::kValidation) e.piece_id = train_piece;
  }
  synth::write_manifest(dir / "leaky.tsv", entries);
  CHECK(run_logged("train --manifest '" + (dir / "leaky.tsv").string() + "' --out '" + (dir / "run").string() +
                       "' --preset micro --max-steps 2",
                   dir / "out.txt", dir / "err.txt") == 3);
}

TEST_CASE("train, transcribe and evaluate with artifact checks") {
  const auto dir = testing::fresh_dir("cli_pipeline");
  const auto out = dir / "out.txt", err = dir / "err.txt";
  const auto manifest = (corpus() / "manifest.tsv").string();
  testing::write_file(dir / "train.cfg", "model.decoder.max_decode_length = 200\ntrain.validation_limit = 1\n");
  const std::string train_args = "train --manifest '" + manifest + "' --out '" + (dir / "run").string() +
                                 "' --preset micro --max-steps 4 --validation-interval 2 --seed 1 --config '" +
                                 (dir / "train.cfg").string() + "'";
  REQUIRE(run_logged(train_args, out, err) == 0);
  CHECK(testing::read_file(dir / "run" / "history.tsv").size() > 0);
  CHECK(run_logged(train_args, out, err) == 2);

  const auto image = (corpus() / synth::read_manifest(corpus() / "manifest.tsv").front().image_path).string();
  const std::string ckpt = (dir / "run" / "best.smt").string();
  REQUIRE(run_logged("transcribe '" + image + "' --checkpoint '" + ckpt + "' --validate", out, err) == 0);
  const auto stderr_text = testing::read_file(err);
  CHECK((stderr_text.find("structure: VALID") != std::string::npos ||
         stderr_text.find("structure: INVALID") != std::string::npos));

  testing::write_file(dir / "corrupt.smt", "SMTCKPT1garbage");
  CHECK(run_logged("transcribe '" + image + "' --checkpoint '" + (dir / "corrupt.smt").string() + "' --vocab '" +
                       (dir / "run" / "vocab.txt").string() + "'",
                   out, err) == 5);
  testing::write_file(dir / "other_vocab.txt", kern::Vocabulary().serialize());
  CHECK(run_logged("transcribe '" + image + "' --checkpoint '" + ckpt + "' --vocab '" +
                       (dir / "other_vocab.txt").string() + "'",
                   out, err) == 5);

  CHECK(run_logged("evaluate --manifest '" + manifest + "' --out '" + (dir / "eval").string() + "' --checkpoint '" +
                       (dir / "missing.smt").string() + "'",
                   out, err) == 5);
  REQUIRE(run_logged("evaluate --manifest '" + manifest + "' --out '" + (dir / "oracle").string() + "' --oracle", out,
                     err) == 0);
  const auto results = testing::read_file(dir / "oracle" / "results.tsv");
  CHECK(results.find("\t0.0000\t0.0000\t0.0000\t100.0000") != std::string::npos);
  REQUIRE(run_logged("evaluate --manifest '" + manifest + "' --out '" + (dir / "eval").string() + "' --checkpoint '" +
                         ckpt + "' --limit 1",
                     out, err) == 0);
  CHECK(fs::exists(dir / "eval" / "samples.tsv"));
}
