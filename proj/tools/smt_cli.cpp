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

// smt: corpus generation, training, transcription, validation and evaluation.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <Eigen/Core>

#include "CLI11.hpp"
#include "smt/checkpoint.hpp"
#include "smt/config.hpp"
#include "smt/evaluate.hpp"
#include "smt/image.hpp"
#include "smt/kern.hpp"
#include "smt/synth.hpp"
#include "smt/trainer.hpp"

namespace fs = std::filesystem;
using namespace smt;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kRefusal = 2, kLeakage = 3, kConfig = 4, kArtifact = 5 };

int exit_code_for(const Error& e) {
  const auto& k = e.kind();
  if (k == "Refusal") return kRefusal;
  if (k == "SplitLeakage") return kLeakage;
  if (k == "InvalidConfig" || k == "SequenceExceedsMaxLength") return kConfig;
  if (k == "CorruptCheckpoint" || k == "VocabularyMismatch" || k == "UnknownSymbol") return kArtifact;
  return kFailure;
}

struct Common {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool deterministic = false;
};

KeyValueConfig load_config(const Common& c) {
  return c.config_path.empty() ? KeyValueConfig() : KeyValueConfig::load(c.config_path);
}

/// Every key in a config file must be understood by some section.
void reject_unknown_keys(const KeyValueConfig& kv) {
  const auto unused = kv.unused();
  if (!unused.empty()) throw Error("InvalidConfig", "unknown config key '" + unused.front() + "'");
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("IO", "cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

synth::CorpusConfig corpus_config(const KeyValueConfig& kv) {
  synth::CorpusConfig c;
  if (auto s = kv.get_string("corpus.style")) c.style = synth::style_from_string(*s);
  kv.read("corpus.n_pieces", c.n_pieces);
  kv.read("corpus.excerpts_per_piece", c.excerpts_per_piece);
  kv.read("corpus.image_height", c.image_height);
  kv.read("corpus.degrade", c.degrade);
  kv.read("corpus.measures_per_excerpt", c.grammar.measures_per_excerpt);
  kv.read("corpus.rest_prob", c.grammar.rest_prob);
  kv.read("corpus.chord_prob", c.grammar.chord_prob);
  kv.read("corpus.accidental_prob", c.grammar.accidental_prob);
  kv.read("corpus.dotted_prob", c.grammar.dotted_prob);
  kv.read("corpus.split_prob", c.grammar.split_prob);
  kv.read("corpus.seed", c.grammar_seed);
  c.split_seed = c.grammar_seed;
  return c;
}

/// Reads every section so that unknown keys can be detected in one place.
void touch_all_sections(const KeyValueConfig& kv) {
  corpus_config(kv);
  train::TrainConfig tc;
  tc.apply(kv);
  model::ModelConfig mc;
  mc.apply(kv);
  kv.read("eval.dataset", tc.preset);
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "key = value settings file")->check(CLI::ExistingFile);
  app->add_option_function<std::uint64_t>(
      "--seed", [&c](const std::uint64_t& s) { c.seed = s, c.seed_set = true; }, "random seed");
  app->add_flag("--deterministic", c.deterministic, "single-threaded, reproducible execution");
}

// ---------------------------------------------------------------------------

struct MakeDatasetArgs {
  Common common;
  std::string out;
  std::string style;
  int pieces = 0;
  int excerpts = 0;
  int height = 0;
  bool degrade = false;
  bool force = false;
};

int cmd_make_dataset(const MakeDatasetArgs& a) {
  const auto kv = load_config(a.common);
  touch_all_sections(kv);
  reject_unknown_keys(kv);
  auto cfg = corpus_config(kv);
  if (!a.style.empty()) cfg.style = synth::style_from_string(a.style);
  if (a.pieces > 0) cfg.n_pieces = a.pieces;
  if (a.excerpts > 0) cfg.excerpts_per_piece = a.excerpts;
  if (a.height > 0) cfg.image_height = a.height;
  if (a.degrade) cfg.degrade = true;
  if (a.common.seed_set) cfg.grammar_seed = cfg.split_seed = a.common.seed;

  const fs::path out(a.out);
  if (fs::exists(out) && !fs::is_empty(out)) {
    if (!a.force) throw Error("Refusal", out.string() + " is not empty (use --force)");
    fs::remove_all(out);
  }
  const auto entries = synth::make_corpus(cfg, out);
  int counts[3] = {0, 0, 0};
  std::size_t valid = 0;
  for (const auto& e : entries) {
    ++counts[static_cast<int>(e.split)];
    valid += kern::validate_structure(read_text(out / e.kern_path)).valid;
  }
  std::printf("samples\t%zu\ntrain\t%d\nvalidation\t%d\ntest\t%d\nvalid_pct\t%.1f\n", entries.size(),
              counts[0], counts[1], counts[2],
              entries.empty() ? 0.0 : 100.0 * static_cast<double>(valid) / entries.size());
  return kOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  Common common;
  std::string manifest;
  std::string val_manifest;
  std::string out;
  std::string preset;
  std::string backbone;
  int max_steps = 0;
  int validation_interval = 0;
  bool resume = false;
  bool force = false;
  bool verbose = false;
};

int cmd_train(const TrainArgs& a) {
  const auto kv = load_config(a.common);
  touch_all_sections(kv);
  reject_unknown_keys(kv);
  std::string preset = a.preset;
  if (preset.empty()) preset = kv.get_string("train.preset").value_or("paper");
  train::FitOptions opt;
  if (preset == "micro") {
    opt.train = train::micro_train_config();
  } else if (preset != "paper") {
    throw Error("InvalidConfig", "unknown preset '" + preset + "'");
  }
  opt.train.apply(kv);
  opt.train.preset = preset;
  if (!a.backbone.empty()) opt.train.backbone = model::backbone_from_string(a.backbone);
  if (a.common.seed_set) opt.train.seed = a.common.seed;
  if (a.max_steps > 0) opt.train.max_steps = a.max_steps;
  if (a.validation_interval > 0) opt.train.validation_interval = a.validation_interval;
  opt.train.validation_interval = std::min(opt.train.validation_interval, opt.train.max_steps);
  opt.model_overrides = kv;
  opt.resume = a.resume;
  opt.verbose = a.verbose;

  const fs::path out(a.out);
  if (!a.resume && fs::exists(out / "last.smt")) {
    if (!a.force) throw Error("Refusal", out.string() + " already holds a run (use --resume or --force)");
    for (const char* f : {"last.smt", "best.smt", "history.tsv", "vocab.txt"}) fs::remove(out / f);
  }
  const fs::path val = a.val_manifest.empty() ? fs::path(a.manifest) : fs::path(a.val_manifest);
  const auto result = train::fit(a.manifest, val, opt, out);
  std::printf("steps\t%lld\nbest_ser\t%.4f\ncheckpoint\t%s\n", static_cast<long long>(result.steps),
              result.best_ser, result.best.string().c_str());
  return kOk;
}

// ---------------------------------------------------------------------------

kern::Vocabulary vocabulary_for(const std::string& vocab_path, const fs::path& checkpoint) {
  const fs::path p = vocab_path.empty() ? checkpoint.parent_path() / "vocab.txt" : fs::path(vocab_path);
  if (!fs::exists(p)) throw Error("VocabularyMismatch", "vocabulary file " + p.string() + " not found");
  return kern::Vocabulary::load(p.string());
}

struct TranscribeArgs {
  std::string image;
  std::string checkpoint;
  std::string vocab;
  std::string out;
  bool validate = false;
};

int cmd_transcribe(const TranscribeArgs& a) {
  const auto vocab = vocabulary_for(a.vocab, a.checkpoint);
  const auto loaded = checkpoint::load(a.checkpoint, vocab.hash());
  const auto img = image::load_normalized(a.image, loaded.model.config().image_height);
  const std::string text = train::ids_to_text(loaded.model.greedy_decode(img), vocab);
  if (a.out.empty()) {
    std::cout << text;
  } else {
    checkpoint::atomic_write(a.out, text);
  }
  if (a.validate)
    std::cerr << "structure: " << (kern::validate_structure(text).valid ? "VALID" : "INVALID") << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

int cmd_validate_kern(const std::vector<std::string>& paths) {
  std::vector<fs::path> files;
  for (const auto& p : paths) {
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::recursive_directory_iterator(p))
        if (e.is_regular_file() && e.path().extension() == ".krn") found.push_back(e.path());
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.emplace_back(p);
    }
  }
  int invalid = 0;
  for (const auto& f : files) {
    std::string text;
    try {
      text = read_text(f);
    } catch (const Error&) {
      std::cout << f.string() << "\tINVALID\tIO\n";
      ++invalid;
      continue;
    }
    const auto verdict = kern::validate_structure(text);
    if (verdict.valid) {
      std::cout << f.string() << "\tVALID\t\n";
    } else {
      const auto& v = verdict.violations.front();
      std::cout << f.string() << "\tINVALID\t" << v.kind << " at line " << v.line << "\n";
      ++invalid;
    }
  }
  return std::min(invalid, 125);
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
  Common common;
  std::string manifest;
  std::string split = "test";
  std::string checkpoint;
  std::string vocab;
  std::string out;
  std::string dataset;
  int limit = 0;
  bool oracle = false;
};

int cmd_evaluate(const EvaluateArgs& a) {
  const auto kv = load_config(a.common);
  touch_all_sections(kv);
  reject_unknown_keys(kv);
  eval::EvalOptions opt;
  opt.dataset = kv.get_string("eval.dataset").value_or("synthetic");
  if (!a.dataset.empty()) opt.dataset = a.dataset;
  opt.oracle = a.oracle;
  opt.limit = a.limit;
  const Split split = split_from_string(a.split);

  eval::EvalResult result;
  if (a.oracle) {
    result = eval::evaluate_set(a.manifest, split, nullptr, nullptr, opt);
  } else {
    if (a.checkpoint.empty()) throw Error("CorruptCheckpoint", "--checkpoint is required without --oracle");
    const auto vocab = vocabulary_for(a.vocab, a.checkpoint);
    const auto loaded = checkpoint::load(a.checkpoint, vocab.hash());
    opt.model_name = "smt-" + model::to_string(loaded.model.config().backbone);
    result = eval::evaluate_set(a.manifest, split, &loaded.model, &vocab, opt);
  }
  eval::write_outputs(a.out, result);
  std::printf("cer\t%.4f\nser\t%.4f\nler\t%.4f\nrender_pct\t%.4f\n", result.report.cer,
              result.report.ser, result.report.ler, result.report.render_pct);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"smt: end-to-end music score transcription toolkit"};
  app.require_subcommand(1);

  MakeDatasetArgs md;
  auto* make = app.add_subcommand("make-dataset", "generate a synthetic image/kern corpus");
  add_common(make, md.common);
  make->add_option("--out", md.out, "output directory")->required();
  make->add_option("--style", md.style, "grandstaff or quartet");
  make->add_option("--pieces", md.pieces, "number of pieces");
  make->add_option("--excerpts", md.excerpts, "excerpts per piece");
  make->add_option("--height", md.height, "image height in pixels");
  make->add_flag("--degrade", md.degrade, "apply photocopy-style degradation");
  make->add_flag("--force", md.force, "overwrite a non-empty output directory");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "train a model on a manifest");
  add_common(train_cmd, tr.common);
  train_cmd->add_option("--manifest", tr.manifest, "manifest with train (and validation) rows")
      ->required()
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--val-manifest", tr.val_manifest, "separate validation manifest")
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--out", tr.out, "run directory")->required();
  train_cmd->add_option("--preset", tr.preset, "paper or micro")->check(CLI::IsMember({"paper", "micro"}));
  train_cmd->add_option("--backbone", tr.backbone, "cnn, swin or convnext")
      ->check(CLI::IsMember({"cnn", "swin", "convnext"}));
  train_cmd->add_option("--max-steps", tr.max_steps, "optimizer steps");
  train_cmd->add_option("--validation-interval", tr.validation_interval, "steps between validations");
  train_cmd->add_flag("--resume", tr.resume, "continue from last.smt in the run directory");
  train_cmd->add_flag("--force", tr.force, "discard an existing run");
  train_cmd->add_flag("--verbose", tr.verbose, "progress on stderr");

  TranscribeArgs tx;
  auto* transcribe = app.add_subcommand("transcribe", "transcribe one image to kern");
  transcribe->add_option("image", tx.image, "PNG image")->required()->check(CLI::ExistingFile);
  transcribe->add_option("--checkpoint", tx.checkpoint, "model checkpoint")->required();
  transcribe->add_option("--vocab", tx.vocab, "vocabulary file (default: next to checkpoint)");
  transcribe->add_option("--out", tx.out, "output file (default: stdout)");
  transcribe->add_flag("--validate", tx.validate, "report structural validity on stderr");

  std::vector<std::string> vk_paths;
  auto* validate = app.add_subcommand("validate-kern", "check kern files for structural validity");
  validate->add_option("paths", vk_paths, "files or directories")->required();

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "score a model on a manifest split");
  add_common(evaluate, ev.common);
  evaluate->add_option("--manifest", ev.manifest, "manifest")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--split", ev.split, "train, validation or test")
      ->check(CLI::IsMember({"train", "validation", "val", "test"}));
  evaluate->add_option("--checkpoint", ev.checkpoint, "model checkpoint");
  evaluate->add_option("--vocab", ev.vocab, "vocabulary file (default: next to checkpoint)");
  evaluate->add_option("--out", ev.out, "output directory")->required();
  evaluate->add_option("--dataset", ev.dataset, "dataset label for the results table");
  evaluate->add_option("--limit", ev.limit, "evaluate at most this many samples");
  evaluate->add_flag("--oracle", ev.oracle, "score references against themselves");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  Eigen::setNbThreads(1);
  try {
    if (*make) return cmd_make_dataset(md);
    if (*train_cmd) return cmd_train(tr);
    if (*transcribe) return cmd_transcribe(tx);
    if (*validate) return cmd_validate_kern(vk_paths);
    if (*evaluate) return cmd_evaluate(ev);
  } catch (const Error& e) {
    std::cerr << "smt: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "smt: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
