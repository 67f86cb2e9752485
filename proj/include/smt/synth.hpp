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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "smt/kern.hpp"
#include "smt/rng.hpp"
#include "smt/types.hpp"

namespace smt::synth {

enum class Style { kGrandStaff, kQuartet };

std::string to_string(Style style);
Style style_from_string(const std::string& name);
int spine_count(Style style);

/// A system image with its reference transcription. Pixels in [0,1].
struct ImageSample {
  GrayImage pixels;
  kern::KernDocument kern;
  std::string sample_id;
  std::string piece_id;
  Split split = Split::kTrain;
};

inline constexpr int kMinImageHeight = 32;
inline constexpr int kMinImageWidth = 64;
inline constexpr int kDefaultImageHeight = 128;

// ---------------------------------------------------------------------------
// Pseudo-renderer

/// Deterministic box-and-line engraving. One five-line staff band per spine
/// (first spine at the bottom), one column per record with visible content;
/// cells of a record share the column. Throws Error("SpineCountMismatch")
/// when the document's spine count does not match the style, and KernError
/// on invalid documents.
ImageSample pseudo_render(const kern::KernDocument& doc, Style style,
                          int height = kDefaultImageHeight);

// ---------------------------------------------------------------------------
// Degradation

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  double sample(Rng& rng) const { return lo == hi ? lo : rng.uniform(lo, hi); }
};

struct DegradationConfig {
  Range blur_radius{0.0, 0.0};   ///< px; Gaussian sigma = radius / 2
  Range contrast{1.0, 1.0};      ///< scale of (v - 0.5) around mid gray
  Range noise_sigma{0.0, 0.0};   ///< additive Gaussian noise
  Range rotation_deg{0.0, 0.0};
  double ink_bleed_prob = 0.0;   ///< per 8x8 tile: dilate or erode the ink
  double texture_blend = 0.0;    ///< weight of the procedural paper texture
  std::uint64_t seed = 0;

  /// Throws Error("InvalidConfig") on empty or non-finite ranges.
  void validate() const;

  static DegradationConfig identity();
  /// Low-quality photocopy look.
  static DegradationConfig photocopy();
  /// Photocopy plus bleeding/erased ink and paper texture.
  static DegradationConfig old_print();
};

/// Applies the configured distortions. Labels are untouched; output pixels
/// stay in [0,1]; the result depends only on (input, cfg).
ImageSample degrade(const ImageSample& img, const DegradationConfig& cfg);

// ---------------------------------------------------------------------------
// Piece-level splitting

struct SplitRatios {
  double train = 0.70;
  double validation = 0.15;
  double test = 0.15;
};

/// Assigns whole pieces to splits. Returns one split per input id, in input
/// order. Throws Error("InsufficientPieces") with fewer than 3 distinct ids.
std::vector<Split> split_by_piece(std::span<const std::string> piece_ids,
                                  const SplitRatios& ratios, std::uint64_t seed);

/// Convenience overload: sets `split` on every sample.
void split_by_piece(std::span<ImageSample> samples, const SplitRatios& ratios,
                    std::uint64_t seed);

// ---------------------------------------------------------------------------
// Grammar and corpus

struct GrammarConfig {
  int measures_per_excerpt = 2;
  double rest_prob = 0.08;
  double chord_prob = 0.08;
  double accidental_prob = 0.08;
  double dotted_prob = 0.1;
  /// Per measure and spine (grand staff only): open a second voice with *^.
  double split_prob = 0.0;
};

/// A generated piece: its shared header and a list of measures, each a list
/// of records ending with a barline.
struct Piece {
  std::vector<kern::Record> header;
  std::vector<std::vector<kern::Record>> measures;
};

Piece generate_piece(Style style, int measures, const GrammarConfig& grammar, Rng& rng);

/// Cuts measures [first, first + count) into a standalone valid document.
kern::KernDocument excerpt(const Piece& piece, int first, int count);

struct CorpusConfig {
  int n_pieces = 16;
  int excerpts_per_piece = 4;
  Style style = Style::kGrandStaff;
  std::uint64_t grammar_seed = 0;
  std::uint64_t split_seed = 0;
  int image_height = kDefaultImageHeight;
  GrammarConfig grammar;
  bool degrade = false;
  DegradationConfig degradation = DegradationConfig::photocopy();
  SplitRatios ratios;
};

/// Generates the corpus in memory. Sample RNG streams derive from
/// (grammar_seed, piece_id, excerpt index), so the output does not depend on
/// generation order.
std::vector<ImageSample> generate_corpus(const CorpusConfig& cfg);

struct ManifestEntry {
  std::string image_path;  ///< relative to the manifest directory
  std::string kern_path;
  std::string piece_id;
  Split split = Split::kTrain;
};

/// Writes images/<id>.png, kern/<id>.krn and manifest.tsv under `out_dir`.
std::vector<ManifestEntry> make_corpus(const CorpusConfig& cfg,
                                       const std::filesystem::path& out_dir);

/// `image_path<TAB>kern_path<TAB>piece_id<TAB>split` lines.
std::string format_manifest(std::span<const ManifestEntry> entries);
std::vector<ManifestEntry> parse_manifest(std::string_view text);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries);

/// Loads the samples of a manifest (optionally only one split), resolving
/// paths against the manifest's directory and normalizing image height.
std::vector<ImageSample> load_samples(const std::filesystem::path& manifest_path,
                                      std::optional<Split> only, int image_height);

}  // namespace smt::synth
