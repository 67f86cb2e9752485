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
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "smt/types.hpp"

namespace smt::kern {

// Humdrum **kern documents: records are lines, cells are tab-separated
// spine tokens. Only spine arithmetic (**kern, *^, *v, *-) is interpreted;
// every other token is opaque content.

using Record = std::vector<std::string>;

/// A `!!` global comment line, kept verbatim. `before_record` is the number
/// of records that precede it.
struct Comment {
  std::size_t before_record = 0;
  std::string text;
  bool operator==(const Comment&) const = default;
};

struct KernDocument {
  std::vector<Record> records;
  std::vector<Comment> comments;

  /// Number of spines opened by the exclusive interpretation record.
  std::size_t spine_count() const { return records.empty() ? 0 : records.front().size(); }
  bool operator==(const KernDocument&) const = default;
};

/// Structural violation. `line` is 1-based; end-of-input problems report
/// one past the last line.
struct Violation {
  std::string kind;
  std::size_t line = 0;
  std::string message;
};

struct Verdict {
  bool valid = true;
  std::vector<Violation> violations;
};

class KernError : public Error {
 public:
  explicit KernError(const Violation& v)
      : Error(v.kind, "line " + std::to_string(v.line) + ": " + v.message), line_(v.line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

inline constexpr std::string_view kMalformedRecord = "MalformedRecord";
inline constexpr std::string_view kUnterminatedSpine = "UnterminatedSpine";
inline constexpr std::string_view kMissingExclusiveInterpretation =
    "MissingExclusiveInterpretation";

/// Parses kern text. Throws KernError at the first structural violation.
KernDocument parse_kern(std::string_view text);

/// Full structural check; never throws. Collects every violation it can
/// find in one pass.
Verdict validate_structure(std::string_view text);
Verdict validate_structure(const KernDocument& doc);

/// Serializes a document. Records end with '\n'.
std::string to_text(const KernDocument& doc, bool with_comments = true);

/// For every record, the index of the opening spine each cell descends
/// from. Split sub-spines inherit their parent's origin; merges keep the
/// leftmost. Requires a valid document.
std::vector<std::vector<int>> cell_origins(const KernDocument& doc);

// ---------------------------------------------------------------------------
// Tokenization

enum class Granularity { kCharacter, kSymbol, kLine };

std::string to_string(Granularity g);
Granularity granularity_from_string(const std::string& name);

inline const std::string kPadToken = "<pad>";
inline const std::string kSotToken = "<sot>";
inline const std::string kEotToken = "<eot>";
inline const std::string kTabToken = "<t>";
inline const std::string kBreakToken = "<b>";

using Tokens = std::vector<std::string>;

/// Splits a UTF-8 string into code points (invalid bytes pass through alone).
std::vector<std::string> utf8_chars(std::string_view s);

/// Character: code points of each cell, <t> between cells, <b> after each
///   record. Symbol: whole cells, <b> after each record. Line: one token per
///   record (cells joined by tab). Comments never produce tokens.
Tokens tokenize(const KernDocument& doc, Granularity g);

/// Same token rules applied to arbitrary text without any validity
/// requirement. Equals tokenize(parse_kern(text), g) for valid input.
Tokens tokenize_lenient(std::string_view text, Granularity g);

/// Inverse of tokenize for character and symbol granularity. Throws
/// Error("IllegalControlToken") on <sot>/<eot>/<pad>. Structural validity
/// of the result is not checked.
std::string detokenize(std::span<const std::string> tokens, Granularity g);

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kSot = 1;
  static constexpr int kEot = 2;
  static constexpr int kTab = 3;
  static constexpr int kBreak = 4;
  static constexpr int kNumReserved = 5;

  Vocabulary();

  /// Reserved tokens followed by every symbol of the corpus at granularity
  /// `g`, sorted bytewise.
  static Vocabulary build(std::span<const KernDocument> corpus, Granularity g);
  static Vocabulary from_symbols(std::vector<std::string> symbols);

  /// `id<TAB>symbol` lines, reserved tokens first.
  std::string serialize() const;
  static Vocabulary parse(std::string_view text);
  static Vocabulary load(const std::string& path);
  void save(const std::string& path) const;

  /// FNV-1a of serialize(), as 16 hex digits.
  std::string hash() const;

  std::optional<int> find(const std::string& symbol) const;
  /// Throws Error("UnknownSymbol").
  int id(const std::string& symbol) const;
  const std::string& symbol(int id) const { return symbols_.at(static_cast<std::size_t>(id)); }
  int size() const { return static_cast<int>(symbols_.size()); }
  const std::vector<std::string>& symbols() const { return symbols_; }

  static bool is_control(int id) { return id == kPad || id == kSot || id == kEot; }

  bool operator==(const Vocabulary& other) const { return symbols_ == other.symbols_; }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, int> index_;
};

struct TokenSequence {
  std::vector<int> ids;
  Granularity granularity = Granularity::kCharacter;
  bool operator==(const TokenSequence&) const = default;
};

/// Metric-facing id sequence (no <sot>/<eot>). Throws UnknownSymbol.
TokenSequence tokenize(const KernDocument& doc, Granularity g, const Vocabulary& vocab);

/// Model-facing sequence: <sot> tokens... <eot>.
TokenSequence encode_for_model(const KernDocument& doc, const Vocabulary& vocab,
                               Granularity g = Granularity::kCharacter);

std::string detokenize(const TokenSequence& seq, const Vocabulary& vocab);

}  // namespace smt::kern
