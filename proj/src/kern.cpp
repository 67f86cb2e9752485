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

#include "smt/kern.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "smt/rng.hpp"

namespace smt::kern {
namespace {

std::vector<std::string_view> split_view(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

/// Lines of a text; a trailing newline does not open an extra empty line.
std::vector<std::string_view> split_lines(std::string_view text) {
  if (text.empty()) return {};
  auto lines = split_view(text, '\n');
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

bool is_global_comment(std::string_view line) { return line.starts_with("!!"); }

enum class CellClass { kInterpretation, kLocalComment, kData };

CellClass classify(std::string_view cell) {
  if (cell.starts_with('*')) return CellClass::kInterpretation;
  if (cell.starts_with('!')) return CellClass::kLocalComment;
  return CellClass::kData;
}

struct Analysis {
  KernDocument doc;
  std::vector<Violation> violations;
  std::vector<std::vector<int>> origins;
};

Analysis analyze(std::string_view text) {
  Analysis a;
  const auto lines = split_lines(text);
  std::vector<int> active;  // origin spine of each active cell
  bool opened = false;
  bool terminated = false;

  auto flag = [&](std::string_view kind, std::size_t line, std::string msg) {
    a.violations.push_back({std::string(kind), line, std::move(msg)});
  };

  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    const auto line = lines[i];
    if (is_global_comment(line)) {
      a.doc.comments.push_back({a.doc.records.size(), std::string(line)});
      continue;
    }
    Record record;
    for (auto cell : split_view(line, '\t')) record.emplace_back(cell);
    const auto record_origins = active;
    a.doc.records.push_back(record);

    if (line.empty()) {
      flag(kMalformedRecord, line_no, "empty line");
      a.origins.push_back(record_origins);
      continue;
    }
    if (!opened) {
      opened = true;
      const bool all_exclusive = std::all_of(record.begin(), record.end(), [](const auto& c) {
        return c.size() > 2 && c.starts_with("**");
      });
      if (!all_exclusive) {
        flag(kMissingExclusiveInterpretation, line_no,
             "first record must contain only exclusive interpretations");
      }
      active.resize(record.size());
      for (std::size_t s = 0; s < active.size(); ++s) active[s] = static_cast<int>(s);
      a.origins.push_back(active);
      continue;
    }
    a.origins.push_back(record_origins);
    if (terminated) {
      flag(kMalformedRecord, line_no, "record after all spines were terminated");
      continue;
    }
    if (record.size() != active.size()) {
      flag(kMalformedRecord, line_no,
           "expected " + std::to_string(active.size()) + " cells, found " +
               std::to_string(record.size()));
      continue;
    }
    if (std::any_of(record.begin(), record.end(), [](const auto& c) { return c.empty(); })) {
      flag(kMalformedRecord, line_no, "empty cell");
      continue;
    }
    const auto kind = classify(record.front());
    if (std::any_of(record.begin(), record.end(),
                    [&](const auto& c) { return classify(c) != kind; })) {
      flag(kMalformedRecord, line_no, "record mixes interpretation, comment and data cells");
      continue;
    }
    if (kind != CellClass::kInterpretation) continue;

    std::vector<int> next;
    bool ok = true;
    for (std::size_t c = 0; c < record.size();) {
      const auto& cell = record[c];
      if (cell == "*^") {
        next.push_back(active[c]);
        next.push_back(active[c]);
        ++c;
      } else if (cell == "*v") {
        std::size_t end = c;
        while (end < record.size() && record[end] == "*v") ++end;
        if (end - c < 2) {
          flag(kMalformedRecord, line_no, "spine merge *v needs at least two adjacent spines");
          ok = false;
          break;
        }
        next.push_back(active[c]);
        c = end;
      } else if (cell == "*-") {
        ++c;
      } else {
        next.push_back(active[c]);
        ++c;
      }
    }
    if (!ok) continue;
    active = std::move(next);
    if (active.empty()) terminated = true;
  }

  if (!opened) {
    flag(kMissingExclusiveInterpretation, lines.size() + 1, "no exclusive interpretation record");
  } else if (!terminated) {
    flag(kUnterminatedSpine, lines.size() + 1,
         std::to_string(active.size()) + " spine(s) not terminated by *-");
  }
  return a;
}

void append_cell_chars(Tokens& out, const std::string& cell) {
  for (auto& ch : utf8_chars(cell)) out.push_back(std::move(ch));
}

void tokenize_record(Tokens& out, std::span<const std::string> cells, Granularity g) {
  switch (g) {
    case Granularity::kCharacter:
      for (std::size_t c = 0; c < cells.size(); ++c) {
        if (c > 0) out.push_back(kTabToken);
        append_cell_chars(out, cells[c]);
      }
      out.push_back(kBreakToken);
      break;
    case Granularity::kSymbol:
      for (const auto& cell : cells) out.push_back(cell);
      out.push_back(kBreakToken);
      break;
    case Granularity::kLine: {
      std::string line;
      for (std::size_t c = 0; c < cells.size(); ++c) {
        if (c > 0) line += '\t';
        line += cells[c];
      }
      out.push_back(std::move(line));
      break;
    }
  }
}

bool is_illegal_control(const std::string& tok) {
  return tok == kSotToken || tok == kEotToken || tok == kPadToken;
}

}  // namespace

KernDocument parse_kern(std::string_view text) {
  auto a = analyze(text);
  if (!a.violations.empty()) throw KernError(a.violations.front());
  return std::move(a.doc);
}

Verdict validate_structure(std::string_view text) {
  auto a = analyze(text);
  Verdict v;
  v.valid = a.violations.empty();
  v.violations = std::move(a.violations);
  return v;
}

Verdict validate_structure(const KernDocument& doc) { return validate_structure(to_text(doc)); }

std::string to_text(const KernDocument& doc, bool with_comments) {
  std::string out;
  std::size_t next_comment = 0;
  auto emit_comments = [&](std::size_t before) {
    while (with_comments && next_comment < doc.comments.size() &&
           doc.comments[next_comment].before_record <= before) {
      out += doc.comments[next_comment++].text;
      out += '\n';
    }
  };
  for (std::size_t r = 0; r < doc.records.size(); ++r) {
    emit_comments(r);
    const auto& rec = doc.records[r];
    for (std::size_t c = 0; c < rec.size(); ++c) {
      if (c > 0) out += '\t';
      out += rec[c];
    }
    out += '\n';
  }
  emit_comments(doc.records.size());
  while (with_comments && next_comment < doc.comments.size()) {
    out += doc.comments[next_comment++].text;
    out += '\n';
  }
  return out;
}

std::vector<std::vector<int>> cell_origins(const KernDocument& doc) {
  auto a = analyze(to_text(doc, false));
  if (!a.violations.empty()) throw KernError(a.violations.front());
  return std::move(a.origins);
}

std::string to_string(Granularity g) {
  switch (g) {
    case Granularity::kCharacter: return "character";
    case Granularity::kSymbol: return "symbol";
    case Granularity::kLine: return "line";
  }
  return "?";
}

Granularity granularity_from_string(const std::string& name) {
  if (name == "character") return Granularity::kCharacter;
  if (name == "symbol") return Granularity::kSymbol;
  if (name == "line") return Granularity::kLine;
  throw Error("InvalidArgument", "unknown granularity '" + name + "'");
}

std::vector<std::string> utf8_chars(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto lead = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    if (lead >= 0xF0 && lead < 0xF8) len = 4;
    else if (lead >= 0xE0) len = 3;
    else if (lead >= 0xC0) len = 2;
    if (len > 1) {
      // Only accept well-formed continuation bytes.
      bool ok = i + len <= s.size();
      for (std::size_t k = 1; ok && k < len; ++k)
        ok = (static_cast<unsigned char>(s[i + k]) & 0xC0) == 0x80;
      if (!ok) len = 1;
    }
    out.emplace_back(s.substr(i, len));
    i += len;
  }
  return out;
}

Tokens tokenize(const KernDocument& doc, Granularity g) {
  Tokens out;
  for (const auto& rec : doc.records) tokenize_record(out, rec, g);
  return out;
}

Tokens tokenize_lenient(std::string_view text, Granularity g) {
  Tokens out;
  for (auto line : split_lines(text)) {
    if (is_global_comment(line)) continue;
    std::vector<std::string> cells;
    for (auto cell : split_view(line, '\t')) cells.emplace_back(cell);
    tokenize_record(out, cells, g);
  }
  return out;
}

std::string detokenize(std::span<const std::string> tokens, Granularity g) {
  std::string out;
  if (g == Granularity::kLine)
    throw Error("InvalidArgument", "detokenize supports character and symbol granularity");
  if (g == Granularity::kCharacter) {
    for (const auto& tok : tokens) {
      if (is_illegal_control(tok)) throw Error("IllegalControlToken", tok);
      if (tok == kTabToken) out += '\t';
      else if (tok == kBreakToken) out += '\n';
      else out += tok;
    }
    return out;
  }
  bool first_in_record = true;
  for (const auto& tok : tokens) {
    if (is_illegal_control(tok)) throw Error("IllegalControlToken", tok);
    if (tok == kTabToken) continue;
    if (tok == kBreakToken) {
      out += '\n';
      first_in_record = true;
      continue;
    }
    if (!first_in_record) out += '\t';
    out += tok;
    first_in_record = false;
  }
  return out;
}

// ---------------------------------------------------------------------------

Vocabulary::Vocabulary()
    : symbols_{kPadToken, kSotToken, kEotToken, kTabToken, kBreakToken} {
  for (std::size_t i = 0; i < symbols_.size(); ++i) index_.emplace(symbols_[i], static_cast<int>(i));
}

Vocabulary Vocabulary::from_symbols(std::vector<std::string> symbols) {
  Vocabulary v;
  std::set<std::string> sorted(symbols.begin(), symbols.end());
  for (const auto& s : v.symbols_) sorted.erase(s);
  v.symbols_.insert(v.symbols_.end(), sorted.begin(), sorted.end());
  v.index_.clear();
  for (std::size_t i = 0; i < v.symbols_.size(); ++i)
    v.index_.emplace(v.symbols_[i], static_cast<int>(i));
  return v;
}

Vocabulary Vocabulary::build(std::span<const KernDocument> corpus, Granularity g) {
  std::vector<std::string> symbols;
  for (const auto& doc : corpus) {
    auto toks = tokenize(doc, g);
    symbols.insert(symbols.end(), std::make_move_iterator(toks.begin()),
                   std::make_move_iterator(toks.end()));
  }
  return from_symbols(std::move(symbols));
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    out += std::to_string(i);
    out += '\t';
    out += symbols_[i];
    out += '\n';
  }
  return out;
}

Vocabulary Vocabulary::parse(std::string_view text) {
  std::vector<std::string> symbols;
  for (auto line : split_lines(text)) {
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos) throw Error("VocabularyFormat", "missing tab");
    const auto id = std::stoul(std::string(line.substr(0, tab)));
    if (id != symbols.size()) throw Error("VocabularyFormat", "ids must be dense and ordered");
    symbols.emplace_back(line.substr(tab + 1));
  }
  const std::vector<std::string> reserved = {kPadToken, kSotToken, kEotToken, kTabToken,
                                             kBreakToken};
  if (symbols.size() < reserved.size() ||
      !std::equal(reserved.begin(), reserved.end(), symbols.begin()))
    throw Error("VocabularyFormat", "reserved tokens must occupy ids 0-4");
  Vocabulary v = from_symbols({symbols.begin() + kNumReserved, symbols.end()});
  if (v.symbols_ != symbols) throw Error("VocabularyFormat", "symbols must be sorted and unique");
  return v;
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("IO", "cannot read vocabulary " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("IO", "cannot write vocabulary " + path);
  out << serialize();
}

std::string Vocabulary::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(serialize())));
  return buf;
}

std::optional<int> Vocabulary::find(const std::string& symbol) const {
  const auto it = index_.find(symbol);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Vocabulary::id(const std::string& symbol) const {
  if (auto i = find(symbol)) return *i;
  throw Error("UnknownSymbol", "'" + symbol + "' is not in the vocabulary");
}

TokenSequence tokenize(const KernDocument& doc, Granularity g, const Vocabulary& vocab) {
  TokenSequence seq;
  seq.granularity = g;
  for (const auto& tok : tokenize(doc, g)) seq.ids.push_back(vocab.id(tok));
  return seq;
}

TokenSequence encode_for_model(const KernDocument& doc, const Vocabulary& vocab, Granularity g) {
  auto seq = tokenize(doc, g, vocab);
  seq.ids.insert(seq.ids.begin(), Vocabulary::kSot);
  seq.ids.push_back(Vocabulary::kEot);
  return seq;
}

std::string detokenize(const TokenSequence& seq, const Vocabulary& vocab) {
  Tokens toks;
  toks.reserve(seq.ids.size());
  for (int id : seq.ids) toks.push_back(vocab.symbol(id));
  return detokenize(toks, seq.granularity);
}

}  // namespace smt::kern
