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
#include <string>

#include "doctest.h"
#include "oracles.hpp"
#include "smt/kern.hpp"

using namespace smt::kern;

namespace {

std::string first_kind(std::string_view text) {
  const auto v = validate_structure(text);
  return v.valid ? "" : v.violations.front().kind;
}

std::size_t first_line(std::string_view text) {
  const auto v = validate_structure(text);
  return v.valid ? 0 : v.violations.front().line;
}

}  // namespace

TEST_CASE("minimal document parses with one spine and no content") {
  const auto doc = parse_kern("**kern\n*-\n");
  CHECK(doc.spine_count() == 1);
  CHECK(doc.records.size() == 2);
  CHECK(validate_structure(doc).valid);
}

TEST_CASE("two-spine piano excerpt keeps the lower staff first") {
  const std::string text =
      "**kern\t**kern\n*clefF4\t*clefG2\n*M4/4\t*M4/4\n4C 4G\t4e 4g\n4D\t8f\n.\t8a\n=1\t=1\n*-\t*-\n";
  const auto doc = parse_kern(text);
  CHECK(doc.spine_count() == 2);
  CHECK(doc.records[1][0] == "*clefF4");
  CHECK(doc.records[1][1] == "*clefG2");
  CHECK(to_text(doc) == text);
}

TEST_CASE("structural errors report the offending line") {
  CHECK(first_kind("**kern\n4c\t4d\n*-\n") == kMalformedRecord);
  CHECK(first_line("**kern\n4c\t4d\n*-\n") == 2);
  CHECK(first_kind("**kern\n4c\n") == kUnterminatedSpine);
  CHECK(first_kind("") == kMissingExclusiveInterpretation);
  CHECK(first_kind("4c\n*-\n") == kMissingExclusiveInterpretation);
  CHECK(first_line("4c\n*-\n") == 1);
  CHECK(first_kind("**kern\t**kern\n*^\t*\n4c\t4d\n*-\t*-\t*-\n") == kMalformedRecord);
  CHECK(first_line("**kern\t**kern\n*^\t*\n4c\t4d\n*-\t*-\t*-\n") == 3);
  try {
    parse_kern("**kern\n4c\t4d\n*-\n");
    FAIL("expected a parse error");
  } catch (const KernError& e) {
    CHECK(e.kind() == kMalformedRecord);
    CHECK(e.line() == 2);
  }
}

TEST_CASE("content after all spines terminate is malformed") {
  CHECK_FALSE(validate_structure("**kern\n*-\n4c\n").valid);
}

TEST_CASE("spine split and merge arithmetic") {
  const auto doc = parse_kern("**kern\n*^\n4c\t4e\n*v\t*v\n4d\n*-\n");
  CHECK(doc.records[2].size() == 2);
  CHECK(doc.records[4].size() == 1);
  const auto origins = cell_origins(parse_kern("**kern\t**kern\n*\t*^\n4d\t4e\t4g\n*-\t*-\t*-\n"));
  CHECK(origins[2] == std::vector<int>{0, 1, 1});
}

TEST_CASE("comments are kept by the parser") {
  const auto doc = parse_kern("!!!COM: x\n**kern\n!! mid\n4c\n*-\n");
  REQUIRE(doc.comments.size() == 2);
  CHECK(doc.comments[0].before_record == 0);
  CHECK(doc.comments[1].before_record == 1);
  CHECK(doc.comments[1].text == "!! mid");
  CHECK(to_text(doc) == "!!!COM: x\n**kern\n!! mid\n4c\n*-\n");
}

TEST_CASE("tokenization at each granularity") {
  const auto two = parse_kern("**kern\t**kern\n4c\t4d\n*-\t*-\n");
  const auto sym = tokenize(two, Granularity::kSymbol);
  CHECK(Tokens(sym.begin() + 3, sym.begin() + 6) == Tokens{"4c", "4d", kBreakToken});
  const auto one = parse_kern("**kern\n4c\n*-\n");
  const auto chr = tokenize(one, Granularity::kCharacter);
  CHECK(Tokens(chr.begin() + 7, chr.begin() + 10) == Tokens{"4", "c", kBreakToken});
  CHECK(tokenize(KernDocument{}, Granularity::kCharacter).empty());
  CHECK(tokenize(KernDocument{}, Granularity::kSymbol).empty());
  CHECK(tokenize(KernDocument{}, Granularity::kLine).empty());
  const auto lines = tokenize(two, Granularity::kLine);
  CHECK(lines == Tokens{"**kern\t**kern", "4c\t4d", "*-\t*-"});
}

TEST_CASE("character tokens split UTF-8 code points, not bytes") {
  CHECK(utf8_chars("4c\xC3\xA9") == std::vector<std::string>{"4", "c", "\xC3\xA9"});
}

TEST_CASE("detokenize edge cases") {
  CHECK(detokenize(Tokens{}, Granularity::kCharacter).empty());
  CHECK_THROWS_AS(detokenize(Tokens{kSotToken, "4"}, Granularity::kCharacter), smt::Error);
  try {
    detokenize(Tokens{"4", kEotToken}, Granularity::kSymbol);
  } catch (const smt::Error& e) {
    CHECK(e.kind() == "IllegalControlToken");
  }
  // A broken sequence is emitted verbatim; validity is a separate question.
  const std::string broken = detokenize(Tokens{"*", "*", "k", "e", "r", "n", kBreakToken, "4", "c", kTabToken, "4",
                                               "d", kBreakToken},
                                        Granularity::kCharacter);
  CHECK(broken == "**kern\n4c\t4d\n");
  CHECK_FALSE(validate_structure(broken).valid);
}

TEST_CASE("round trip and granularity ordering over the fixture corpus") {
  const auto corpus = smt::testing::fixture_corpus();
  REQUIRE(corpus.size() >= 50);
  for (const auto& text : corpus) {
    INFO(text);
    REQUIRE(validate_structure(text).valid);
    const auto doc = parse_kern(text);
    KernDocument records_only = doc;
    records_only.comments.clear();
    for (auto g : {Granularity::kCharacter, Granularity::kSymbol}) {
      const auto tokens = tokenize(doc, g);
      const auto back = parse_kern(detokenize(tokens, g));
      CHECK(back == records_only);
      CHECK(tokenize(back, g) == tokens);
      CHECK(tokenize_lenient(text, g) == tokens);
    }
    CHECK(detokenize(tokenize(doc, Granularity::kCharacter), Granularity::kCharacter) ==
          to_text(doc, /*with_comments=*/false));
    const auto nl = tokenize(doc, Granularity::kLine).size();
    const auto ns = tokenize(doc, Granularity::kSymbol).size();
    const auto nc = tokenize(doc, Granularity::kCharacter).size();
    CHECK(nl <= ns);
    CHECK(ns <= nc);
  }
}

TEST_CASE("every single-delimiter deletion is caught") {
  for (const auto& text : smt::testing::fixture_corpus()) {
    const auto original = parse_kern(text);
    for (const auto& m : smt::testing::delimiter_mutations(text)) {
      const auto verdict = validate_structure(m.text);
      if (!verdict.valid) continue;
      INFO(m.what << " in\n" << text);
      CHECK(parse_kern(m.text).records != original.records);
    }
  }
}

TEST_CASE("deleting the final terminator or a mid-document tab") {
  const std::string text = "**kern\t**kern\n4c\t4e\n4d\t4f\n*-\t*-\n";
  CHECK(first_kind("**kern\t**kern\n4c\t4e\n4d\t4f\n") == kUnterminatedSpine);
  std::string no_tab = text;
  no_tab.erase(no_tab.find("4d\t") + 2, 1);
  CHECK(first_kind(no_tab) == kMalformedRecord);
}

TEST_CASE("vocabulary construction is deterministic and bijective") {
  std::vector<KernDocument> docs;
  for (const auto& t : smt::testing::fixture_corpus()) docs.push_back(parse_kern(t));
  const auto a = Vocabulary::build(docs, Granularity::kCharacter);
  const auto b = Vocabulary::build(docs, Granularity::kCharacter);
  CHECK(a == b);
  CHECK(a.serialize() == b.serialize());
  CHECK(a.hash() == b.hash());
  CHECK(a.symbol(Vocabulary::kPad) == kPadToken);
  CHECK(a.symbol(Vocabulary::kSot) == kSotToken);
  CHECK(a.symbol(Vocabulary::kEot) == kEotToken);
  CHECK(a.symbol(Vocabulary::kTab) == kTabToken);
  CHECK(a.symbol(Vocabulary::kBreak) == kBreakToken);
  for (int i = 0; i < a.size(); ++i) CHECK(a.id(a.symbol(i)) == i);
  const auto& s = a.symbols();
  CHECK(std::is_sorted(s.begin() + Vocabulary::kNumReserved, s.end()));
  CHECK(Vocabulary::parse(a.serialize()) == a);
}

TEST_CASE("frozen symbol vocabulary rejects unseen symbols") {
  const std::vector<KernDocument> train{parse_kern("**kern\n4c\n*-\n")};
  const auto vocab = Vocabulary::build(train, Granularity::kSymbol);
  try {
    tokenize(parse_kern("**kern\n4d\n*-\n"), Granularity::kSymbol, vocab);
    FAIL("expected UnknownSymbol");
  } catch (const smt::Error& e) {
    CHECK(e.kind() == "UnknownSymbol");
  }
}

TEST_CASE("model-facing sequences are wrapped, metric-facing ones are not") {
  const std::vector<KernDocument> docs{parse_kern("**kern\n4c\n*-\n")};
  const auto vocab = Vocabulary::build(docs, Granularity::kCharacter);
  const auto model_seq = encode_for_model(docs[0], vocab);
  CHECK(model_seq.ids.front() == Vocabulary::kSot);
  CHECK(model_seq.ids.back() == Vocabulary::kEot);
  const auto metric_seq = tokenize(docs[0], Granularity::kCharacter, vocab);
  CHECK(std::count(metric_seq.ids.begin(), metric_seq.ids.end(), Vocabulary::kSot) == 0);
  CHECK(std::count(metric_seq.ids.begin(), metric_seq.ids.end(), Vocabulary::kEot) == 0);
  CHECK(parse_kern(detokenize(metric_seq, vocab)) == docs[0]);
}
