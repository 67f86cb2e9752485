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

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "smt/kern.hpp"

namespace smt::metrics {

/// Levenshtein distance with unit insert/delete/substitute costs.
template <typename T>
std::size_t edit_distance(std::span<const T> a, std::span<const T> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

template <typename T>
std::size_t edit_distance(const std::vector<T>& a, const std::vector<T>& b) {
  return edit_distance(std::span<const T>(a), std::span<const T>(b));
}

/// Rates are distance / reference length, unclipped (may exceed 1).
struct SampleMetrics {
  std::string sample_id;
  double cer = 0.0;
  double ser = 0.0;
  double ler = 0.0;
  bool structurally_valid = false;
};

/// Scores a hypothesis (arbitrary text) against a valid reference. The
/// hypothesis is tokenized leniently. Throws KernError when the reference
/// does not parse and Error("EmptyReference") when it has no tokens.
SampleMetrics score_pair(std::string_view hyp, std::string_view ref);

struct MetricReport {
  std::vector<SampleMetrics> samples;
  /// Means as percentages.
  double cer = 0.0;
  double ser = 0.0;
  double ler = 0.0;
  double render_pct = 0.0;
  std::size_t count() const { return samples.size(); }
};

/// Deterministic fold in input order.
MetricReport aggregate(std::vector<SampleMetrics> samples);

/// `dataset<TAB>model<TAB>cer<TAB>ser<TAB>ler<TAB>render_pct` with header.
struct ResultRow {
  std::string dataset;
  std::string model;
  MetricReport report;
};
std::string results_table(std::span<const ResultRow> rows);

/// `sample_id<TAB>cer<TAB>ser<TAB>ler<TAB>valid` with header.
std::string sample_table(const MetricReport& report);

/// Line-level alignment of hypothesis against reference, as a plain-text diff:
/// "  " kept, "- " reference-only, "+ " hypothesis-only.
std::string line_diff(std::string_view hyp, std::string_view ref);

}  // namespace smt::metrics
