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

#include "smt/metrics.hpp"

#include <cstdio>

namespace smt::metrics {
namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

double rate(const kern::Tokens& hyp, const kern::Tokens& ref) {
  return static_cast<double>(edit_distance(hyp, ref)) / static_cast<double>(ref.size());
}

}  // namespace

SampleMetrics score_pair(std::string_view hyp, std::string_view ref) {
  // The reference must be well formed; parse_kern throws otherwise.
  const auto ref_doc = kern::parse_kern(ref);
  SampleMetrics m;
  const kern::Granularity grains[] = {kern::Granularity::kCharacter, kern::Granularity::kSymbol,
                                      kern::Granularity::kLine};
  double* out[] = {&m.cer, &m.ser, &m.ler};
  for (int g = 0; g < 3; ++g) {
    const auto ref_tokens = kern::tokenize(ref_doc, grains[g]);
    if (ref_tokens.empty()) throw Error("EmptyReference", "reference has no tokens");
    *out[g] = rate(kern::tokenize_lenient(hyp, grains[g]), ref_tokens);
  }
  m.structurally_valid = kern::validate_structure(hyp).valid;
  return m;
}

MetricReport aggregate(std::vector<SampleMetrics> samples) {
  MetricReport r;
  r.samples = std::move(samples);
  if (r.samples.empty()) return r;
  double valid = 0.0;
  for (const auto& s : r.samples) {
    r.cer += s.cer;
    r.ser += s.ser;
    r.ler += s.ler;
    valid += s.structurally_valid ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(r.samples.size());
  r.cer = 100.0 * r.cer / n;
  r.ser = 100.0 * r.ser / n;
  r.ler = 100.0 * r.ler / n;
  r.render_pct = 100.0 * valid / n;
  return r;
}

std::string results_table(std::span<const ResultRow> rows) {
  std::string out = "dataset\tmodel\tcer\tser\tler\trender_pct\n";
  for (const auto& row : rows) {
    out += row.dataset + '\t' + row.model + '\t' + fmt(row.report.cer) + '\t' +
           fmt(row.report.ser) + '\t' + fmt(row.report.ler) + '\t' + fmt(row.report.render_pct) +
           '\n';
  }
  return out;
}

std::string sample_table(const MetricReport& report) {
  std::string out = "sample_id\tcer\tser\tler\tvalid\n";
  for (const auto& s : report.samples) {
    out += s.sample_id + '\t' + fmt(100.0 * s.cer) + '\t' + fmt(100.0 * s.ser) + '\t' +
           fmt(100.0 * s.ler) + '\t' + (s.structurally_valid ? "1" : "0") + '\n';
  }
  return out;
}

std::string line_diff(std::string_view hyp, std::string_view ref) {
  const auto h = kern::tokenize_lenient(hyp, kern::Granularity::kLine);
  const auto r = kern::tokenize_lenient(ref, kern::Granularity::kLine);
  const std::size_t n = r.size(), m = h.size();
  std::vector<std::vector<std::size_t>> d(n + 1, std::vector<std::size_t>(m + 1));
  for (std::size_t i = 0; i <= n; ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= m; ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j)
      d[i][j] = std::min({d[i - 1][j - 1] + (r[i - 1] == h[j - 1] ? 0 : 1), d[i - 1][j] + 1,
                          d[i][j - 1] + 1});

  std::vector<std::string> lines;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && r[i - 1] == h[j - 1] && d[i][j] == d[i - 1][j - 1]) {
      lines.push_back("  " + r[i - 1]);
      --i, --j;
    } else if (i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + 1) {
      lines.push_back("+ " + h[j - 1]);
      lines.push_back("- " + r[i - 1]);
      --i, --j;
    } else if (i > 0 && d[i][j] == d[i - 1][j] + 1) {
      lines.push_back("- " + r[i - 1]);
      --i;
    } else {
      lines.push_back("+ " + h[j - 1]);
      --j;
    }
  }
  std::string out;
  for (auto it = lines.rbegin(); it != lines.rend(); ++it) out += *it + '\n';
  return out;
}

}  // namespace smt::metrics
