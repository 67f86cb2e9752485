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

#include "oracles.hpp"

#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "smt/rng.hpp"
#include "smt/synth.hpp"
#include "smt/trainer.hpp"

namespace smt::testing {

std::size_t edit_distance_search(const std::vector<int>& a, const std::vector<int>& b) {
  std::size_t best = std::max(a.size(), b.size());
  // Depth-first over scripts (substitute/match, delete, insert). When the
  // heads are equal, matching them is never worse, so only that branch is
  // explored. |remaining length difference| is an admissible lower bound.
  std::function<void(std::size_t, std::size_t, std::size_t)> dfs = [&](std::size_t i, std::size_t j,
                                                                        std::size_t cost) {
    const std::size_t ra = a.size() - i, rb = b.size() - j;
    const std::size_t bound = ra > rb ? ra - rb : rb - ra;
    if (cost + bound >= best) {
      if (ra == 0 && rb == 0 && cost < best) best = cost;
      return;
    }
    if (ra == 0 || rb == 0) {
      best = std::min(best, cost + ra + rb);
      return;
    }
    if (a[i] == b[j]) {
      dfs(i + 1, j + 1, cost);
      return;
    }
    dfs(i + 1, j + 1, cost + 1);
    dfs(i + 1, j, cost + 1);
    dfs(i, j + 1, cost + 1);
  };
  dfs(0, 0, 0);
  return best;
}

double pe_reference(int row, int col, int channel, int channels) {
  const int half = channels / 2;
  const bool vertical = channel >= half;
  const int local = vertical ? channel - half : channel;
  const int i = local / 2;
  const double pos = vertical ? row : col;
  const double freq = std::exp(-std::log(10000.0) * (2.0 * i) / channels);
  return local % 2 == 0 ? std::sin(pos * freq) : std::cos(pos * freq);
}

std::vector<std::string> fixture_corpus() {
  std::vector<std::string> docs = {
      "**kern\n*-\n",
      "**kern\n4c\n4d\n=\n*-\n",
      "!!!COM: anonymous\n**kern\t**kern\n*clefF4\t*clefG2\n4C\t4e\n!! inline note\n=\t=\n*-\t*-\n",
      "**kern\t**kern\n4c\t4e\n*\t*^\n4d\t4f\t4a\n*\t*v\t*v\n=\t=\n*-\t*-\n",
      "**kern\t**kern\t**kern\n!\t!\t!\n4c\t4e\t4g\n.\t8f\t.\n=\t=\t=\n*-\t*-\t*-\n",
      "**kern\t**kern\n4c\t4d\n*\t*-\n4e\n*-\n",
      "**kern\n4c\xC3\xA9\n*-\n",
      "**kern\t**kern\n*^\t*\n4c\t4e\t4g\n*-\t*-\t*-\n",
      "**kern\t**kern\n*^\t*^\n4c\t4e\t4g\t4b\n*v\t*v\t*\t*\n*\t*v\t*v\n*-\t*-\n",
      "**kern\t**dynam\n4c\tp\n*-\t*-\n",
      "**kern\n*clefG2\n*k[f#]\n*M3/4\n4.c\n8d\n4e\n=1\n*-\n",
      "**kern\t**kern\n4c 4e\t2g\n4d 4f\t.\n==\t==\n*-\t*-\n",
  };
  auto add_generated = [&](synth::Style style, int pieces, double split_prob, std::uint64_t seed) {
    synth::GrammarConfig g;
    g.split_prob = split_prob;
    for (int p = 0; p < pieces; ++p) {
      Rng rng(derive_seed(seed, "fixture", static_cast<std::uint64_t>(p)));
      const auto piece = synth::generate_piece(style, 2 + p % 3, g, rng);
      docs.push_back(kern::to_text(synth::excerpt(piece, 0, static_cast<int>(piece.measures.size()))));
    }
  };
  add_generated(synth::Style::kGrandStaff, 16, 0.0, 1);
  add_generated(synth::Style::kGrandStaff, 16, 0.4, 2);
  add_generated(synth::Style::kQuartet, 16, 0.0, 3);
  return docs;
}

std::vector<Mutation> delimiter_mutations(const std::string& text) {
  std::vector<Mutation> out;
  auto erase_at = [&](std::size_t pos, const std::string& what) {
    std::string t = text;
    t.erase(pos, 1);
    out.push_back({std::move(t), what + " at byte " + std::to_string(pos)});
  };
  std::size_t line_start = 0;
  while (line_start < text.size()) {
    std::size_t line_end = text.find('\n', line_start);
    if (line_end == std::string::npos) line_end = text.size();
    const std::string line = text.substr(line_start, line_end - line_start);
    const bool global_comment = line.rfind("!!", 0) == 0;
    if (!global_comment) {
      std::size_t cell_start = 0;
      while (true) {
        std::size_t cell_end = line.find('\t', cell_start);
        const bool last = cell_end == std::string::npos;
        if (last) cell_end = line.size();
        const std::string cell = line.substr(cell_start, cell_end - cell_start);
        if (cell == "*-" || cell.rfind("**", 0) == 0)
          for (std::size_t k = 0; k < cell.size(); ++k)
            erase_at(line_start + cell_start + k, "delete char of '" + cell + "'");
        if (last) break;
        erase_at(line_start + cell_end, "delete tab");
        cell_start = cell_end + 1;
      }
    }
    line_start = line_end + 1;
  }
  return out;
}

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradientReport check_gradients(model::SmtModel<double>& model, const GrayImage& image,
                               const std::vector<int>& tokens, int samples, std::uint64_t seed,
                               double tolerance, double step) {
  const std::vector<train::Example> batch{{image, tokens, "gradcheck", "p"}};
  std::vector<Mat<double>> grads;
  train::batch_loss<double>(model, batch, 0.0, nullptr, &grads);

  auto& ps = model.params();
  Rng rng(seed);
  std::vector<std::pair<int, Eigen::Index>> coords;
  for (int i = 0; i < ps.size(); ++i)
    coords.emplace_back(i, static_cast<Eigen::Index>(rng.uniform_int(0, static_cast<int>(ps.value(i).size()) - 1)));
  std::vector<double> cumulative;
  double total = 0;
  for (int i = 0; i < ps.size(); ++i) cumulative.push_back(total += static_cast<double>(ps.value(i).size()));
  while (static_cast<int>(coords.size()) < samples) {
    const double u = rng.uniform() * total;
    const int i = static_cast<int>(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
    coords.emplace_back(i, static_cast<Eigen::Index>(rng.uniform_int(0, static_cast<int>(ps.value(i).size()) - 1)));
  }

  GradientReport report;
  for (const auto& [i, k] : coords) {
    double& w = ps.value(i).data()[k];
    const double saved = w;
    w = saved + step;
    const double up = train::batch_loss<double>(model, batch, 0.0, nullptr, nullptr);
    w = saved - step;
    const double down = train::batch_loss<double>(model, batch, 0.0, nullptr, nullptr);
    w = saved;
    const double numeric = (up - down) / (2 * step);
    const double analytic = grads[static_cast<std::size_t>(i)].data()[k];
    const double err = relative_error(analytic, numeric);
    ++report.checked;
    if (err >= tolerance) ++report.failed;
    if (err > report.worst) {
      report.worst = err;
      report.worst_name = ps.name(i) + "[" + std::to_string(k) + "]";
    }
  }
  return report;
}

model::ModelConfig gradcheck_config(model::Backbone backbone) {
  model::ModelConfig c;
  c.preset = "gradcheck";
  c.backbone = backbone;
  c.vocab_size = 5;
  c.image_height = 16;
  c.cnn.channels = {4, 8};
  c.cnn.stride_h = {4, 4};
  c.cnn.stride_w = {4, 2};
  c.swin.dims = {4, 8, 8};
  c.swin.depths = {2, 1, 1};
  c.swin.heads = {1, 2, 1};
  c.swin.window = 2;
  c.swin.mlp_ratio = 2;
  c.convnext.dims = {4, 4, 8};
  c.convnext.depths = {1, 1, 1};
  c.convnext.kernel = 3;
  c.convnext.mlp_ratio = 2;
  c.convnext.layer_scale_init = 0.5;
  c.decoder.layers = 1;
  c.decoder.heads = 1;
  c.decoder.width = 8;
  c.decoder.ff_width = 8;
  c.decoder.dropout = 0.0;
  c.decoder.max_decode_length = 64;
  return c;
}

GrayImage random_image(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  GrayImage img(h, w);
  for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = static_cast<float>(rng.uniform());
  return img;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
}

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("smt_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

int run(const std::string& command) {
  const int status = std::system(command.c_str());
  if (status == -1) return -1;
  return WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
}

std::string cli_path() { return SMT_CLI_PATH; }

}  // namespace smt::testing
