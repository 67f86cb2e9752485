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

#include "smt/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "json.hpp"

#include "smt/kern.hpp"

namespace smt::model {

using nlohmann::json;

std::string to_string(Backbone b) {
  switch (b) {
    case Backbone::kCnn: return "cnn";
    case Backbone::kSwin: return "swin";
    case Backbone::kConvNext: return "convnext";
  }
  return "cnn";
}

Backbone backbone_from_string(const std::string& name) {
  if (name == "cnn") return Backbone::kCnn;
  if (name == "swin") return Backbone::kSwin;
  if (name == "convnext") return Backbone::kConvNext;
  throw Error("InvalidConfig", "unknown backbone '" + name + "'");
}

// ---------------------------------------------------------------------------
// ModelConfig

int ModelConfig::channels() const {
  switch (backbone) {
    case Backbone::kCnn: return cnn.channels.back();
    case Backbone::kSwin: return swin.dims.back();
    case Backbone::kConvNext: return convnext.dims.back();
  }
  return 0;
}

std::array<int, 2> ModelConfig::downscale() const {
  switch (backbone) {
    case Backbone::kCnn: {
      int rh = 1, rw = 1;
      for (int s : cnn.stride_h) rh *= s;
      for (int s : cnn.stride_w) rw *= s;
      return {rh, rw};
    }
    case Backbone::kSwin: {
      const int r = swin.patch << (swin.dims.size() - 1);
      return {r, r};
    }
    case Backbone::kConvNext: {
      const int r = convnext.patch << (convnext.dims.size() - 1);
      return {r, r};
    }
  }
  return {1, 1};
}

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw Error("InvalidConfig", what);
}

bool all_positive(const std::vector<int>& v) {
  return !v.empty() && std::all_of(v.begin(), v.end(), [](int x) { return x > 0; });
}

}  // namespace

void ModelConfig::validate() const {
  require(vocab_size >= kern::Vocabulary::kNumReserved, "vocabulary too small");
  require(image_height > 0, "image_height must be positive");
  const auto& d = decoder;
  require(d.layers > 0 && d.heads > 0 && d.width > 0 && d.ff_width > 0, "decoder sizes must be positive");
  require(d.width % d.heads == 0, "decoder width must be divisible by heads");
  require(d.dropout >= 0.0 && d.dropout < 1.0, "dropout must be in [0, 1)");
  require(d.max_decode_length > 0, "max_decode_length must be positive");
  switch (backbone) {
    case Backbone::kCnn:
      require(all_positive(cnn.channels), "cnn.channels must be positive");
      require(cnn.stride_h.size() == cnn.channels.size() && cnn.stride_w.size() == cnn.channels.size(),
              "cnn strides must match channels");
      require(all_positive(cnn.stride_h) && all_positive(cnn.stride_w), "cnn strides must be positive");
      require(cnn.kernel > 0 && cnn.kernel % 2 == 1, "cnn.kernel must be odd");
      break;
    case Backbone::kSwin:
      require(all_positive(swin.dims) && swin.dims.size() == swin.depths.size() &&
                  swin.dims.size() == swin.heads.size(),
              "swin dims/depths/heads must have equal length");
      require(all_positive(swin.depths) && all_positive(swin.heads), "swin sizes must be positive");
      for (std::size_t i = 0; i < swin.dims.size(); ++i)
        require(swin.dims[i] % swin.heads[i] == 0, "swin dim not divisible by heads");
      require(swin.patch > 0 && swin.window > 0 && swin.mlp_ratio > 0, "swin sizes must be positive");
      break;
    case Backbone::kConvNext:
      require(all_positive(convnext.dims) && convnext.dims.size() == convnext.depths.size(),
              "convnext dims/depths must have equal length");
      require(all_positive(convnext.depths), "convnext depths must be positive");
      require(convnext.patch > 0 && convnext.mlp_ratio > 0, "convnext sizes must be positive");
      require(convnext.kernel > 0 && convnext.kernel % 2 == 1, "convnext.kernel must be odd");
      break;
  }
  require(channels() % 4 == 0, "encoder channels must be divisible by 4");
}

ModelConfig ModelConfig::paper(Backbone backbone, int vocab_size) {
  ModelConfig c;
  c.preset = "paper";
  c.backbone = backbone;
  c.vocab_size = vocab_size;
  return c;
}

ModelConfig ModelConfig::micro(Backbone backbone, int vocab_size) {
  ModelConfig c;
  c.preset = "micro";
  c.backbone = backbone;
  c.vocab_size = vocab_size;
  c.image_height = 64;
  c.cnn.channels = {16, 32, 64, 256};
  c.cnn.stride_h = {2, 2, 2, 2};
  c.cnn.stride_w = {2, 2, 2, 1};
  c.swin.dims = {16, 32, 256};
  c.swin.depths = {1, 1, 1};
  c.swin.heads = {1, 2, 4};
  c.swin.window = 4;
  c.swin.mlp_ratio = 2;
  c.convnext.dims = {16, 32, 256};
  c.convnext.depths = {1, 1, 1};
  c.convnext.mlp_ratio = 2;
  c.decoder.layers = 2;
  c.decoder.heads = 4;
  c.decoder.width = 64;
  c.decoder.ff_width = 128;
  c.decoder.dropout = 0.0;
  c.decoder.max_decode_length = 512;
  return c;
}

ModelConfig ModelConfig::preset_named(const std::string& preset, Backbone backbone, int vocab_size) {
  if (preset == "paper") return paper(backbone, vocab_size);
  if (preset == "micro") return micro(backbone, vocab_size);
  throw Error("InvalidConfig", "unknown preset '" + preset + "'");
}

void ModelConfig::apply(const KeyValueConfig& kv) {
  kv.read("model.image_height", image_height);
  kv.read("model.cnn.channels", cnn.channels);
  kv.read("model.cnn.stride_h", cnn.stride_h);
  kv.read("model.cnn.stride_w", cnn.stride_w);
  kv.read("model.cnn.kernel", cnn.kernel);
  kv.read("model.swin.patch", swin.patch);
  kv.read("model.swin.dims", swin.dims);
  kv.read("model.swin.depths", swin.depths);
  kv.read("model.swin.heads", swin.heads);
  kv.read("model.swin.window", swin.window);
  kv.read("model.swin.mlp_ratio", swin.mlp_ratio);
  kv.read("model.convnext.patch", convnext.patch);
  kv.read("model.convnext.dims", convnext.dims);
  kv.read("model.convnext.depths", convnext.depths);
  kv.read("model.convnext.kernel", convnext.kernel);
  kv.read("model.convnext.mlp_ratio", convnext.mlp_ratio);
  kv.read("model.convnext.layer_scale_init", convnext.layer_scale_init);
  kv.read("model.decoder.layers", decoder.layers);
  kv.read("model.decoder.heads", decoder.heads);
  kv.read("model.decoder.width", decoder.width);
  kv.read("model.decoder.ff_width", decoder.ff_width);
  kv.read("model.decoder.dropout", decoder.dropout);
  kv.read("model.decoder.max_decode_length", decoder.max_decode_length);
}

std::string ModelConfig::to_json() const {
  json j;
  j["preset"] = preset;
  j["backbone"] = to_string(backbone);
  j["vocab_size"] = vocab_size;
  j["image_height"] = image_height;
  j["cnn"] = {{"channels", cnn.channels}, {"stride_h", cnn.stride_h},
              {"stride_w", cnn.stride_w}, {"kernel", cnn.kernel}};
  j["swin"] = {{"patch", swin.patch}, {"dims", swin.dims},     {"depths", swin.depths},
               {"heads", swin.heads}, {"window", swin.window}, {"mlp_ratio", swin.mlp_ratio}};
  j["convnext"] = {{"patch", convnext.patch},
                   {"dims", convnext.dims},
                   {"depths", convnext.depths},
                   {"kernel", convnext.kernel},
                   {"mlp_ratio", convnext.mlp_ratio},
                   {"layer_scale_init", convnext.layer_scale_init}};
  j["decoder"] = {{"layers", decoder.layers},       {"heads", decoder.heads},
                  {"width", decoder.width},         {"ff_width", decoder.ff_width},
                  {"dropout", decoder.dropout},     {"max_decode_length", decoder.max_decode_length}};
  return j.dump();
}

ModelConfig ModelConfig::from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    ModelConfig c;
    c.preset = j.at("preset").get<std::string>();
    c.backbone = backbone_from_string(j.at("backbone").get<std::string>());
    c.vocab_size = j.at("vocab_size").get<int>();
    c.image_height = j.at("image_height").get<int>();
    const auto& cn = j.at("cnn");
    c.cnn = {cn.at("channels").get<std::vector<int>>(), cn.at("stride_h").get<std::vector<int>>(),
             cn.at("stride_w").get<std::vector<int>>(), cn.at("kernel").get<int>()};
    const auto& sw = j.at("swin");
    c.swin = {sw.at("patch").get<int>(),           sw.at("dims").get<std::vector<int>>(),
              sw.at("depths").get<std::vector<int>>(), sw.at("heads").get<std::vector<int>>(),
              sw.at("window").get<int>(),          sw.at("mlp_ratio").get<int>()};
    const auto& cx = j.at("convnext");
    c.convnext = {cx.at("patch").get<int>(),  cx.at("dims").get<std::vector<int>>(),
                  cx.at("depths").get<std::vector<int>>(), cx.at("kernel").get<int>(),
                  cx.at("mlp_ratio").get<int>(), cx.at("layer_scale_init").get<double>()};
    const auto& d = j.at("decoder");
    c.decoder = {d.at("layers").get<int>(),   d.at("heads").get<int>(),
                 d.at("width").get<int>(),    d.at("ff_width").get<int>(),
                 d.at("dropout").get<double>(), d.at("max_decode_length").get<int>()};
    return c;
  } catch (const json::exception& e) {
    throw Error("CorruptCheckpoint", std::string("bad model config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Positional encodings

template <typename Scalar>
Mat<Scalar> positional_encoding_2d(int h, int w, int c) {
  if (c <= 0 || c % 4 != 0)
    throw Error("ChannelCountNotDivisibleBy4", "channel count " + std::to_string(c));
  Mat<Scalar> pe(static_cast<Eigen::Index>(h) * w, c);
  const int half = c / 2;
  for (int i = 0; i < c / 4; ++i) {
    const double div = std::pow(10000.0, 2.0 * i / c);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const auto r = static_cast<Eigen::Index>(y) * w + x;
        pe(r, 2 * i) = static_cast<Scalar>(std::sin(x / div));
        pe(r, 2 * i + 1) = static_cast<Scalar>(std::cos(x / div));
        pe(r, half + 2 * i) = static_cast<Scalar>(std::sin(y / div));
        pe(r, half + 2 * i + 1) = static_cast<Scalar>(std::cos(y / div));
      }
  }
  return pe;
}

template <typename Scalar>
FeatureMap<Scalar> add_2d_pe(FeatureMap<Scalar> fm) {
  fm.values += positional_encoding_2d<Scalar>(fm.h, fm.w, fm.channels());
  return fm;
}

template <typename Scalar>
Mat<Scalar> positional_encoding_1d(int len, int d) {
  Mat<Scalar> pe(len, d);
  for (int p = 0; p < len; ++p)
    for (int i = 0; i < d; ++i) {
      const double angle = p / std::pow(10000.0, 2.0 * (i / 2) / d);
      pe(p, i) = static_cast<Scalar>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  return pe;
}

template <typename Scalar>
Mat<Scalar> causal_mask(int n) {
  Mat<Scalar> m = Mat<Scalar>::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) m(i, j) = -std::numeric_limits<Scalar>::infinity();
  return m;
}

}  // namespace smt::model

// ---------------------------------------------------------------------------
// Index tables

namespace smt::nn {

SpatialTable conv_table(int h, int w, int kh, int kw, int sh, int sw, int ph, int pw) {
  SpatialTable t;
  t.out_h = (h + 2 * ph - kh) / sh + 1;
  t.out_w = (w + 2 * pw - kw) / sw + 1;
  if (t.out_h <= 0 || t.out_w <= 0) throw Error("ImageTooSmall", "input smaller than kernel");
  t.k = kh * kw;
  t.table.resize(static_cast<std::size_t>(t.out_h) * t.out_w * t.k);
  std::size_t n = 0;
  for (int oy = 0; oy < t.out_h; ++oy)
    for (int ox = 0; ox < t.out_w; ++ox)
      for (int ky = 0; ky < kh; ++ky)
        for (int kx = 0; kx < kw; ++kx) {
          const int y = oy * sh - ph + ky;
          const int x = ox * sw - pw + kx;
          t.table[n++] = (y >= 0 && y < h && x >= 0 && x < w) ? y * w + x : -1;
        }
  return t;
}

SpatialTable patch_table(int h, int w, int k) {
  SpatialTable t;
  t.out_h = ceil_div(h, k);
  t.out_w = ceil_div(w, k);
  t.k = k * k;
  t.table.resize(static_cast<std::size_t>(t.out_h) * t.out_w * t.k);
  std::size_t n = 0;
  for (int oy = 0; oy < t.out_h; ++oy)
    for (int ox = 0; ox < t.out_w; ++ox)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const int y = oy * k + ky;
          const int x = ox * k + kx;
          t.table[n++] = (y < h && x < w) ? y * w + x : -1;
        }
  return t;
}

}  // namespace smt::nn

namespace smt::model {
namespace {

using nn::LayerNorm;
using nn::Linear;
using nn::ParameterSet;

template <typename Scalar>
ad::Var<Scalar> dense_unfold(ad::Var<Scalar> x, const nn::SpatialTable& t) {
  return ad::unfold(x, t.table, t.k);
}

// Ink intensity as a single channel: 1 - pixel, so zero padding is paper.
template <typename Scalar>
Mat<Scalar> ink_column(const Mat<Scalar>& image) {
  Mat<Scalar> inv = (Scalar(1) - image.array()).matrix();
  return Eigen::Map<const Mat<Scalar>>(inv.data(), inv.size(), 1);
}

// -- CNN --------------------------------------------------------------------

template <typename Scalar>
class CnnEncoder final : public Encoder<Scalar> {
 public:
  CnnEncoder(const CnnConfig& cfg, ParameterSet<Scalar>& ps, Rng& rng) : cfg_(cfg) {
    int cin = 1;
    const int k2 = cfg.kernel * cfg.kernel;
    for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
      const std::string name = "encoder.cnn" + std::to_string(i);
      const int cout = cfg.channels[i];
      convs_.push_back(Linear::create(ps, name + ".conv", k2 * cin, cout, rng, true,
                                      std::sqrt(2.0 / (k2 * cin))));
      norms_.push_back(LayerNorm::create(ps, name + ".norm", cout));
      cin = cout;
    }
  }

  Spatial<Scalar> forward(ad::Tape<Scalar>& t, const ParameterSet<Scalar>& ps,
                          const Mat<Scalar>& image) const override {
    int h = static_cast<int>(image.rows()), w = static_cast<int>(image.cols());
    auto x = t.constant(ink_column(image));
    const int p = cfg_.kernel / 2;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      const auto table = nn::conv_table(h, w, cfg_.kernel, cfg_.kernel, cfg_.stride_h[i],
                                        cfg_.stride_w[i], p, p);
      x = ad::relu(norms_[i](t, ps, convs_[i](t, ps, dense_unfold(x, table))));
      h = table.out_h;
      w = table.out_w;
    }
    return {x, h, w};
  }

 private:
  CnnConfig cfg_;
  std::vector<Linear> convs_;
  std::vector<LayerNorm> norms_;
};

// -- Swin -------------------------------------------------------------------

template <typename Scalar>
class SwinEncoder final : public Encoder<Scalar> {
 public:
  SwinEncoder(const SwinConfig& cfg, ParameterSet<Scalar>& ps, Rng& rng) : cfg_(cfg) {
    const int m = cfg.window;
    const int rel = (2 * m - 1) * (2 * m - 1);
    embed_ = Linear::create(ps, "encoder.swin.embed", cfg.patch * cfg.patch, cfg.dims[0], rng);
    embed_norm_ = LayerNorm::create(ps, "encoder.swin.embed_norm", cfg.dims[0]);
    for (std::size_t s = 0; s < cfg.dims.size(); ++s) {
      Stage st;
      const int c = cfg.dims[s];
      const std::string sname = "encoder.swin.stage" + std::to_string(s);
      if (s > 0) {
        st.merge_norm = LayerNorm::create(ps, sname + ".merge_norm", 4 * cfg.dims[s - 1]);
        st.merge = Linear::create(ps, sname + ".merge", 4 * cfg.dims[s - 1], c, rng, false);
      }
      for (int b = 0; b < cfg.depths[s]; ++b) {
        const std::string name = sname + ".block" + std::to_string(b);
        Block blk;
        blk.norm1 = LayerNorm::create(ps, name + ".norm1", c);
        blk.qkv = Linear::create(ps, name + ".qkv", c, 3 * c, rng);
        blk.proj = Linear::create(ps, name + ".proj", c, c, rng);
        blk.rel_bias = ps.add(name + ".rel_bias",
                              nn::random_normal<Scalar>(rel, cfg.heads[s], 0.02, rng));
        blk.norm2 = LayerNorm::create(ps, name + ".norm2", c);
        blk.fc1 = Linear::create(ps, name + ".fc1", c, cfg.mlp_ratio * c, rng);
        blk.fc2 = Linear::create(ps, name + ".fc2", cfg.mlp_ratio * c, c, rng);
        st.blocks.push_back(blk);
      }
      stages_.push_back(std::move(st));
    }
    final_norm_ = LayerNorm::create(ps, "encoder.swin.final_norm", cfg.dims.back());
  }

  Spatial<Scalar> forward(ad::Tape<Scalar>& t, const ParameterSet<Scalar>& ps,
                          const Mat<Scalar>& image) const override {
    int h = static_cast<int>(image.rows()), w = static_cast<int>(image.cols());
    auto pt = nn::patch_table(h, w, cfg_.patch);
    auto x = embed_norm_(t, ps, embed_(t, ps, dense_unfold(t.constant(ink_column(image)), pt)));
    h = pt.out_h;
    w = pt.out_w;
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      const Stage& st = stages_[s];
      if (s > 0) {
        auto mt = nn::patch_table(h, w, 2);
        x = st.merge(t, ps, st.merge_norm(t, ps, dense_unfold(x, mt)));
        h = mt.out_h;
        w = mt.out_w;
      }
      for (std::size_t b = 0; b < st.blocks.size(); ++b)
        x = block(t, ps, st.blocks[b], x, h, w, cfg_.heads[s], b % 2 == 1);
    }
    return {final_norm_(t, ps, x), h, w};
  }

 private:
  struct Block {
    LayerNorm norm1, norm2;
    Linear qkv, proj, fc1, fc2;
    int rel_bias = -1;
  };
  struct Stage {
    LayerNorm merge_norm;
    Linear merge;
    std::vector<Block> blocks;
  };

  // Window geometry along one axis: window length, padded length, shift.
  struct Axis {
    int win, padded, shift;
  };
  Axis axis(int n) const {
    const int m = cfg_.window;
    if (n <= m) return {n, n, 0};
    return {m, nn::ceil_div(n, m) * m, m / 2};
  }

  ad::Var<Scalar> block(ad::Tape<Scalar>& t, const ParameterSet<Scalar>& ps, const Block& blk,
                        ad::Var<Scalar> x, int h, int w, int heads, bool shifted) const {
    const Axis ay = axis(h), ax = axis(w);
    const int sy = shifted ? ay.shift : 0, sx = shifted ? ax.shift : 0;
    const int nwy = ay.padded / ay.win, nwx = ax.padded / ax.win;
    const int len = ay.win * ax.win;
    const int c = static_cast<int>(x.cols());

    // Gather shifted windows and, inversely, scatter them back.
    std::vector<int> gather(static_cast<std::size_t>(nwy) * nwx * len);
    std::vector<int> scatter(static_cast<std::size_t>(h) * w);
    std::vector<int> region(gather.size());
    auto label = [](int r, const Axis& a, int s) {
      if (s == 0) return 0;
      return r < a.padded - a.win ? 0 : (r < a.padded - s ? 1 : 2);
    };
    std::size_t n = 0;
    for (int wy = 0; wy < nwy; ++wy)
      for (int wx = 0; wx < nwx; ++wx)
        for (int iy = 0; iy < ay.win; ++iy)
          for (int ix = 0; ix < ax.win; ++ix, ++n) {
            const int ry = wy * ay.win + iy, rx = wx * ax.win + ix;
            const int py = (ry + sy) % ay.padded, px = (rx + sx) % ax.padded;
            const bool inside = py < h && px < w;
            gather[n] = inside ? py * w + px : -1;
            if (inside) scatter[static_cast<std::size_t>(py) * w + px] = static_cast<int>(n);
            region[n] = label(ry, ay, sy) * 3 + label(rx, ax, sx);
          }

    // Relative position bias, one (len x len) matrix per head.
    const int m = cfg_.window;
    std::vector<int> rel(static_cast<std::size_t>(len) * len);
    for (int a = 0; a < len; ++a)
      for (int b = 0; b < len; ++b) {
        const int dy = a / ax.win - b / ax.win + m - 1;
        const int dx = a % ax.win - b % ax.win + m - 1;
        rel[static_cast<std::size_t>(a) * len + b] = dy * (2 * m - 1) + dx;
      }
    auto bias_rows = ad::unfold(ps.bind(t, blk.rel_bias), rel, 1);
    std::vector<ad::Var<Scalar>> bias;
    for (int hd = 0; hd < heads; ++hd)
      bias.push_back(ad::reshape(ad::slice_cols(bias_rows, hd, 1), len, len));

    auto y = blk.norm1(t, ps, x);
    auto windows = ad::unfold(y, gather, 1);
    auto qkv = blk.qkv(t, ps, windows);
    auto q = ad::slice_cols(qkv, 0, c);
    auto k = ad::slice_cols(qkv, c, c);
    auto v = ad::slice_cols(qkv, 2 * c, c);
    std::vector<ad::Var<Scalar>> outs;
    outs.reserve(static_cast<std::size_t>(nwy) * nwx);
    for (int win = 0; win < nwy * nwx; ++win) {
      const auto r0 = static_cast<Eigen::Index>(win) * len;
      const Mat<Scalar>* mask = nullptr;
      Mat<Scalar> mask_storage;
      if (sy || sx) {
        bool uniform = true;
        for (int a = 1; a < len && uniform; ++a) uniform = region[r0 + a] == region[r0];
        if (!uniform) {
          mask_storage = Mat<Scalar>::Zero(len, len);
          for (int a = 0; a < len; ++a)
            for (int b = 0; b < len; ++b)
              if (region[r0 + a] != region[r0 + b])
                mask_storage(a, b) = -std::numeric_limits<Scalar>::infinity();
          mask = &mask_storage;
        }
      }
      outs.push_back(nn::MultiHeadAttention::attend(ad::slice_rows(q, r0, len),
                                                    ad::slice_rows(k, r0, len),
                                                    ad::slice_rows(v, r0, len), heads, mask, &bias));
    }
    auto attn = blk.proj(t, ps, outs.size() == 1 ? outs.front() : ad::concat_rows(outs));
    x = ad::add(x, ad::unfold(attn, scatter, 1));
    auto f = blk.fc2(t, ps, ad::gelu(blk.fc1(t, ps, blk.norm2(t, ps, x))));
    return ad::add(x, f);
  }

  SwinConfig cfg_;
  Linear embed_;
  LayerNorm embed_norm_;
  std::vector<Stage> stages_;
  LayerNorm final_norm_;
};

// -- ConvNeXt ---------------------------------------------------------------

template <typename Scalar>
class ConvNextEncoder final : public Encoder<Scalar> {
 public:
  ConvNextEncoder(const ConvNextConfig& cfg, ParameterSet<Scalar>& ps, Rng& rng) : cfg_(cfg) {
    stem_ = Linear::create(ps, "encoder.convnext.stem", cfg.patch * cfg.patch, cfg.dims[0], rng);
    stem_norm_ = LayerNorm::create(ps, "encoder.convnext.stem_norm", cfg.dims[0]);
    const int k2 = cfg.kernel * cfg.kernel;
    for (std::size_t s = 0; s < cfg.dims.size(); ++s) {
      Stage st;
      const int c = cfg.dims[s];
      const std::string sname = "encoder.convnext.stage" + std::to_string(s);
      if (s > 0) {
        st.down_norm = LayerNorm::create(ps, sname + ".down_norm", cfg.dims[s - 1]);
        st.down = Linear::create(ps, sname + ".down", 4 * cfg.dims[s - 1], c, rng);
      }
      for (int b = 0; b < cfg.depths[s]; ++b) {
        const std::string name = sname + ".block" + std::to_string(b);
        Block blk;
        blk.dw_weight = ps.add(name + ".dw.weight",
                               nn::random_normal<Scalar>(k2, c, 1.0 / std::sqrt(k2), rng));
        blk.dw_bias = ps.add(name + ".dw.bias", Mat<Scalar>::Zero(1, c));
        blk.norm = LayerNorm::create(ps, name + ".norm", c);
        blk.fc1 = Linear::create(ps, name + ".fc1", c, cfg.mlp_ratio * c, rng);
        blk.fc2 = Linear::create(ps, name + ".fc2", cfg.mlp_ratio * c, c, rng);
        blk.scale = ps.add(name + ".layer_scale",
                           Mat<Scalar>::Constant(1, c, static_cast<Scalar>(cfg.layer_scale_init)));
        st.blocks.push_back(blk);
      }
      stages_.push_back(std::move(st));
    }
    final_norm_ = LayerNorm::create(ps, "encoder.convnext.final_norm", cfg.dims.back());
  }

  Spatial<Scalar> forward(ad::Tape<Scalar>& t, const ParameterSet<Scalar>& ps,
                          const Mat<Scalar>& image) const override {
    int h = static_cast<int>(image.rows()), w = static_cast<int>(image.cols());
    auto pt = nn::patch_table(h, w, cfg_.patch);
    auto x = stem_norm_(t, ps, stem_(t, ps, dense_unfold(t.constant(ink_column(image)), pt)));
    h = pt.out_h;
    w = pt.out_w;
    const int p = cfg_.kernel / 2;
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      const Stage& st = stages_[s];
      if (s > 0) {
        auto mt = nn::patch_table(h, w, 2);
        x = st.down(t, ps, dense_unfold(st.down_norm(t, ps, x), mt));
        h = mt.out_h;
        w = mt.out_w;
      }
      const auto dw = nn::conv_table(h, w, cfg_.kernel, cfg_.kernel, 1, 1, p, p);
      for (const Block& blk : st.blocks) {
        auto y = ad::depthwise(x, dw.table, dw.k, ps.bind(t, blk.dw_weight), ps.bind(t, blk.dw_bias));
        y = blk.fc2(t, ps, ad::gelu(blk.fc1(t, ps, blk.norm(t, ps, y))));
        x = ad::add(x, ad::mul_row(y, ps.bind(t, blk.scale)));
      }
    }
    return {final_norm_(t, ps, x), h, w};
  }

 private:
  struct Block {
    int dw_weight = -1, dw_bias = -1, scale = -1;
    LayerNorm norm;
    Linear fc1, fc2;
  };
  struct Stage {
    LayerNorm down_norm;
    Linear down;
    std::vector<Block> blocks;
  };

  ConvNextConfig cfg_;
  Linear stem_;
  LayerNorm stem_norm_;
  std::vector<Stage> stages_;
  LayerNorm final_norm_;
};

template <typename Scalar>
Mat<Scalar> dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  Mat<Scalar> m(rows, cols);
  const auto keep = static_cast<Scalar>(1.0 / (1.0 - p));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.bernoulli(p) ? Scalar(0) : keep;
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// SmtModel

template <typename Scalar>
SmtModel<Scalar>::SmtModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(derive_seed(seed, "init"));
  switch (cfg_.backbone) {
    case Backbone::kCnn:
      encoder_ = std::make_unique<CnnEncoder<Scalar>>(cfg_.cnn, params_, rng);
      break;
    case Backbone::kSwin:
      encoder_ = std::make_unique<SwinEncoder<Scalar>>(cfg_.swin, params_, rng);
      break;
    case Backbone::kConvNext:
      encoder_ = std::make_unique<ConvNextEncoder<Scalar>>(cfg_.convnext, params_, rng);
      break;
  }
  const auto& d = cfg_.decoder;
  has_projection_ = cfg_.channels() != d.width;
  if (has_projection_) projection_ = Linear::create(params_, "projection", cfg_.channels(), d.width, rng);
  embedding_ = params_.add("decoder.embedding",
                           nn::random_normal<Scalar>(cfg_.vocab_size, d.width, 1.0, rng));
  for (int l = 0; l < d.layers; ++l) {
    const std::string name = "decoder.layer" + std::to_string(l);
    DecoderLayer layer;
    layer.ln_self = LayerNorm::create(params_, name + ".ln_self", d.width);
    layer.self_attn = nn::MultiHeadAttention::create(params_, name + ".self", d.width, d.heads, rng);
    layer.ln_cross = LayerNorm::create(params_, name + ".ln_cross", d.width);
    layer.cross_attn = nn::MultiHeadAttention::create(params_, name + ".cross", d.width, d.heads, rng);
    layer.ln_ff = LayerNorm::create(params_, name + ".ln_ff", d.width);
    layer.ff1 = Linear::create(params_, name + ".ff1", d.width, d.ff_width, rng);
    layer.ff2 = Linear::create(params_, name + ".ff2", d.ff_width, d.width, rng);
    layers_.push_back(layer);
  }
  final_norm_ = LayerNorm::create(params_, "decoder.final_norm", d.width);
  output_ = Linear::create(params_, "decoder.output", d.width, cfg_.vocab_size, rng, true, 0.02);
}

template <typename Scalar>
SmtModel<Scalar>::~SmtModel() = default;
template <typename Scalar>
SmtModel<Scalar>::SmtModel(SmtModel&&) noexcept = default;
template <typename Scalar>
SmtModel<Scalar>& SmtModel<Scalar>::operator=(SmtModel&&) noexcept = default;

template <typename Scalar>
Spatial<Scalar> SmtModel<Scalar>::encode(ad::Tape<Scalar>& t, const GrayImage& image) const {
  const auto [rh, rw] = cfg_.downscale();
  if (image.rows() < rh || image.cols() < rw)
    throw Error("ImageTooSmall", std::to_string(image.rows()) + "x" + std::to_string(image.cols()) +
                                     " is below one downscale step (" + std::to_string(rh) + "x" +
                                     std::to_string(rw) + ")");
  return encoder_->forward(t, params_, to_scalar<Scalar>(image));
}

template <typename Scalar>
ad::Var<Scalar> SmtModel<Scalar>::encode_flat(ad::Tape<Scalar>& t, const GrayImage& image) const {
  const auto s = encode(t, image);
  return ad::add_const(s.x, positional_encoding_2d<Scalar>(s.h, s.w, static_cast<int>(s.x.cols())));
}

template <typename Scalar>
ad::Var<Scalar> SmtModel<Scalar>::decoder_logits(ad::Tape<Scalar>& t, ad::Var<Scalar> memory,
                                                 std::span<const int> tokens, Rng* dropout_rng) const {
  const auto& d = cfg_.decoder;
  const int n = static_cast<int>(tokens.size());
  const double p = dropout_rng ? d.dropout : 0.0;
  auto drop = [&](ad::Var<Scalar> v) {
    if (p <= 0.0) return v;
    return ad::mul_const(v, dropout_mask<Scalar>(v.rows(), v.cols(), p, *dropout_rng));
  };

  if (memory.cols() != cfg_.channels()) throw Error("ShapeMismatch", "memory width");
  auto mem = has_projection_ ? projection_(t, params_, memory) : memory;
  std::vector<int> ids(tokens.begin(), tokens.end());
  for (int id : ids)
    if (id < 0 || id >= cfg_.vocab_size) throw Error("InvalidArgument", "token id out of range");
  auto x = ad::unfold(params_.bind(t, embedding_), std::move(ids), 1);
  x = drop(ad::add_const(x, positional_encoding_1d<Scalar>(n, d.width)));
  const Mat<Scalar> mask = causal_mask<Scalar>(n);
  for (const auto& layer : layers_) {
    auto h = layer.ln_self(t, params_, x);
    x = ad::add(x, drop(layer.self_attn(t, params_, h, h, &mask)));
    h = layer.ln_cross(t, params_, x);
    x = ad::add(x, drop(layer.cross_attn(t, params_, h, mem)));
    h = layer.ln_ff(t, params_, x);
    x = ad::add(x, drop(layer.ff2(t, params_, ad::relu(layer.ff1(t, params_, h)))));
  }
  return output_(t, params_, final_norm_(t, params_, x));
}

template <typename Scalar>
FeatureMap<Scalar> SmtModel<Scalar>::encode(const GrayImage& image) const {
  ad::Tape<Scalar> t(false);
  const auto s = encode(t, image);
  const auto [rh, rw] = cfg_.downscale();
  return {s.x.value(), s.h, s.w, rh, rw};
}

template <typename Scalar>
Mat<Scalar> SmtModel<Scalar>::memory(const GrayImage& image) const {
  return flatten(add_2d_pe(encode(image)));
}

template <typename Scalar>
void SmtModel<Scalar>::check_prefix(std::span<const int> prefix) const {
  if (prefix.empty() || prefix.front() != kern::Vocabulary::kSot)
    throw Error("InvalidArgument", "prefix must start with <sot>");
  if (static_cast<int>(prefix.size()) > cfg_.decoder.max_decode_length)
    throw Error("PrefixTooLong", "prefix of " + std::to_string(prefix.size()) +
                                     " tokens exceeds max decode length " +
                                     std::to_string(cfg_.decoder.max_decode_length));
}

template <typename Scalar>
Mat<Scalar> SmtModel<Scalar>::logits(std::span<const int> prefix, const Mat<Scalar>& memory) const {
  check_prefix(prefix);
  ad::Tape<Scalar> t(false);
  return decoder_logits(t, t.constant(memory), prefix).value();
}

template <typename Scalar>
Vec<Scalar> SmtModel<Scalar>::decode_step(std::span<const int> prefix, const Mat<Scalar>& memory) const {
  const Mat<Scalar> z = logits(prefix, memory);
  Vec<Scalar> last = z.row(z.rows() - 1).transpose();
  const Scalar m = last.maxCoeff();
  Vec<Scalar> p = (last.array() - m).exp();
  return p / p.sum();
}

template <typename Scalar>
std::vector<int> SmtModel<Scalar>::greedy_decode_memory(const Mat<Scalar>& memory) const {
  // Incremental decoding: self-attention keys/values are cached per layer and
  // cross-attention keys/values are computed once, so each step costs O(t).
  const auto& d = cfg_.decoder;
  const int max_len = d.max_decode_length;
  if (memory.cols() != cfg_.channels()) throw Error("ShapeMismatch", "memory width");
  const Mat<Scalar> pe = positional_encoding_1d<Scalar>(max_len, d.width);
  std::vector<Mat<Scalar>> cross_k, cross_v;
  {
    ad::Tape<Scalar> t(false);
    auto mem = t.constant(memory);
    if (has_projection_) mem = projection_(t, params_, mem);
    for (const auto& layer : layers_) {
      cross_k.push_back(layer.cross_attn.k(t, params_, mem).value());
      cross_v.push_back(layer.cross_attn.v(t, params_, mem).value());
    }
  }
  std::vector<Mat<Scalar>> self_k(layers_.size(), Mat<Scalar>(0, d.width));
  std::vector<Mat<Scalar>> self_v(layers_.size(), Mat<Scalar>(0, d.width));
  auto append = [](Mat<Scalar>& cache, const Mat<Scalar>& row) {
    cache.conservativeResize(cache.rows() + 1, Eigen::NoChange);
    cache.row(cache.rows() - 1) = row.row(0);
  };

  std::vector<int> out;
  int token = kern::Vocabulary::kSot;
  for (int pos = 0; pos < max_len; ++pos) {
    ad::Tape<Scalar> t(false);
    auto x = ad::unfold(params_.bind(t, embedding_), std::vector<int>{token}, 1);
    x = ad::add_const(x, Mat<Scalar>(pe.row(pos)));
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& layer = layers_[l];
      auto h = layer.ln_self(t, params_, x);
      append(self_k[l], layer.self_attn.k(t, params_, h).value());
      append(self_v[l], layer.self_attn.v(t, params_, h).value());
      auto a = nn::MultiHeadAttention::attend(layer.self_attn.q(t, params_, h), t.constant(self_k[l]),
                                              t.constant(self_v[l]), d.heads,
                                              static_cast<const Mat<Scalar>*>(nullptr));
      x = ad::add(x, layer.self_attn.o(t, params_, a));
      h = layer.ln_cross(t, params_, x);
      a = nn::MultiHeadAttention::attend(layer.cross_attn.q(t, params_, h), t.constant(cross_k[l]),
                                         t.constant(cross_v[l]), d.heads,
                                         static_cast<const Mat<Scalar>*>(nullptr));
      x = ad::add(x, layer.cross_attn.o(t, params_, a));
      h = layer.ln_ff(t, params_, x);
      x = ad::add(x, layer.ff2(t, params_, ad::relu(layer.ff1(t, params_, h))));
    }
    const Mat<Scalar>& z = output_(t, params_, final_norm_(t, params_, x)).value();
    int best = 0;
    for (int i = 1; i < static_cast<int>(z.cols()); ++i)
      if (z(0, i) > z(0, best)) best = i;
    if (best == kern::Vocabulary::kEot) break;
    out.push_back(best);
    token = best;
  }
  return out;
}

/// Reference greedy decoder built on decode_step; quadratic, used in tests.
template <typename Scalar>
std::vector<int> SmtModel<Scalar>::greedy_decode_reference(const Mat<Scalar>& memory) const {
  std::vector<int> prefix{kern::Vocabulary::kSot};
  while (static_cast<int>(prefix.size()) <= cfg_.decoder.max_decode_length) {
    const Vec<Scalar> p = decode_step(prefix, memory);
    int best = 0;
    for (int i = 1; i < static_cast<int>(p.size()); ++i)
      if (p(i) > p(best)) best = i;
    if (best == kern::Vocabulary::kEot) break;
    prefix.push_back(best);
  }
  return {prefix.begin() + 1, prefix.end()};
}

template <typename Scalar>
std::vector<int> SmtModel<Scalar>::greedy_decode(const GrayImage& image) const {
  return greedy_decode_memory(memory(image));
}

template Mat<float> positional_encoding_2d<float>(int, int, int);
template Mat<double> positional_encoding_2d<double>(int, int, int);
template FeatureMap<float> add_2d_pe<float>(FeatureMap<float>);
template FeatureMap<double> add_2d_pe<double>(FeatureMap<double>);
template Mat<float> positional_encoding_1d<float>(int, int);
template Mat<double> positional_encoding_1d<double>(int, int);
template Mat<float> causal_mask<float>(int);
template Mat<double> causal_mask<double>(int);
template class SmtModel<float>;
template class SmtModel<double>;

}  // namespace smt::model
