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

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "smt/autodiff.hpp"
#include "smt/config.hpp"
#include "smt/nn.hpp"
#include "smt/rng.hpp"
#include "smt/types.hpp"

namespace smt::model {

enum class Backbone { kCnn, kSwin, kConvNext };

std::string to_string(Backbone b);
Backbone backbone_from_string(const std::string& name);

struct CnnConfig {
  std::vector<int> channels{32, 64, 128, 256, 256};
  std::vector<int> stride_h{2, 2, 2, 2, 1};
  std::vector<int> stride_w{2, 2, 2, 1, 1};
  int kernel = 3;
};

struct SwinConfig {
  int patch = 4;
  std::vector<int> dims{64, 128, 256};
  std::vector<int> depths{2, 2, 6};
  std::vector<int> heads{2, 4, 8};
  int window = 7;
  int mlp_ratio = 4;
};

struct ConvNextConfig {
  int patch = 4;
  std::vector<int> dims{64, 128, 256};
  std::vector<int> depths{3, 3, 9};
  int kernel = 7;
  int mlp_ratio = 4;
  double layer_scale_init = 1e-6;
};

struct DecoderConfig {
  int layers = 8;
  int heads = 4;
  int width = 256;
  int ff_width = 256;
  double dropout = 0.1;
  /// Longest generated sequence (tokens after <sot>, <eot> excluded).
  int max_decode_length = 1024;
};

struct ModelConfig {
  std::string preset = "paper";
  Backbone backbone = Backbone::kCnn;
  CnnConfig cnn;
  SwinConfig swin;
  ConvNextConfig convnext;
  DecoderConfig decoder;
  int vocab_size = 0;
  int image_height = 128;

  /// Encoder output channels c_e.
  int channels() const;
  /// Encoder downscale factors (r_h, r_w).
  std::array<int, 2> downscale() const;
  /// Throws Error("InvalidConfig").
  void validate() const;

  static ModelConfig paper(Backbone backbone, int vocab_size);
  /// Desk-scale preset: two decoder layers of width 64 and reduced backbones.
  static ModelConfig micro(Backbone backbone, int vocab_size);
  static ModelConfig preset_named(const std::string& preset, Backbone backbone, int vocab_size);

  /// Applies `model.*` keys (e.g. model.decoder.layers, model.cnn.channels).
  void apply(const KeyValueConfig& kv);

  std::string to_json() const;
  static ModelConfig from_json(std::string_view json);
};

/// Encoder output, stored as (h * w) x c with position index y * w + x.
template <typename Scalar>
struct FeatureMap {
  Mat<Scalar> values;
  int h = 0;
  int w = 0;
  int r_h = 1;
  int r_w = 1;
  int channels() const { return static_cast<int>(values.cols()); }
  Scalar at(int y, int x, int c) const { return values(y * w + x, c); }
};

/// Sinusoidal 2D encoding of shape (h * w) x c. For i < c/4, channels 2i and
/// 2i+1 carry sin/cos of the column index over 10000^(2i/c); channels
/// c/2 + 2i and c/2 + 2i + 1 carry the same for the row index.
template <typename Scalar>
Mat<Scalar> positional_encoding_2d(int h, int w, int c);

template <typename Scalar>
FeatureMap<Scalar> add_2d_pe(FeatureMap<Scalar> fm);

/// Row-major sequence of h * w feature vectors.
template <typename Scalar>
Mat<Scalar> flatten(const FeatureMap<Scalar>& fm) {
  return fm.values;
}

template <typename Scalar>
FeatureMap<Scalar> unflatten(Mat<Scalar> seq, int h, int w, int r_h = 1, int r_w = 1) {
  if (seq.rows() != static_cast<Eigen::Index>(h) * w) throw Error("ShapeMismatch", "unflatten");
  return {std::move(seq), h, w, r_h, r_w};
}

/// Standard 1D sinusoidal encoding, len x d (sin on even, cos on odd channels).
template <typename Scalar>
Mat<Scalar> positional_encoding_1d(int len, int d);

/// Additive causal mask: 0 on and below the diagonal, -inf above.
template <typename Scalar>
Mat<Scalar> causal_mask(int n);

/// (h * w) x c activation with its spatial shape.
template <typename Scalar>
struct Spatial {
  ad::Var<Scalar> x;
  int h = 0;
  int w = 0;
};

template <typename Scalar>
class Encoder {
 public:
  virtual ~Encoder() = default;
  virtual Spatial<Scalar> forward(ad::Tape<Scalar>& t, const nn::ParameterSet<Scalar>& ps,
                                  const Mat<Scalar>& image) const = 0;
};

/// Image encoder plus autoregressive transformer decoder.
template <typename Scalar>
class SmtModel {
 public:
  SmtModel(ModelConfig cfg, std::uint64_t seed);
  ~SmtModel();
  SmtModel(SmtModel&&) noexcept;
  SmtModel& operator=(SmtModel&&) noexcept;

  const ModelConfig& config() const { return cfg_; }
  nn::ParameterSet<Scalar>& params() { return params_; }
  const nn::ParameterSet<Scalar>& params() const { return params_; }

  // Differentiable pieces, used by the trainer and gradient checks.

  /// Raw backbone output. Throws Error("ImageTooSmall").
  Spatial<Scalar> encode(ad::Tape<Scalar>& t, const GrayImage& image) const;
  /// Encoder features with 2D PE, flattened (h_e * w_e) x c_e.
  ad::Var<Scalar> encode_flat(ad::Tape<Scalar>& t, const GrayImage& image) const;
  /// Decoder logits (T x V) for input tokens given flattened features
  /// (c_e wide). Dropout is active only when `dropout_rng` is non-null.
  ad::Var<Scalar> decoder_logits(ad::Tape<Scalar>& t, ad::Var<Scalar> memory,
                                 std::span<const int> tokens, Rng* dropout_rng = nullptr) const;

  // Inference.

  FeatureMap<Scalar> encode(const GrayImage& image) const;
  /// Flattened features with PE, ready for decoding.
  Mat<Scalar> memory(const GrayImage& image) const;
  /// Logits for every prefix position. Throws Error("PrefixTooLong").
  Mat<Scalar> logits(std::span<const int> prefix, const Mat<Scalar>& memory) const;
  /// Next-token distribution after `prefix` (must start with <sot>).
  Vec<Scalar> decode_step(std::span<const int> prefix, const Mat<Scalar>& memory) const;
  /// Greedy transcription without <sot>/<eot>; ties go to the lowest id.
  std::vector<int> greedy_decode(const GrayImage& image) const;
  std::vector<int> greedy_decode_memory(const Mat<Scalar>& memory) const;
  /// Same contract as greedy_decode_memory, recomputing every step through
  /// decode_step. Quadratic; kept as an independent check of the cache.
  std::vector<int> greedy_decode_reference(const Mat<Scalar>& memory) const;

 private:
  struct DecoderLayer {
    nn::LayerNorm ln_self, ln_cross, ln_ff;
    nn::MultiHeadAttention self_attn, cross_attn;
    nn::Linear ff1, ff2;
  };

  void check_prefix(std::span<const int> prefix) const;

  ModelConfig cfg_;
  nn::ParameterSet<Scalar> params_;
  std::unique_ptr<Encoder<Scalar>> encoder_;
  bool has_projection_ = false;
  nn::Linear projection_;
  int embedding_ = -1;
  std::vector<DecoderLayer> layers_;
  nn::LayerNorm final_norm_;
  nn::Linear output_;
};

template <typename Scalar>
Mat<Scalar> to_scalar(const GrayImage& image) {
  return image.template cast<Scalar>();
}

}  // namespace smt::model
