// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tckd/encoder.hpp"
#include "tckd/ops.hpp"
#include "tckd/parameters.hpp"
#include "tckd/tokenizer.hpp"

namespace tckd {

/// char_only feeds the character channel without timing; the network is
/// otherwise identical.
enum class ModelMode { kCharOnly, kTempChar };

ModelMode parse_model_mode(const std::string& s);
std::string to_string(ModelMode m);

struct ModelConfig {
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t hidden_size = 64;  // D, token channel width
  std::size_t ffn_size = 128;
  std::size_t char_embed_dim = 32;   // E
  std::size_t char_hidden_dim = 64;  // H per GRU direction
  std::size_t max_seq_len = 64;
  std::size_t num_users = 2;
  std::size_t subword_vocab = 0;
  std::size_t char_vocab = 0;
  double dropout = 0.1;
  ModelMode mode = ModelMode::kTempChar;
  TemporalMode temporal_mode = TemporalMode::kSeparate;

  void validate() const;
  EncoderConfig encoder() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Weights of one pre-norm transformer layer for one channel.
struct BlockWeights {
  Tensor ln1_g, ln1_b;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_g, ln2_b;
  Tensor w1, b1, w2, b2;

  static BlockWeights init(ParameterSet& p, const std::string& prefix, std::size_t d, std::size_t ffn,
                           std::mt19937_64& rng);
  static BlockWeights bind(const ParameterSet& p, const std::string& prefix);
};

/// Fuse [2D -> D] with GELU, then per-stream residual split projections.
struct InteractionWeights {
  Tensor fuse_w, fuse_b;
  Tensor split_token_w;
  Tensor split_char_w;

  static InteractionWeights init(ParameterSet& p, const std::string& prefix, std::size_t d, std::mt19937_64& rng);
  static InteractionWeights bind(const ParameterSet& p, const std::string& prefix);
};

/// Row layout of a batch: one attention segment per sequence; key_valid
/// marks padding rows that must never be attended to.
struct BatchLayout {
  std::vector<ops::Segment> segments;
  std::vector<std::uint8_t> key_valid;
};

struct DropoutContext {
  double rate = 0.0;
  std::mt19937_64* rng = nullptr;
};

/// x + Attn(LN1(x)), then + FFN(LN2(x)); GELU feed-forward.
Tensor transformer_block(const Tensor& x, const BlockWeights& w, const BatchLayout& layout, std::size_t num_heads,
                         const DropoutContext& drop = {});

struct StreamPair {
  Tensor token;
  Tensor chars;
};

/// s = GELU([token ; char] W_f + b_f); token' = token + s W_t; char' = char + s W_c.
StreamPair heterogeneous_interaction(const Tensor& token_stream, const Tensor& char_stream,
                                     const InteractionWeights& w);

struct ForwardOptions {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // required when training with dropout
  std::size_t pad_to = 0;          // pad every sequence to this many tokens
};

struct ForwardResult {
  Tensor pooled;              // [B x D]
  Tensor logits;              // [B x num_users]
  std::size_t truncated = 0;  // sequences cut to max_seq_len
};

/// Dual-channel network: subword channel and temporal-character channel,
/// num_layers transformer layers each followed by an interaction step,
/// pooled from the token channel's [CLS] row.
class Model {
 public:
  static Model create(const ModelConfig& cfg, std::uint64_t seed);
  Model(const ModelConfig& cfg, ParameterSet params);

  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  /// Independent copy with fresh storage.
  Model clone() const { return Model(cfg_, params_.clone()); }

  const ModelConfig& config() const { return cfg_; }
  const ParameterSet& params() const { return params_; }
  ParameterSet& params() { return params_; }
  const TempCharEncoder& encoder() const { return encoder_; }
  const BlockWeights& token_block(std::size_t l) const { return token_blocks_.at(l); }
  const BlockWeights& char_block(std::size_t l) const { return char_blocks_.at(l); }
  const InteractionWeights& interaction(std::size_t l) const { return interactions_.at(l); }

  /// Parameters reached by the loss in this configuration: excludes the
  /// timing matrices in char_only mode and the char-side split of the last
  /// interaction (its output is never consumed).
  ParameterSet trainable() const;

  /// Subword + position embeddings, layer-normed: [m x D]. m must not exceed
  /// max_seq_len.
  Tensor token_channel_embed(std::span<const std::size_t> subword_ids) const;
  /// Linear 2H -> D adapter on encoder output.
  Tensor project_char_channel(const Tensor& encoded) const;

  ForwardResult forward(const std::vector<const TokenizedSequence*>& batch, const ForwardOptions& opts = {}) const;

 private:
  void bind();
  bool use_temporal() const { return cfg_.mode == ModelMode::kTempChar; }

  ModelConfig cfg_;
  ParameterSet params_;
  TempCharEncoder encoder_;
  Tensor token_table_, pos_table_, emb_ln_g_, emb_ln_b_;
  Tensor char_proj_w_, char_proj_b_;
  std::vector<BlockWeights> token_blocks_, char_blocks_;
  std::vector<InteractionWeights> interactions_;
  Tensor final_ln_g_, final_ln_b_, head_w_, head_b_;
};

}  // namespace tckd
