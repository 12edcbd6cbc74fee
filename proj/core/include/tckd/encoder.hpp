// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "tckd/parameters.hpp"
#include "tckd/tokenizer.hpp"

namespace tckd {

/// How hold (d) and flight (f) map into embedding space.
///   kShared:   u = T_c d + T_c f  (one matrix, depends only on d + f)
///   kSeparate: u = T_c d + T_f f
enum class TemporalMode { kShared, kSeparate };

TemporalMode parse_temporal_mode(const std::string& s);
std::string to_string(TemporalMode m);

struct EncoderConfig {
  std::size_t char_vocab = 0;
  std::size_t embed_dim = 32;   // E
  std::size_t hidden_dim = 64;  // H per direction; token vectors are 2H wide
  TemporalMode temporal_mode = TemporalMode::kSeparate;
};

/// Gate weights of one GRU direction. Input maps are [E x H], recurrent
/// maps [H x H], biases [H].
struct GruWeights {
  Tensor w_z, u_z, b_z;
  Tensor w_r, u_r, b_r;
  Tensor w_h, u_h, b_h;

  static GruWeights init(ParameterSet& params, const std::string& prefix, std::size_t in, std::size_t hidden,
                         std::mt19937_64& rng);
  static GruWeights bind(const ParameterSet& params, const std::string& prefix);
};

/// z = s(xW_z + hU_z + b_z), r = s(xW_r + hU_r + b_r),
/// c = tanh(xW_h + (r*h)U_h + b_h), h' = (1 - z)*h + z*c.
Tensor gru_step(const GruWeights& w, const Tensor& x, const Tensor& h);

/// Character-to-token encoder with optional keystroke timing injection.
/// Parameters live under the "tempchar_encoder." prefix.
class TempCharEncoder {
 public:
  static constexpr const char* kPrefix = "tempchar_encoder.";

  TempCharEncoder() = default;
  static TempCharEncoder init(const EncoderConfig& cfg, ParameterSet& params, std::mt19937_64& rng);
  static TempCharEncoder bind(const EncoderConfig& cfg, const ParameterSet& params);

  const EncoderConfig& config() const { return cfg_; }
  std::size_t output_dim() const { return 2 * cfg_.hidden_dim; }

  /// Rows of the character embedding matrix: [n x E].
  Tensor char_embed(std::span<const std::size_t> char_ids) const;
  /// Temporal embeddings for n characters: [n x E].
  Tensor temporal_embed(std::span<const double> d, std::span<const double> f) const;
  /// Forward-final || backward-final GRU state over one token's character
  /// vectors [n x E] -> [1 x 2H]. n must be >= 1.
  Tensor bigru_token_embed(const Tensor& char_vectors) const;

  /// Encodes every token independently (GRU state restarts per token).
  /// Tokens without characters ([CLS], [PAD]) yield zero rows.
  /// Returns [tokens.size() x 2H].
  Tensor encode_tokens(const std::vector<const Token*>& tokens, bool use_temporal) const;
  Tensor encode(const TokenizedSequence& seq, bool use_temporal) const;

  const GruWeights& forward_gru() const { return fw_; }
  const GruWeights& backward_gru() const { return bw_; }

 private:
  // Runs both directions over tokens laid out as contiguous row ranges of
  // `x`. Returns [count x 2H].
  Tensor bigru_rows(const Tensor& x, std::span<const std::size_t> offsets, std::span<const std::size_t> lengths) const;

  EncoderConfig cfg_;
  Tensor char_table_;
  Tensor temporal_hold_;
  Tensor temporal_flight_;  // undefined in kShared mode
  GruWeights fw_, bw_;
};

}  // namespace tckd
