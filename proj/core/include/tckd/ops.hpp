// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "tckd/tensor.hpp"

namespace tckd::ops {

/// Index value meaning "emit a zero row" in gather_rows.
inline constexpr std::size_t kZeroRow = std::numeric_limits<std::size_t>::max();

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double s);
Tensor mul(const Tensor& a, double s);
Tensor rsub(double s, const Tensor& a);  // s - a

/// x[n x m] + bias[m] broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
/// x W + b.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

/// Concatenate along the last axis. All parts must have the same row count.
Tensor concat_cols(const std::vector<Tensor>& parts);
/// Stack along the first axis. All parts must have the same column count.
Tensor concat_rows(const std::vector<Tensor>& parts);

Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor gelu(const Tensor& x);  // exact (erf) form

Tensor softmax_rows(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// Row lookup: out[i] = table[idx[i]], or zeros when idx[i] == kZeroRow.
/// Gradients scatter-add into the looked-up rows only.
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> idx);

/// out[r] = take_a[r] ? a[r] : b[r]. Exact selection, no arithmetic.
Tensor select_rows(std::span<const std::uint8_t> take_a, const Tensor& a, const Tensor& b);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Mean negative log-likelihood of `labels` under row-wise softmax(logits).
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

/// Inverted dropout. Identity when p == 0.
Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng);

struct Segment {
  std::size_t start = 0;
  std::size_t length = 0;
};

/// Multi-head scaled dot-product self-attention over row blocks. Each
/// segment attends only within itself; rows with key_valid[r] == 0 are never
/// attended to (they still produce outputs as queries). q, k, v: [N x D].
Tensor segment_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::span<const Segment> segments,
                         std::span<const std::uint8_t> key_valid, std::size_t num_heads);

/// Attention probabilities for inspection: probs[seg][head] is a row-major
/// [len x len] matrix. No tape interaction.
std::vector<std::vector<std::vector<double>>> attention_probs(const Tensor& q, const Tensor& k,
                                                              std::span<const Segment> segments,
                                                              std::span<const std::uint8_t> key_valid,
                                                              std::size_t num_heads);

}  // namespace tckd::ops
