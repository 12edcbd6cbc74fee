// SPDX-License-Identifier: Apache-2.0
#include "tckd/encoder.hpp"

#include <algorithm>

#include "tckd/ops.hpp"

namespace tckd {

TemporalMode parse_temporal_mode(const std::string& s) {
  if (s == "shared") return TemporalMode::kShared;
  if (s == "separate") return TemporalMode::kSeparate;
  throw std::invalid_argument("unknown temporal_mode '" + s + "'");
}

std::string to_string(TemporalMode m) { return m == TemporalMode::kShared ? "shared" : "separate"; }

GruWeights GruWeights::init(ParameterSet& params, const std::string& prefix, std::size_t in, std::size_t hidden,
                            std::mt19937_64& rng) {
  for (const char* g : {"z", "r", "h"}) {
    params.add(prefix + "w_" + g, xavier_uniform(in, hidden, rng));
    params.add(prefix + "u_" + g, xavier_uniform(hidden, hidden, rng));
    params.add(prefix + "b_" + g, Tensor::zeros({hidden}));
  }
  return bind(params, prefix);
}

GruWeights GruWeights::bind(const ParameterSet& p, const std::string& prefix) {
  GruWeights w;
  w.w_z = p.get(prefix + "w_z");
  w.u_z = p.get(prefix + "u_z");
  w.b_z = p.get(prefix + "b_z");
  w.w_r = p.get(prefix + "w_r");
  w.u_r = p.get(prefix + "u_r");
  w.b_r = p.get(prefix + "b_r");
  w.w_h = p.get(prefix + "w_h");
  w.u_h = p.get(prefix + "u_h");
  w.b_h = p.get(prefix + "b_h");
  return w;
}

Tensor gru_step(const GruWeights& w, const Tensor& x, const Tensor& h) {
  using namespace ops;
  Tensor z = sigmoid(add(linear(x, w.w_z, w.b_z), matmul(h, w.u_z)));
  Tensor r = sigmoid(add(linear(x, w.w_r, w.b_r), matmul(h, w.u_r)));
  Tensor c = tanh(add(linear(x, w.w_h, w.b_h), matmul(mul(r, h), w.u_h)));
  return add(mul(rsub(1.0, z), h), mul(z, c));
}

TempCharEncoder TempCharEncoder::init(const EncoderConfig& cfg, ParameterSet& params, std::mt19937_64& rng) {
  const std::string p = kPrefix;
  params.add(p + "char_embed", normal_init(cfg.char_vocab, cfg.embed_dim, 0.02, rng));
  params.add(p + "temporal_hold", xavier_uniform(1, cfg.embed_dim, rng));
  if (cfg.temporal_mode == TemporalMode::kSeparate) {
    params.add(p + "temporal_flight", xavier_uniform(1, cfg.embed_dim, rng));
  }
  GruWeights::init(params, p + "gru_fw.", cfg.embed_dim, cfg.hidden_dim, rng);
  GruWeights::init(params, p + "gru_bw.", cfg.embed_dim, cfg.hidden_dim, rng);
  return bind(cfg, params);
}

TempCharEncoder TempCharEncoder::bind(const EncoderConfig& cfg, const ParameterSet& params) {
  const std::string p = kPrefix;
  TempCharEncoder e;
  e.cfg_ = cfg;
  e.char_table_ = params.get(p + "char_embed");
  if (e.char_table_.shape() != Shape{cfg.char_vocab, cfg.embed_dim}) {
    throw ShapeError("encoder: char_embed has shape " + shape_str(e.char_table_.shape()));
  }
  e.temporal_hold_ = params.get(p + "temporal_hold");
  if (cfg.temporal_mode == TemporalMode::kSeparate) e.temporal_flight_ = params.get(p + "temporal_flight");
  e.fw_ = GruWeights::bind(params, p + "gru_fw.");
  e.bw_ = GruWeights::bind(params, p + "gru_bw.");
  return e;
}

Tensor TempCharEncoder::char_embed(std::span<const std::size_t> char_ids) const {
  return ops::gather_rows(char_table_, char_ids);
}

Tensor TempCharEncoder::temporal_embed(std::span<const double> d, std::span<const double> f) const {
  if (d.size() != f.size()) throw ShapeError("temporal_embed: d and f lengths differ");
  const std::size_t n = d.size();
  if (cfg_.temporal_mode == TemporalMode::kShared) {
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = d[i] + f[i];
    return ops::matmul(Tensor::from({n, 1}, std::move(s)), temporal_hold_);
  }
  Tensor dc = Tensor::from({n, 1}, std::vector<double>(d.begin(), d.end()));
  Tensor fc = Tensor::from({n, 1}, std::vector<double>(f.begin(), f.end()));
  return ops::add(ops::matmul(dc, temporal_hold_), ops::matmul(fc, temporal_flight_));
}

Tensor TempCharEncoder::bigru_rows(const Tensor& x, std::span<const std::size_t> offsets,
                                   std::span<const std::size_t> lengths) const {
  const std::size_t count = offsets.size();
  const std::size_t H = cfg_.hidden_dim;
  const std::size_t steps = count ? *std::max_element(lengths.begin(), lengths.end()) : 0;

  auto run = [&](const GruWeights& w, bool reverse) {
    Tensor h = Tensor::zeros({count, H});
    std::vector<std::size_t> idx(count);
    std::vector<std::uint8_t> active(count);
    for (std::size_t j = 0; j < steps; ++j) {
      bool all = true;
      for (std::size_t t = 0; t < count; ++t) {
        const std::size_t pos = std::min(j, lengths[t] - 1);
        idx[t] = offsets[t] + (reverse ? lengths[t] - 1 - pos : pos);
        active[t] = j < lengths[t];
        all = all && active[t];
      }
      Tensor next = gru_step(w, ops::gather_rows(x, idx), h);
      h = all ? next : ops::select_rows(active, next, h);
    }
    return h;
  };
  return ops::concat_cols({run(fw_, false), run(bw_, true)});
}

Tensor TempCharEncoder::bigru_token_embed(const Tensor& char_vectors) const {
  if (char_vectors.rank() != 2 || char_vectors.rows() == 0) throw ShapeError("bigru_token_embed: empty token");
  if (char_vectors.cols() != cfg_.embed_dim) {
    throw ShapeError("bigru_token_embed: expected width " + std::to_string(cfg_.embed_dim) + ", got " +
                     shape_str(char_vectors.shape()));
  }
  const std::size_t off = 0, len = char_vectors.rows();
  return bigru_rows(char_vectors, std::span(&off, 1), std::span(&len, 1));
}

Tensor TempCharEncoder::encode_tokens(const std::vector<const Token*>& tokens, bool use_temporal) const {
  std::vector<std::size_t> char_ids, offsets, lengths;
  std::vector<double> d, f;
  std::vector<std::size_t> out_rows(tokens.size(), ops::kZeroRow);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const Token& tok = *tokens[i];
    if (tok.char_ids.empty()) continue;
    if (use_temporal && (tok.d.size() != tok.size() || tok.f.size() != tok.size())) {
      throw std::invalid_argument("encode_tokens: token " + std::to_string(i) + " is missing temporal features");
    }
    out_rows[i] = offsets.size();
    offsets.push_back(char_ids.size());
    lengths.push_back(tok.size());
    char_ids.insert(char_ids.end(), tok.char_ids.begin(), tok.char_ids.end());
    if (use_temporal) {
      d.insert(d.end(), tok.d.begin(), tok.d.end());
      f.insert(f.end(), tok.f.begin(), tok.f.end());
    }
  }
  if (offsets.empty()) return Tensor::zeros({tokens.size(), output_dim()});
  Tensor x = char_embed(char_ids);
  if (use_temporal) x = ops::add(x, temporal_embed(d, f));
  Tensor per_token = bigru_rows(x, offsets, lengths);
  return ops::gather_rows(per_token, out_rows);
}

Tensor TempCharEncoder::encode(const TokenizedSequence& seq, bool use_temporal) const {
  std::vector<const Token*> toks;
  for (const auto& t : seq.tokens) toks.push_back(&t);
  return encode_tokens(toks, use_temporal);
}

}  // namespace tckd
