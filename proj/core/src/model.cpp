// SPDX-License-Identifier: Apache-2.0
#include "tckd/model.hpp"

#include <algorithm>

namespace tckd {

ModelMode parse_model_mode(const std::string& s) {
  if (s == "char_only") return ModelMode::kCharOnly;
  if (s == "temp_char") return ModelMode::kTempChar;
  throw std::invalid_argument("unknown mode '" + s + "' (expected char_only or temp_char)");
}

std::string to_string(ModelMode m) { return m == ModelMode::kCharOnly ? "char_only" : "temp_char"; }

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (num_layers == 0) fail("num_layers must be positive");
  if (num_heads == 0 || hidden_size % num_heads != 0) fail("hidden_size must be divisible by num_heads");
  if (char_embed_dim == 0 || char_hidden_dim == 0 || ffn_size == 0) fail("dimensions must be positive");
  if (max_seq_len < 1) fail("max_seq_len must be positive");
  if (num_users < 1) fail("num_users must be positive");
  if (subword_vocab < 3 || char_vocab < 2) fail("vocabulary sizes not set");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must be in [0, 1)");
}

EncoderConfig ModelConfig::encoder() const {
  return EncoderConfig{char_vocab, char_embed_dim, char_hidden_dim, temporal_mode};
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"num_layers", c.num_layers},
                     {"num_heads", c.num_heads},
                     {"hidden_size", c.hidden_size},
                     {"ffn_size", c.ffn_size},
                     {"char_embed_dim", c.char_embed_dim},
                     {"char_hidden_dim", c.char_hidden_dim},
                     {"max_seq_len", c.max_seq_len},
                     {"num_users", c.num_users},
                     {"subword_vocab", c.subword_vocab},
                     {"char_vocab", c.char_vocab},
                     {"dropout", c.dropout},
                     {"mode", to_string(c.mode)},
                     {"temporal_mode", to_string(c.temporal_mode)}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.num_layers = j.value("num_layers", d.num_layers);
  c.num_heads = j.value("num_heads", d.num_heads);
  c.hidden_size = j.value("hidden_size", d.hidden_size);
  c.ffn_size = j.value("ffn_size", d.ffn_size);
  c.char_embed_dim = j.value("char_embed_dim", d.char_embed_dim);
  c.char_hidden_dim = j.value("char_hidden_dim", d.char_hidden_dim);
  c.max_seq_len = j.value("max_seq_len", d.max_seq_len);
  c.num_users = j.value("num_users", d.num_users);
  c.subword_vocab = j.value("subword_vocab", d.subword_vocab);
  c.char_vocab = j.value("char_vocab", d.char_vocab);
  c.dropout = j.value("dropout", d.dropout);
  c.mode = parse_model_mode(j.value("mode", to_string(d.mode)));
  c.temporal_mode = parse_temporal_mode(j.value("temporal_mode", to_string(d.temporal_mode)));
}

// ---------------------------------------------------------------------------

BlockWeights BlockWeights::init(ParameterSet& p, const std::string& prefix, std::size_t d, std::size_t ffn,
                                std::mt19937_64& rng) {
  auto ones = [](std::size_t n) { return Tensor::from({n}, std::vector<double>(n, 1.0)); };
  p.add(prefix + "ln1.g", ones(d));
  p.add(prefix + "ln1.b", Tensor::zeros({d}));
  for (const char* m : {"q", "k", "v", "o"}) {
    p.add(prefix + "attn.w" + m, xavier_uniform(d, d, rng));
    p.add(prefix + "attn.b" + m, Tensor::zeros({d}));
  }
  p.add(prefix + "ln2.g", ones(d));
  p.add(prefix + "ln2.b", Tensor::zeros({d}));
  p.add(prefix + "ffn.w1", xavier_uniform(d, ffn, rng));
  p.add(prefix + "ffn.b1", Tensor::zeros({ffn}));
  p.add(prefix + "ffn.w2", xavier_uniform(ffn, d, rng));
  p.add(prefix + "ffn.b2", Tensor::zeros({d}));
  return bind(p, prefix);
}

BlockWeights BlockWeights::bind(const ParameterSet& p, const std::string& prefix) {
  BlockWeights w;
  w.ln1_g = p.get(prefix + "ln1.g");
  w.ln1_b = p.get(prefix + "ln1.b");
  w.wq = p.get(prefix + "attn.wq");
  w.bq = p.get(prefix + "attn.bq");
  w.wk = p.get(prefix + "attn.wk");
  w.bk = p.get(prefix + "attn.bk");
  w.wv = p.get(prefix + "attn.wv");
  w.bv = p.get(prefix + "attn.bv");
  w.wo = p.get(prefix + "attn.wo");
  w.bo = p.get(prefix + "attn.bo");
  w.ln2_g = p.get(prefix + "ln2.g");
  w.ln2_b = p.get(prefix + "ln2.b");
  w.w1 = p.get(prefix + "ffn.w1");
  w.b1 = p.get(prefix + "ffn.b1");
  w.w2 = p.get(prefix + "ffn.w2");
  w.b2 = p.get(prefix + "ffn.b2");
  return w;
}

InteractionWeights InteractionWeights::init(ParameterSet& p, const std::string& prefix, std::size_t d,
                                            std::mt19937_64& rng) {
  p.add(prefix + "fuse.w", xavier_uniform(2 * d, d, rng));
  p.add(prefix + "fuse.b", Tensor::zeros({d}));
  p.add(prefix + "split_token.w", xavier_uniform(d, d, rng));
  p.add(prefix + "split_char.w", xavier_uniform(d, d, rng));
  return bind(p, prefix);
}

InteractionWeights InteractionWeights::bind(const ParameterSet& p, const std::string& prefix) {
  InteractionWeights w;
  w.fuse_w = p.get(prefix + "fuse.w");
  w.fuse_b = p.get(prefix + "fuse.b");
  w.split_token_w = p.get(prefix + "split_token.w");
  w.split_char_w = p.get(prefix + "split_char.w");
  return w;
}

namespace {

Tensor maybe_dropout(const Tensor& x, const DropoutContext& drop) {
  if (drop.rate <= 0.0 || drop.rng == nullptr) return x;
  return ops::dropout(x, drop.rate, *drop.rng);
}

}  // namespace

Tensor transformer_block(const Tensor& x, const BlockWeights& w, const BatchLayout& layout, std::size_t num_heads,
                         const DropoutContext& drop) {
  using namespace ops;
  Tensor h = layer_norm(x, w.ln1_g, w.ln1_b);
  Tensor q = linear(h, w.wq, w.bq);
  Tensor k = linear(h, w.wk, w.bk);
  Tensor v = linear(h, w.wv, w.bv);
  Tensor a = linear(segment_attention(q, k, v, layout.segments, layout.key_valid, num_heads), w.wo, w.bo);
  Tensor x1 = add(x, maybe_dropout(a, drop));
  Tensor h2 = layer_norm(x1, w.ln2_g, w.ln2_b);
  Tensor f = linear(gelu(linear(h2, w.w1, w.b1)), w.w2, w.b2);
  return add(x1, maybe_dropout(f, drop));
}

StreamPair heterogeneous_interaction(const Tensor& token_stream, const Tensor& char_stream,
                                     const InteractionWeights& w) {
  using namespace ops;
  if (token_stream.shape() != char_stream.shape()) {
    throw ShapeError("heterogeneous_interaction: stream shapes " + shape_str(token_stream.shape()) + " vs " +
                     shape_str(char_stream.shape()));
  }
  Tensor s = gelu(linear(concat_cols({token_stream, char_stream}), w.fuse_w, w.fuse_b));
  return {add(token_stream, matmul(s, w.split_token_w)), add(char_stream, matmul(s, w.split_char_w))};
}

// ---------------------------------------------------------------------------

Model Model::create(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ParameterSet p;
  TempCharEncoder::init(cfg.encoder(), p, rng);
  const std::size_t D = cfg.hidden_size;
  p.add("model.token_embed", normal_init(cfg.subword_vocab, D, 0.02, rng));
  p.add("model.pos_embed", normal_init(cfg.max_seq_len, D, 0.02, rng));
  p.add("model.embed_ln.g", Tensor::from({D}, std::vector<double>(D, 1.0)));
  p.add("model.embed_ln.b", Tensor::zeros({D}));
  p.add("model.char_proj.w", xavier_uniform(2 * cfg.char_hidden_dim, D, rng));
  p.add("model.char_proj.b", Tensor::zeros({D}));
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::string pre = "model.layers." + std::to_string(l) + ".";
    BlockWeights::init(p, pre + "token.", D, cfg.ffn_size, rng);
    BlockWeights::init(p, pre + "char.", D, cfg.ffn_size, rng);
    InteractionWeights::init(p, pre + "interaction.", D, rng);
  }
  p.add("model.final_ln.g", Tensor::from({D}, std::vector<double>(D, 1.0)));
  p.add("model.final_ln.b", Tensor::zeros({D}));
  p.add("model.head.w", xavier_uniform(D, cfg.num_users, rng));
  p.add("model.head.b", Tensor::zeros({cfg.num_users}));
  return Model(cfg, std::move(p));
}

Model::Model(const ModelConfig& cfg, ParameterSet params) : cfg_(cfg), params_(std::move(params)) {
  cfg_.validate();
  bind();
}

void Model::bind() {
  encoder_ = TempCharEncoder::bind(cfg_.encoder(), params_);
  token_table_ = params_.get("model.token_embed");
  pos_table_ = params_.get("model.pos_embed");
  if (token_table_.shape() != Shape{cfg_.subword_vocab, cfg_.hidden_size} ||
      pos_table_.shape() != Shape{cfg_.max_seq_len, cfg_.hidden_size}) {
    throw ShapeError("model: embedding tables do not match config");
  }
  emb_ln_g_ = params_.get("model.embed_ln.g");
  emb_ln_b_ = params_.get("model.embed_ln.b");
  char_proj_w_ = params_.get("model.char_proj.w");
  char_proj_b_ = params_.get("model.char_proj.b");
  token_blocks_.clear();
  char_blocks_.clear();
  interactions_.clear();
  for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
    const std::string pre = "model.layers." + std::to_string(l) + ".";
    token_blocks_.push_back(BlockWeights::bind(params_, pre + "token."));
    char_blocks_.push_back(BlockWeights::bind(params_, pre + "char."));
    interactions_.push_back(InteractionWeights::bind(params_, pre + "interaction."));
  }
  final_ln_g_ = params_.get("model.final_ln.g");
  final_ln_b_ = params_.get("model.final_ln.b");
  head_w_ = params_.get("model.head.w");
  head_b_ = params_.get("model.head.b");
  if (head_w_.shape() != Shape{cfg_.hidden_size, cfg_.num_users}) throw ShapeError("model: head does not match config");
}

ParameterSet Model::trainable() const {
  const std::string dead = "model.layers." + std::to_string(cfg_.num_layers - 1) + ".interaction.split_char.w";
  const bool temporal = use_temporal();
  return params_.filter([&](const std::string& name) {
    if (name == dead) return false;
    if (!temporal && name.rfind(std::string(TempCharEncoder::kPrefix) + "temporal_", 0) == 0) return false;
    return true;
  });
}

Tensor Model::token_channel_embed(std::span<const std::size_t> subword_ids) const {
  if (subword_ids.size() > cfg_.max_seq_len) {
    throw std::invalid_argument("token_channel_embed: sequence longer than max_seq_len");
  }
  std::vector<std::size_t> pos(subword_ids.size());
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
  Tensor e = ops::add(ops::gather_rows(token_table_, subword_ids), ops::gather_rows(pos_table_, pos));
  return ops::layer_norm(e, emb_ln_g_, emb_ln_b_);
}

Tensor Model::project_char_channel(const Tensor& encoded) const {
  return ops::linear(encoded, char_proj_w_, char_proj_b_);
}

ForwardResult Model::forward(const std::vector<const TokenizedSequence*>& batch, const ForwardOptions& opts) const {
  if (batch.empty()) throw std::invalid_argument("forward: empty batch");
  ForwardResult res;
  static const Token kPadToken{Vocabulary::kPad, {}, {}, {}};

  BatchLayout layout;
  std::vector<std::size_t> ids, positions, cls_rows;
  std::vector<const Token*> tokens;
  for (const auto* seq : batch) {
    if (seq->tokens.empty()) throw std::invalid_argument("forward: sequence without tokens");
    std::size_t m = seq->tokens.size();
    if (m > cfg_.max_seq_len) {
      m = cfg_.max_seq_len;
      ++res.truncated;
    }
    const std::size_t padded = std::max(m, std::min(opts.pad_to, cfg_.max_seq_len));
    const std::size_t start = ids.size();
    layout.segments.push_back({start, padded});
    cls_rows.push_back(start);
    for (std::size_t i = 0; i < padded; ++i) {
      const Token& t = i < m ? seq->tokens[i] : kPadToken;
      if (t.subword_id >= cfg_.subword_vocab) {
        throw std::out_of_range("forward: subword id " + std::to_string(t.subword_id) + " outside model vocabulary");
      }
      for (auto c : t.char_ids) {
        if (c >= cfg_.char_vocab) throw std::out_of_range("forward: char id outside model vocabulary");
      }
      ids.push_back(t.subword_id);
      positions.push_back(i);
      tokens.push_back(&t);
      layout.key_valid.push_back(i < m ? 1 : 0);
    }
  }

  using namespace ops;
  Tensor tok =
      layer_norm(add(gather_rows(token_table_, ids), gather_rows(pos_table_, positions)), emb_ln_g_, emb_ln_b_);
  Tensor chr = project_char_channel(encoder_.encode_tokens(tokens, use_temporal()));

  DropoutContext drop;
  if (opts.training && cfg_.dropout > 0.0) {
    if (opts.rng == nullptr) throw std::invalid_argument("forward: training with dropout needs an rng");
    drop = {cfg_.dropout, opts.rng};
  }
  for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
    tok = transformer_block(tok, token_blocks_[l], layout, cfg_.num_heads, drop);
    chr = transformer_block(chr, char_blocks_[l], layout, cfg_.num_heads, drop);
    auto mixed = heterogeneous_interaction(tok, chr, interactions_[l]);
    tok = std::move(mixed.token);
    chr = std::move(mixed.chars);
  }
  res.pooled = layer_norm(gather_rows(tok, cls_rows), final_ln_g_, final_ln_b_);
  res.logits = linear(res.pooled, head_w_, head_b_);
  return res;
}

}  // namespace tckd
