// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "support/test_support.hpp"
#include "tckd/model.hpp"

using namespace tckd;
using tckd::testing::grad_check;
using tckd::testing::Probe;
using tckd::testing::random_tensor;
using tckd::testing::small_split;
using tckd::testing::tiny_model_config;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t.at(r, c);
  return m;
}

Mat affine(const Mat& x, const Tensor& w, const Tensor& b) {
  Mat out(x.size(), std::vector<double>(w.cols(), 0.0));
  for (std::size_t r = 0; r < x.size(); ++r)
    for (std::size_t j = 0; j < w.cols(); ++j) {
      double s = b.defined() ? b.data()[j] : 0.0;
      for (std::size_t i = 0; i < x[r].size(); ++i) s += x[r][i] * w.at(i, j);
      out[r][j] = s;
    }
  return out;
}

Mat norm(const Mat& x, const Tensor& g, const Tensor& b) {
  Mat out = x;
  for (auto& row : out) {
    double mean = 0.0, var = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(row.size());
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(row.size());
    for (std::size_t i = 0; i < row.size(); ++i)
      row[i] = (row[i] - mean) / std::sqrt(var + 1e-5) * g.data()[i] + b.data()[i];
  }
  return out;
}

Mat plus(Mat a, const Mat& b) {
  for (std::size_t r = 0; r < a.size(); ++r)
    for (std::size_t c = 0; c < a[r].size(); ++c) a[r][c] += b[r][c];
  return a;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

// Pre-norm block with a literal per-head attention loop over one sequence.
Mat block_oracle(const Mat& x, const BlockWeights& w, std::size_t heads) {
  const Mat h = norm(x, w.ln1_g, w.ln1_b);
  const Mat q = affine(h, w.wq, w.bq), k = affine(h, w.wk, w.bk), v = affine(h, w.wv, w.bv);
  const std::size_t n = x.size(), d = x[0].size(), dh = d / heads;
  Mat att(n, std::vector<double>(d, 0.0));
  for (std::size_t hd = 0; hd < heads; ++hd) {
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> s(n);
      double mx = -1e300;
      for (std::size_t j = 0; j < n; ++j) {
        s[j] = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s[j] += q[i][hd * dh + c] * k[j][hd * dh + c];
        s[j] /= std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, s[j]);
      }
      double z = 0.0;
      for (auto& e : s) z += (e = std::exp(e - mx));
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t c = 0; c < dh; ++c) att[i][hd * dh + c] += s[j] / z * v[j][hd * dh + c];
    }
  }
  const Mat x1 = plus(x, affine(att, w.wo, w.bo));
  Mat f = affine(norm(x1, w.ln2_g, w.ln2_b), w.w1, w.b1);
  for (auto& row : f)
    for (auto& e : row) e = gelu(e);
  return plus(x1, affine(f, w.w2, w.b2));
}

void randomize(ParameterSet& p, std::mt19937_64& rng, double scale = 0.3) {
  std::normal_distribution<double> n(0.0, scale);
  for (auto& [name, t] : p)
    for (auto& v : t.mutable_data()) v = n(rng);
}

struct Fixture {
  DatasetSplit split = small_split();
  ModelConfig cfg = tiny_model_config(split);
};

std::vector<const TokenizedSequence*> ptrs(const std::vector<TokenizedSequence>& v, std::size_t n) {
  std::vector<const TokenizedSequence*> out;
  for (std::size_t i = 0; i < std::min(n, v.size()); ++i) out.push_back(&v[i]);
  return out;
}

}  // namespace

TEST_CASE("model config validation") {
  Fixture fx;
  auto bad = fx.cfg;
  bad.num_heads = 3;
  CHECK_THROWS(bad.validate());
  bad = fx.cfg;
  bad.num_users = 0;
  CHECK_THROWS(bad.validate());
  nlohmann::json j = fx.cfg;
  CHECK(j.get<ModelConfig>() == fx.cfg);
}

TEST_CASE("token_channel_embed: positions, minimal input, overlong rejection") {
  Fixture fx;
  const Model m = Model::create(fx.cfg, 1);
  const std::vector<std::size_t> ids = {5, 5};
  const auto e = m.token_channel_embed(ids);
  double diff = 0.0;
  for (std::size_t c = 0; c < fx.cfg.hidden_size; ++c) diff += std::abs(e.at(0, c) - e.at(1, c));
  CHECK(diff > 1e-6);
  const std::vector<std::size_t> cls = {Vocabulary::kCls};
  CHECK(m.token_channel_embed(cls).shape() == Shape{1, fx.cfg.hidden_size});
  const std::vector<std::size_t> longer(fx.cfg.max_seq_len + 1, 3);
  CHECK_THROWS(m.token_channel_embed(longer));
}

TEST_CASE("forward: truncation keeps the prefix and is counted") {
  Fixture fx;
  auto cfg = fx.cfg;
  cfg.max_seq_len = 4;
  const Model m = Model::create(cfg, 2);
  TokenizedSequence cut = fx.split.train[0];
  REQUIRE(cut.tokens.size() > 4);
  TokenizedSequence prefix = cut;
  prefix.tokens.resize(4);
  const auto a = m.forward({&cut});
  const auto b = m.forward({&prefix});
  CHECK(a.truncated == 1);
  CHECK(b.truncated == 0);
  CHECK(std::equal(a.logits.data().begin(), a.logits.data().end(), b.logits.data().begin()));
}

TEST_CASE("project_char_channel: affine contract") {
  Fixture fx;
  const Model m = Model::create(fx.cfg, 3);
  const auto out = m.project_char_channel(Tensor::zeros({3, 2 * fx.cfg.char_hidden_dim}));
  CHECK(out.shape() == Shape{3, fx.cfg.hidden_size});
  const auto& bias = m.params().get("model.char_proj.b");
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < fx.cfg.hidden_size; ++c) CHECK(out.at(r, c) == bias.data()[c]);
}

TEST_CASE("transformer_block: per-head oracle, single token, probabilities") {
  std::mt19937_64 rng(4);
  ParameterSet p;
  const auto w = BlockWeights::init(p, "b.", 4, 6, rng);
  randomize(p, rng, 0.5);
  BatchLayout one{{{0, 2}}, {1, 1}};
  const Tensor x = random_tensor({2, 4}, rng);
  const auto got = transformer_block(x, w, one, 2);
  const auto want = block_oracle(to_mat(x), w, 2);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 4; ++c) CHECK(std::abs(got.at(r, c) - want[r][c]) < 1e-12);

  BatchLayout single{{{0, 1}}, {1}};
  const Tensor x1 = random_tensor({1, 4}, rng);
  const auto probs = ops::attention_probs(x1, x1, single.segments, single.key_valid, 2);
  CHECK(probs[0][0][0] == 1.0);
  const auto y = transformer_block(x1, w, single, 2);
  const auto ywant = block_oracle(to_mat(x1), w, 2);
  for (std::size_t c = 0; c < 4; ++c) CHECK(std::abs(y.at(0, c) - ywant[0][c]) < 1e-12);

  const Tensor q = random_tensor({5, 4}, rng), k = random_tensor({5, 4}, rng);
  const std::vector<ops::Segment> segs = {{0, 5}};
  const std::vector<std::uint8_t> valid(5, 1);
  const auto all_probs = ops::attention_probs(q, k, segs, valid, 2);
  for (const auto& head : all_probs[0])
    for (std::size_t i = 0; i < 5; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 5; ++j) s += head[i * 5 + j];
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("heterogeneous_interaction: residual identity, asymmetry, coupling") {
  std::mt19937_64 rng(5);
  ParameterSet p;
  auto w = InteractionWeights::init(p, "i.", 4, rng);
  randomize(p, rng, 0.5);
  const Tensor t = random_tensor({3, 4}, rng), c = random_tensor({3, 4}, rng);

  ParameterSet z = p.clone();
  for (const char* n : {"i.split_token.w", "i.split_char.w"})
    for (auto& v : z.get(n).mutable_data()) v = 0.0;
  const auto same = heterogeneous_interaction(t, c, InteractionWeights::bind(z, "i."));
  CHECK(std::equal(same.token.data().begin(), same.token.data().end(), t.data().begin()));
  CHECK(std::equal(same.chars.data().begin(), same.chars.data().end(), c.data().begin()));

  const auto a = heterogeneous_interaction(t, c, w);
  const auto b = heterogeneous_interaction(c, t, w);
  double diff = 0.0;
  for (std::size_t i = 0; i < 12; ++i) diff += std::abs(a.token.data()[i] - b.chars.data()[i]);
  CHECK(diff > 1e-6);

  Tensor c2 = c.clone();
  c2.mutable_data()[0] += 0.1;
  const auto perturbed = heterogeneous_interaction(t, c2, w);
  double d2 = 0.0;
  for (std::size_t i = 0; i < 12; ++i) d2 += std::abs(a.token.data()[i] - perturbed.token.data()[i]);
  CHECK(d2 > 1e-8);
  CHECK_THROWS_AS(heterogeneous_interaction(t, Tensor::zeros({2, 4}), w), ShapeError);
}

TEST_CASE("forward: shapes, finiteness, batch and padding invariance") {
  Fixture fx;
  const Model m = Model::create(fx.cfg, 6);
  const auto batch = ptrs(fx.split.train, 4);
  const auto out = m.forward(batch);
  CHECK(out.logits.shape() == Shape{4, fx.cfg.num_users});
  CHECK(out.pooled.shape() == Shape{4, fx.cfg.hidden_size});
  for (double v : out.logits.data()) CHECK(std::isfinite(v));

  const auto dup = m.forward({batch[1], batch[1]});
  for (std::size_t c = 0; c < fx.cfg.num_users; ++c) CHECK(dup.logits.at(0, c) == dup.logits.at(1, c));
  for (std::size_t i = 0; i < 4; ++i) {
    const auto alone = m.forward({batch[i]});
    for (std::size_t c = 0; c < fx.cfg.num_users; ++c)
      CHECK(std::abs(alone.logits.at(0, c) - out.logits.at(i, c)) < 1e-12);
  }

  ForwardOptions pad;
  pad.pad_to = fx.cfg.max_seq_len;
  const auto padded = m.forward(batch, pad);
  for (std::size_t i = 0; i < out.pooled.numel(); ++i)
    CHECK(std::abs(padded.pooled.data()[i] - out.pooled.data()[i]) < 1e-9);
}

TEST_CASE("forward: temp_char with zero timings equals char_only bit-exactly") {
  Fixture fx;
  Model temp = Model::create(fx.cfg, 7);
  auto co_cfg = fx.cfg;
  co_cfg.mode = ModelMode::kCharOnly;
  Model chars(co_cfg, temp.params().clone());
  std::vector<TokenizedSequence> zeroed = fx.split.train;
  for (auto& s : zeroed)
    for (auto& t : s.tokens) {
      std::fill(t.d.begin(), t.d.end(), 0.0);
      std::fill(t.f.begin(), t.f.end(), 0.0);
    }
  const auto a = temp.forward(ptrs(zeroed, 8));
  const auto b = chars.forward(ptrs(fx.split.train, 8));
  CHECK(std::equal(a.logits.data().begin(), a.logits.data().end(), b.logits.data().begin()));
  CHECK(std::equal(a.pooled.data().begin(), a.pooled.data().end(), b.pooled.data().begin()));
}

TEST_CASE("trainable excludes parameters the loss never reaches") {
  Fixture fx;
  const Model temp = Model::create(fx.cfg, 8);
  const auto tr = temp.trainable();
  CHECK(!tr.contains("model.layers.1.interaction.split_char.w"));
  CHECK(tr.contains("model.layers.0.interaction.split_char.w"));
  CHECK(tr.contains("tempchar_encoder.temporal_hold"));
  auto co_cfg = fx.cfg;
  co_cfg.mode = ModelMode::kCharOnly;
  const Model co = Model::create(co_cfg, 8);
  CHECK(!co.trainable().contains("tempchar_encoder.temporal_hold"));

  // Every trainable parameter receives a gradient from one loss.
  Model m = Model::create(fx.cfg, 9);
  const auto out = m.forward(ptrs(fx.split.train, 3));
  const std::vector<std::size_t> labels = {0, 1, 2};
  backward(ops::cross_entropy(out.logits, labels));
  for (const auto& [name, t] : m.trainable()) CHECK_MESSAGE(t.has_grad(), name);
}

TEST_CASE("finite differences: end-to-end two-layer model") {
  Fixture fx;
  std::mt19937_64 rng(10);
  for (int t = 0; t < 3; ++t) {
    Model m = Model::create(fx.cfg, 20 + t);
    const auto batch = ptrs(fx.split.train, 2);
    std::vector<Tensor> params;
    for (const auto& [name, w] : m.trainable()) params.push_back(w);
    const auto r = grad_check(params, [&] { return m.forward(batch).logits; }, Probe(t), rng, 60);
    CHECK(r.rel_error < 1e-3);
  }
}

TEST_CASE("checkpoint round trip reproduces forward outputs") {
  Fixture fx;
  const Model m = Model::create(fx.cfg, 11);
  const auto path = std::filesystem::temp_directory_path() / "tckd_model_ckpt.bin";
  write_checkpoint(path, m.params(), "{}");
  const Model back(fx.cfg, read_checkpoint(path).params);
  const auto a = m.forward(ptrs(fx.split.test, 3)), b = back.forward(ptrs(fx.split.test, 3));
  CHECK(std::equal(a.logits.data().begin(), a.logits.data().end(), b.logits.data().begin()));
  std::filesystem::remove(path);
}
