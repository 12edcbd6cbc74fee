// SPDX-License-Identifier: Apache-2.0
#include "tckd/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tckd/ops.hpp"
#include "tckd/synth.hpp"

namespace tckd {

std::vector<double> manhattan_features(const KeystrokeSample& s) {
  if (s.size() == 0) throw std::invalid_argument("manhattan_features: empty sample");
  std::array<double, kNumKeyClasses> hold_sum{}, flight_sum{};
  std::array<std::size_t, kNumKeyClasses> hold_n{}, flight_n{};
  double hs = 0, hs2 = 0, fs = 0, fs2 = 0;
  std::size_t fn = 0;
  for (std::size_t j = 0; j < s.size(); ++j) {
    const auto cls = static_cast<std::size_t>(s.events[j].ch ? key_class(*s.events[j].ch) : KeyClass::kOther);
    hold_sum[cls] += s.hold_ms[j];
    hold_n[cls]++;
    hs += s.hold_ms[j];
    hs2 += s.hold_ms[j] * s.hold_ms[j];
    if (j > 0) {  // flight[0] is a convention, not a measurement
      flight_sum[cls] += s.flight_ms[j];
      flight_n[cls]++;
      fs += s.flight_ms[j];
      fs2 += s.flight_ms[j] * s.flight_ms[j];
      ++fn;
    }
  }
  const double n = static_cast<double>(s.size());
  const double hold_mean = hs / n;
  const double hold_std = std::sqrt(std::max(0.0, hs2 / n - hold_mean * hold_mean));
  const double flight_mean = fn ? fs / static_cast<double>(fn) : 0.0;
  const double flight_std =
      fn ? std::sqrt(std::max(0.0, fs2 / static_cast<double>(fn) - flight_mean * flight_mean)) : 0.0;
  std::vector<double> out;
  for (std::size_t k = 0; k < kNumKeyClasses; ++k) {
    out.push_back(hold_n[k] ? hold_sum[k] / static_cast<double>(hold_n[k]) : hold_mean);
    out.push_back(flight_n[k] ? flight_sum[k] / static_cast<double>(flight_n[k]) : flight_mean);
  }
  out.insert(out.end(), {hold_mean, hold_std, flight_mean, flight_std});
  return out;
}

std::vector<ManhattanProfile> build_manhattan_profiles(const std::vector<KeystrokeSample>& train) {
  std::map<std::string, std::pair<std::vector<double>, std::size_t>> acc;
  for (const auto& s : train) {
    auto f = manhattan_features(s);
    auto& [sum, n] = acc[s.user_id];
    if (sum.empty()) sum.assign(f.size(), 0.0);
    for (std::size_t i = 0; i < f.size(); ++i) sum[i] += f[i];
    ++n;
  }
  std::vector<ManhattanProfile> out;
  for (auto& [user, sn] : acc) {
    auto& [sum, n] = sn;
    for (auto& v : sum) v /= static_cast<double>(n);
    out.push_back({user, std::move(sum)});
  }
  return out;
}

ManhattanMatch manhattan_classify(const std::vector<double>& features, const std::vector<ManhattanProfile>& profiles) {
  if (profiles.empty()) throw std::invalid_argument("manhattan_classify: no profiles");
  std::optional<ManhattanMatch> best;
  for (const auto& p : profiles) {
    if (p.features.size() != features.size()) {
      throw std::invalid_argument("manhattan_classify: feature length " + std::to_string(features.size()) +
                                  " vs profile length " + std::to_string(p.features.size()));
    }
    double d = 0.0;
    for (std::size_t i = 0; i < features.size(); ++i) d += std::abs(features[i] - p.features[i]);
    if (!best || d < best->distance || (d == best->distance && p.user_id < best->user_id)) best = {p.user_id, d};
  }
  return *best;
}

// ---------------------------------------------------------------------------

std::string to_string(LstmInput m) {
  switch (m) {
    case LstmInput::kRawTemporal:
      return "raw_temporal";
    case LstmInput::kCharBertEmbed:
      return "charbert_embed";
    case LstmInput::kTempCharEmbed:
      return "tempchar_embed";
  }
  return "?";
}

LstmCellWeights LstmCellWeights::init(ParameterSet& p, const std::string& prefix, std::size_t in, std::size_t hidden,
                                      std::mt19937_64& rng) {
  LstmCellWeights w;
  auto make = [&](const char* g, Tensor& wi, Tensor& ui, Tensor& bi) {
    wi = p.add(prefix + "w_" + g, xavier_uniform(in, hidden, rng));
    ui = p.add(prefix + "u_" + g, xavier_uniform(hidden, hidden, rng));
    bi = p.add(prefix + "b_" + g, Tensor::zeros({hidden}));
  };
  make("i", w.w_i, w.u_i, w.b_i);
  make("f", w.w_f, w.u_f, w.b_f);
  make("o", w.w_o, w.u_o, w.b_o);
  make("g", w.w_g, w.u_g, w.b_g);
  return w;
}

LstmState lstm_step(const LstmCellWeights& w, const Tensor& x, const LstmState& s) {
  using namespace ops;
  auto gate = [&](const Tensor& wx, const Tensor& uh, const Tensor& b) {
    return add(linear(x, wx, b), matmul(s.h, uh));
  };
  Tensor i = sigmoid(gate(w.w_i, w.u_i, w.b_i));
  Tensor f = sigmoid(gate(w.w_f, w.u_f, w.b_f));
  Tensor o = sigmoid(gate(w.w_o, w.u_o, w.b_o));
  Tensor g = tanh(gate(w.w_g, w.u_g, w.b_g));
  Tensor c = add(mul(f, s.c), mul(i, g));
  return {mul(o, tanh(c)), c};
}

LstmClassifier LstmClassifier::create(const LstmConfig& cfg_in, std::uint64_t seed) {
  LstmClassifier m;
  m.cfg_ = cfg_in;
  if (m.cfg_.input == LstmInput::kRawTemporal) {
    if (m.cfg_.char_vocab < 2) throw std::invalid_argument("lstm: raw mode needs a character vocabulary");
    m.cfg_.input_dim = m.cfg_.char_embed_dim + 2;
  }
  if (m.cfg_.input_dim == 0 || m.cfg_.hidden_dim == 0 || m.cfg_.layers == 0) {
    throw std::invalid_argument("lstm: dimensions must be positive");
  }
  std::mt19937_64 rng(seed);
  if (m.cfg_.input == LstmInput::kRawTemporal) {
    m.char_table_ = m.params_.add("lstm.char_embed", normal_init(m.cfg_.char_vocab, m.cfg_.char_embed_dim, 0.02, rng));
  }
  for (std::size_t l = 0; l < m.cfg_.layers; ++l) {
    const std::size_t in = l == 0 ? m.cfg_.input_dim : m.cfg_.hidden_dim;
    m.cells_.push_back(
        LstmCellWeights::init(m.params_, "lstm.layers." + std::to_string(l) + ".", in, m.cfg_.hidden_dim, rng));
  }
  m.head_w_ = m.params_.add("lstm.head.w", xavier_uniform(m.cfg_.hidden_dim, m.cfg_.num_users, rng));
  m.head_b_ = m.params_.add("lstm.head.b", Tensor::zeros({m.cfg_.num_users}));
  return m;
}

Tensor LstmClassifier::raw_inputs(const TokenizedSequence& seq) const {
  if (cfg_.input != LstmInput::kRawTemporal) throw std::logic_error("lstm: raw_inputs on an embedding-mode model");
  std::vector<std::size_t> ids;
  std::vector<double> df;
  for (const auto& t : seq.tokens) {
    for (std::size_t j = 0; j < t.size(); ++j) {
      ids.push_back(t.char_ids[j]);
      df.push_back(t.d[j]);
      df.push_back(t.f[j]);
    }
  }
  if (ids.empty()) throw std::invalid_argument("lstm: sequence without keystrokes");
  const std::size_t n = ids.size();
  return ops::concat_cols({ops::gather_rows(char_table_, ids), Tensor::from({n, 2}, std::move(df))});
}

Tensor LstmClassifier::forward(const std::vector<Tensor>& inputs) const {
  if (inputs.empty()) throw std::invalid_argument("lstm: empty batch");
  std::vector<std::size_t> offsets, lengths;
  std::size_t total = 0;
  for (const auto& x : inputs) {
    if (x.rank() != 2 || x.cols() != cfg_.input_dim) {
      throw ShapeError("lstm: step width " + shape_str(x.shape()) + " does not match input_dim " +
                       std::to_string(cfg_.input_dim));
    }
    if (x.rows() == 0) throw std::invalid_argument("lstm: sequence without steps");
    offsets.push_back(total);
    lengths.push_back(x.rows());
    total += x.rows();
  }
  const std::size_t B = inputs.size();
  const std::size_t steps = *std::max_element(lengths.begin(), lengths.end());
  // Layer l consumes per-step outputs of layer l - 1.
  std::vector<Tensor> step_inputs;
  Tensor all = ops::concat_rows(inputs);
  std::vector<std::size_t> idx(B);
  std::vector<std::uint8_t> active(B);
  for (std::size_t j = 0; j < steps; ++j) {
    for (std::size_t b = 0; b < B; ++b) idx[b] = offsets[b] + std::min(j, lengths[b] - 1);
    step_inputs.push_back(ops::gather_rows(all, idx));
  }
  Tensor h;
  for (const auto& cell : cells_) {
    LstmState s{Tensor::zeros({B, cfg_.hidden_dim}), Tensor::zeros({B, cfg_.hidden_dim})};
    std::vector<Tensor> outputs;
    for (std::size_t j = 0; j < steps; ++j) {
      bool all_active = true;
      for (std::size_t b = 0; b < B; ++b) {
        active[b] = j < lengths[b];
        all_active = all_active && active[b];
      }
      LstmState next = lstm_step(cell, step_inputs[j], s);
      if (all_active) {
        s = std::move(next);
      } else {
        s = {ops::select_rows(active, next.h, s.h), ops::select_rows(active, next.c, s.c)};
      }
      outputs.push_back(s.h);
    }
    step_inputs = std::move(outputs);
    h = s.h;
  }
  return ops::linear(h, head_w_, head_b_);
}

Tensor token_features(const TempCharEncoder& encoder, const TokenizedSequence& seq, bool use_temporal) {
  NoGradGuard ng;
  std::vector<const Token*> toks;
  for (const auto& t : seq.tokens)
    if (!t.char_ids.empty()) toks.push_back(&t);
  if (toks.empty()) throw std::invalid_argument("token_features: sequence without character tokens");
  return encoder.encode_tokens(toks, use_temporal).detach();
}

double train_eval_lstm(LstmInput mode, const DatasetSplit& split, const Model* frozen_source, const TrainOptions& opts,
                       std::size_t hidden, std::uint64_t seed) {
  LstmConfig cfg;
  cfg.input = mode;
  cfg.hidden_dim = hidden;
  cfg.num_users = split.roster.size();
  cfg.char_vocab = split.vocab.char_count();
  bool use_temporal = false;
  if (mode != LstmInput::kRawTemporal) {
    if (frozen_source == nullptr) throw std::invalid_argument("lstm: embedding mode requires a trained encoder");
    cfg.input_dim = frozen_source->encoder().output_dim();
    use_temporal = mode == LstmInput::kTempCharEmbed;
  }
  auto lstm = LstmClassifier::create(cfg, seed);

  auto features = [&](const std::vector<TokenizedSequence>& seqs) {
    std::vector<Tensor> out;
    if (mode != LstmInput::kRawTemporal) {
      for (const auto& s : seqs) out.push_back(token_features(frozen_source->encoder(), s, use_temporal));
    }
    return out;
  };
  const auto train_feats = features(split.train);
  const auto test_feats = features(split.test);

  auto batch_inputs = [&](const std::vector<TokenizedSequence>& seqs, const std::vector<Tensor>& feats,
                          std::span<const std::size_t> b) {
    std::vector<Tensor> in;
    for (auto i : b) in.push_back(mode == LstmInput::kRawTemporal ? lstm.raw_inputs(seqs[i]) : feats[i]);
    return in;
  };

  fit_classifier(lstm.params(), split.train.size(), split.train_labels, opts,
                 [&](std::span<const std::size_t> b, bool, std::mt19937_64&) {
                   return lstm.forward(batch_inputs(split.train, train_feats, b));
                 });

  NoGradGuard ng;
  std::vector<std::size_t> preds;
  for (std::size_t start = 0; start < split.test.size(); start += 32) {
    std::vector<std::size_t> b;
    for (std::size_t i = start; i < std::min(split.test.size(), start + 32); ++i) b.push_back(i);
    const Tensor logits = lstm.forward(batch_inputs(split.test, test_feats, b));
    const std::size_t k = logits.cols();
    for (std::size_t i = 0; i < b.size(); ++i) {
      auto row = logits.data().subspan(i * k, k);
      preds.push_back(static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
  }
  return accuracy(preds, split.test_labels);
}

// ---------------------------------------------------------------------------

nlohmann::json ComparativeReport::to_json() const {
  nlohmann::json j;
  j["split_hash"] = split_hash;
  j["seed"] = seed;
  j["order"] = order;
  nlohmann::json r = nlohmann::json::object();
  for (const auto& [name, row] : rows) {
    r[name] = {{"accuracy", row.accuracy}};
    r[name]["eer"] = row.eer ? nlohmann::json(*row.eer) : nlohmann::json(nullptr);
  }
  j["rows"] = r;
  return j;
}

ComparativeReport run_baseline_suite(const SuiteInputs& in, const SuiteOptions& opts) {
  if (in.raw == nullptr || in.prepared == nullptr) throw std::invalid_argument("baseline suite: split not provided");
  if (in.raw->hash() != in.prepared->split_hash) {
    throw std::invalid_argument("baseline suite: raw and prepared splits differ (hash mismatch)");
  }
  const auto& rows = baseline_row_names();
  for (const auto& r : opts.rows) {
    if (std::find(rows.begin(), rows.end(), r) == rows.end())
      throw std::invalid_argument("baseline suite: unknown row '" + r + "'");
    if ((r == "charbert" || r == "lstm_charbert") && in.charbert == nullptr) {
      throw std::invalid_argument("baseline suite: missing model for requested row '" + r + "'");
    }
    if ((r == "tempchar" || r == "lstm_tempchar") && in.tempchar == nullptr) {
      throw std::invalid_argument("baseline suite: missing model for requested row '" + r + "'");
    }
  }
  const DatasetSplit& split = *in.prepared;
  ComparativeReport rep;
  rep.split_hash = hex64(split.split_hash);
  rep.seed = opts.seed;
  for (const auto& r : opts.rows) {
    RowResult row;
    if (r == "charbert" || r == "tempchar") {
      const auto ev = evaluate(r == "charbert" ? *in.charbert : *in.tempchar, split);
      row.accuracy = ev.accuracy;
      row.eer = ev.eer;
    } else if (r == "manhattan") {
      const auto profiles = build_manhattan_profiles(in.raw->train);
      std::size_t hit = 0;
      for (const auto& s : in.raw->test)
        hit += manhattan_classify(manhattan_features(s), profiles).user_id == s.user_id;
      row.accuracy = static_cast<double>(hit) / static_cast<double>(in.raw->test.size());
    } else if (r == "lstm") {
      row.accuracy =
          train_eval_lstm(LstmInput::kRawTemporal, split, nullptr, opts.lstm_train, opts.lstm_hidden, opts.seed);
    } else if (r == "lstm_charbert") {
      row.accuracy =
          train_eval_lstm(LstmInput::kCharBertEmbed, split, in.charbert, opts.lstm_train, opts.lstm_hidden, opts.seed);
    } else {
      row.accuracy =
          train_eval_lstm(LstmInput::kTempCharEmbed, split, in.tempchar, opts.lstm_train, opts.lstm_hidden, opts.seed);
    }
    rep.rows[r] = row;
    rep.order.push_back(r);
  }
  return rep;
}

}  // namespace tckd
