// SPDX-License-Identifier: Apache-2.0
#include "tckd/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "tckd/ops.hpp"

namespace tckd {

void to_json(nlohmann::json& j, const TrainOptions& o) {
  j = nlohmann::json{
      {"batch_size", o.batch_size}, {"epochs", o.epochs}, {"learning_rate", o.learning_rate}, {"seed", o.seed}};
}

void from_json(const nlohmann::json& j, TrainOptions& o) {
  TrainOptions d;
  o.batch_size = j.value("batch_size", d.batch_size);
  o.epochs = j.value("epochs", d.epochs);
  o.learning_rate = j.value("learning_rate", d.learning_rate);
  o.seed = j.value("seed", d.seed);
  if (o.batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");
  if (!(o.learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate must be positive");
}

namespace {

std::vector<const TokenizedSequence*> gather(const std::vector<TokenizedSequence>& seqs,
                                             std::span<const std::size_t> idx) {
  std::vector<const TokenizedSequence*> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(&seqs[i]);
  return out;
}

template <typename F>
void for_batches(std::size_t n, std::size_t batch, F f) {
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += batch) {
    idx.clear();
    for (std::size_t i = start; i < std::min(n, start + batch); ++i) idx.push_back(i);
    f(std::span<const std::size_t>(idx));
  }
}

}  // namespace

TrainHistory fit_classifier(ParameterSet trainable, std::size_t num_samples, std::span<const std::size_t> labels,
                            const TrainOptions& opts, const LogitsFn& logits) {
  if (num_samples == 0) throw std::invalid_argument("train: empty training set");
  if (labels.size() != num_samples) throw std::invalid_argument("train: label count mismatch");
  if (opts.batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");
  TrainHistory hist;
  std::mt19937_64 rng(opts.seed);
  {
    NoGradGuard ng;
    double total = 0.0;
    for_batches(num_samples, 64, [&](std::span<const std::size_t> b) {
      std::vector<std::size_t> lab;
      for (auto i : b) lab.push_back(labels[i]);
      total += ops::cross_entropy(logits(b, false, rng), lab).item() * static_cast<double>(b.size());
    });
    hist.initial_loss = total / static_cast<double>(num_samples);
  }

  AdamState adam(opts.adam());
  trainable.zero_grad();
  std::vector<std::size_t> order(num_samples);
  std::vector<std::size_t> batch, lab;
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t start = 0; start < num_samples; start += opts.batch_size) {
      batch.assign(order.begin() + start, order.begin() + std::min(num_samples, start + opts.batch_size));
      lab.clear();
      for (auto i : batch) lab.push_back(labels[i]);
      clear_tape();
      Tensor loss = ops::cross_entropy(logits(batch, true, rng), lab);
      const double v = loss.item();
      if (!std::isfinite(v)) {
        clear_tape();
        throw DivergenceError("training diverged: loss is " + std::to_string(v) + " at epoch " + std::to_string(epoch));
      }
      backward(loss);
      adam_step(trainable, adam);
      sum += v;
      ++count;
      ++hist.steps;
    }
    hist.epoch_loss.push_back(sum / static_cast<double>(count));
  }
  return hist;
}

TrainHistory train_classifier(Model& model, const std::vector<TokenizedSequence>& seqs,
                              std::span<const std::size_t> labels, const TrainOptions& opts) {
  for (auto l : labels) {
    if (l >= model.config().num_users) throw std::invalid_argument("train: label exceeds model head size");
  }
  return fit_classifier(model.trainable(), seqs.size(), labels, opts,
                        [&](std::span<const std::size_t> b, bool training, std::mt19937_64& rng) {
                          ForwardOptions fo;
                          fo.training = training;
                          fo.rng = &rng;
                          return model.forward(gather(seqs, b), fo).logits;
                        });
}

std::vector<std::size_t> predict(const Model& model, const std::vector<TokenizedSequence>& seqs,
                                 std::size_t batch_size) {
  NoGradGuard ng;
  std::vector<std::size_t> out;
  for_batches(seqs.size(), batch_size, [&](std::span<const std::size_t> b) {
    const Tensor logits = model.forward(gather(seqs, b)).logits;
    const std::size_t k = logits.cols();
    for (std::size_t i = 0; i < b.size(); ++i) {
      auto row = logits.data().subspan(i * k, k);
      out.push_back(static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
  });
  return out;
}

std::vector<std::vector<double>> pooled_embeddings(const Model& model, const std::vector<TokenizedSequence>& seqs,
                                                   std::size_t batch_size) {
  NoGradGuard ng;
  std::vector<std::vector<double>> out;
  for_batches(seqs.size(), batch_size, [&](std::span<const std::size_t> b) {
    const Tensor pooled = model.forward(gather(seqs, b)).pooled;
    const std::size_t d = pooled.cols();
    for (std::size_t i = 0; i < b.size(); ++i) {
      auto row = pooled.data().subspan(i * d, d);
      out.emplace_back(row.begin(), row.end());
    }
  });
  return out;
}

double mean_loss(const Model& model, const std::vector<TokenizedSequence>& seqs, std::span<const std::size_t> labels,
                 std::size_t batch_size) {
  NoGradGuard ng;
  double total = 0.0;
  for_batches(seqs.size(), batch_size, [&](std::span<const std::size_t> b) {
    std::vector<std::size_t> lab;
    for (auto i : b) lab.push_back(labels[i]);
    total += ops::cross_entropy(model.forward(gather(seqs, b)).logits, lab).item() * static_cast<double>(b.size());
  });
  return total / static_cast<double>(seqs.size());
}

double accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> labels) {
  if (preds.size() != labels.size()) throw std::invalid_argument("accuracy: length mismatch");
  if (preds.empty()) throw std::invalid_argument("accuracy: empty input");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(preds.size());
}

// ---------------------------------------------------------------------------

namespace {

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

UserTemplate enroll(const std::string& user_id, const std::vector<std::vector<double>>& embeddings) {
  if (embeddings.empty()) throw std::invalid_argument("enroll: no enrollment samples for '" + user_id + "'");
  const std::size_t d = embeddings.front().size();
  std::vector<double> c(d, 0.0);
  for (const auto& e : embeddings) {
    if (e.size() != d) throw std::invalid_argument("enroll: embedding width mismatch");
    for (std::size_t i = 0; i < d; ++i) c[i] += e[i];
  }
  for (auto& x : c) x /= static_cast<double>(embeddings.size());
  const double n = norm2(c);
  if (n == 0.0) throw std::domain_error("enroll: zero-norm centroid for '" + user_id + "'");
  for (auto& x : c) x /= n;
  return {user_id, std::move(c), embeddings.size()};
}

UserTemplate enroll(const Model& model, const std::string& user_id, const std::vector<TokenizedSequence>& samples) {
  if (samples.empty()) throw std::invalid_argument("enroll: no enrollment samples for '" + user_id + "'");
  return enroll(user_id, pooled_embeddings(model, samples));
}

double verify(std::span<const double> embedding, const UserTemplate& tmpl) {
  if (embedding.size() != tmpl.centroid.size()) throw std::invalid_argument("verify: width mismatch");
  const double n = norm2(embedding);
  if (n == 0.0) throw std::domain_error("verify: zero-norm embedding");
  double dot = 0.0;
  for (std::size_t i = 0; i < embedding.size(); ++i) dot += embedding[i] * tmpl.centroid[i];
  return std::clamp(dot / n, -1.0, 1.0);
}

double verify(const Model& model, const TokenizedSequence& sample, const UserTemplate& tmpl) {
  const auto e = pooled_embeddings(model, {sample});
  return verify(e.front(), tmpl);
}

EerResult compute_eer(const ScoreSet& scores) {
  if (scores.genuine.empty() || scores.impostor.empty()) {
    throw std::invalid_argument("compute_eer: genuine and impostor scores must both be non-empty");
  }
  std::vector<double> gen = scores.genuine, imp = scores.impostor;
  std::sort(gen.begin(), gen.end());
  std::sort(imp.begin(), imp.end());
  std::vector<double> all(gen);
  all.insert(all.end(), imp.begin(), imp.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());

  std::vector<double> candidates;
  candidates.reserve(2 * all.size() + 1);
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (i > 0) candidates.push_back(all[i - 1] + (all[i] - all[i - 1]) / 2.0);
    candidates.push_back(all[i]);
  }
  candidates.push_back(all.back() + 1.0);

  const auto ng = static_cast<long long>(gen.size());
  const auto ni = static_cast<long long>(imp.size());
  std::size_t gi = 0, ii = 0;  // gen[0..gi) < t ; imp[0..ii) < t
  long long best = -1;
  EerResult res;
  for (double t : candidates) {
    while (gi < gen.size() && gen[gi] < t) ++gi;
    while (ii < imp.size() && imp[ii] < t) ++ii;
    const long long false_accepts = ni - static_cast<long long>(ii);
    const long long false_rejects = static_cast<long long>(gi);
    // |FA/ni - FR/ng| compared exactly in integers.
    const long long gap = std::llabs(false_accepts * ng - false_rejects * ni);
    if (best < 0 || gap < best) {
      best = gap;
      res.threshold = t;
      res.far = static_cast<double>(false_accepts) / static_cast<double>(ni);
      res.frr = static_cast<double>(false_rejects) / static_cast<double>(ng);
      res.eer = (res.far + res.frr) / 2.0;
    }
  }
  return res;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["mode"] = mode;
  j["accuracy"] = accuracy;
  j["eer"] = eer;
  j["eer_threshold"] = eer_threshold;
  j["num_genuine"] = num_genuine;
  j["num_impostor"] = num_impostor;
  j["split_hash"] = split_hash;
  j["truncated_sequences"] = truncated;
  j["protocol"] = {{"name", kAuthProtocol},
                   {"enrollment", "all train-split samples of the claimed user"},
                   {"score", "cosine(pooled embedding, unit centroid)"},
                   {"eer_pooling", "global over all users"}};
  nlohmann::json pu = nlohmann::json::object();
  for (const auto& [user, b] : per_user) {
    pu[user] = {
        {"test_samples", b.test_samples},
        {"correct", b.correct},
        {"accuracy", b.test_samples ? static_cast<double>(b.correct) / static_cast<double>(b.test_samples) : 0.0},
        {"enrolled", b.enrolled},
        {"mean_genuine_score", b.mean_genuine_score}};
  }
  j["per_user"] = pu;
  j["confusion"] = confusion;
  return j;
}

AuthResult evaluate_authentication(const Model& model, const DatasetSplit& split) {
  AuthResult out;
  const auto train_emb = pooled_embeddings(model, split.train);
  const auto test_emb = pooled_embeddings(model, split.test);
  std::vector<UserTemplate> templates;
  for (std::size_t u = 0; u < split.roster.size(); ++u) {
    std::vector<std::vector<double>> mine;
    for (std::size_t i = 0; i < split.train.size(); ++i)
      if (split.train_labels[i] == u) mine.push_back(train_emb[i]);
    if (mine.empty())
      throw std::invalid_argument("evaluate_authentication: user '" + split.roster[u] + "' missing from train split");
    templates.push_back(enroll(split.roster[u], mine));
    out.per_user[split.roster[u]].enrolled = mine.size();
  }
  for (std::size_t i = 0; i < split.test.size(); ++i) {
    for (std::size_t u = 0; u < templates.size(); ++u) {
      const double s = verify(test_emb[i], templates[u]);
      if (split.test_labels[i] == u) {
        out.scores.genuine.push_back(s);
        out.per_user[split.roster[u]].mean_genuine_score += s;
      } else {
        out.scores.impostor.push_back(s);
      }
    }
  }
  for (std::size_t i = 0; i < split.test.size(); ++i) out.per_user[split.roster[split.test_labels[i]]].test_samples++;
  for (auto& [_, b] : out.per_user)
    if (b.test_samples) b.mean_genuine_score /= static_cast<double>(b.test_samples);
  out.eer = compute_eer(out.scores);
  return out;
}

EvalReport evaluate(const Model& model, const DatasetSplit& split) {
  EvalReport r;
  r.mode = to_string(model.config().mode);
  r.split_hash = hex64(split.split_hash);
  const auto preds = predict(model, split.test);
  r.accuracy = accuracy(preds, split.test_labels);
  r.confusion.assign(split.roster.size(), std::vector<std::size_t>(split.roster.size(), 0));
  for (std::size_t i = 0; i < preds.size(); ++i) r.confusion[split.test_labels[i]][preds[i]]++;
  for (const auto& seq : split.test) r.truncated += seq.tokens.size() > model.config().max_seq_len;

  auto auth = evaluate_authentication(model, split);
  r.eer = auth.eer.eer;
  r.eer_threshold = auth.eer.threshold;
  r.num_genuine = auth.scores.genuine.size();
  r.num_impostor = auth.scores.impostor.size();
  r.per_user = std::move(auth.per_user);
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i] == split.test_labels[i]) r.per_user[split.roster[split.test_labels[i]]].correct++;
  return r;
}

IdentificationRun train_identification(Model& model, const DatasetSplit& split, const TrainOptions& opts) {
  if (split.roster.size() != model.config().num_users) {
    throw std::invalid_argument("train_identification: split has " + std::to_string(split.roster.size()) +
                                " users but model head has " + std::to_string(model.config().num_users));
  }
  IdentificationRun run;
  run.history = train_classifier(model, split.train, split.train_labels, opts);
  run.report = evaluate(model, split);
  return run;
}

void export_embeddings(const Model& model, const std::vector<TokenizedSequence>& samples,
                       const std::filesystem::path& path) {
  const auto emb = pooled_embeddings(model, samples);
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::ios_base::failure("cannot open for writing: " + path.string());
  os << "user_id";
  for (std::size_t k = 0; k < model.config().hidden_size; ++k) os << ",e" << k;
  os << '\n';
  for (std::size_t i = 0; i < samples.size(); ++i) {
    os << samples[i].user_id;
    for (double v : emb[i]) os << ',' << format_double(v);
    os << '\n';
  }
  if (!os) throw std::ios_base::failure("write failed: " + path.string());
}

}  // namespace tckd
