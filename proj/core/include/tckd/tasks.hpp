// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tckd/dataset.hpp"
#include "tckd/model.hpp"
#include "tckd/parameters.hpp"

namespace tckd {

/// Loss became NaN or infinite.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainOptions {
  std::size_t batch_size = 8;
  std::size_t epochs = 5;
  double learning_rate = 5e-5;
  std::uint64_t seed = 0;
  AdamOptions adam() const {
    AdamOptions o;
    o.learning_rate = learning_rate;
    return o;
  }
};

void to_json(nlohmann::json& j, const TrainOptions& o);
void from_json(const nlohmann::json& j, TrainOptions& o);

struct TrainHistory {
  double initial_loss = 0.0;       // eval-mode mean loss before the first step
  std::vector<double> epoch_loss;  // mean minibatch loss per epoch
  std::size_t steps = 0;
};

/// Produces logits [batch x classes] for the given sample indices.
using LogitsFn = std::function<Tensor(std::span<const std::size_t> batch, bool training, std::mt19937_64& rng)>;

/// Minibatch Adam on mean cross-entropy. Shuffles every epoch from an engine
/// seeded with opts.seed; identical inputs give bit-identical parameters.
TrainHistory fit_classifier(ParameterSet trainable, std::size_t num_samples, std::span<const std::size_t> labels,
                            const TrainOptions& opts, const LogitsFn& logits);

TrainHistory train_classifier(Model& model, const std::vector<TokenizedSequence>& seqs,
                              std::span<const std::size_t> labels, const TrainOptions& opts);

/// Eval-mode predictions and pooled embeddings.
std::vector<std::size_t> predict(const Model& model, const std::vector<TokenizedSequence>& seqs,
                                 std::size_t batch_size = 32);
std::vector<std::vector<double>> pooled_embeddings(const Model& model, const std::vector<TokenizedSequence>& seqs,
                                                   std::size_t batch_size = 32);
double mean_loss(const Model& model, const std::vector<TokenizedSequence>& seqs, std::span<const std::size_t> labels,
                 std::size_t batch_size = 32);

double accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> labels);

// ---------------------------------------------------------------------------
// Authentication

struct UserTemplate {
  std::string user_id;
  std::vector<double> centroid;  // unit norm
  std::size_t enrollment_count = 0;
};

/// centroid = normalize(mean(embeddings)).
UserTemplate enroll(const std::string& user_id, const std::vector<std::vector<double>>& embeddings);
UserTemplate enroll(const Model& model, const std::string& user_id, const std::vector<TokenizedSequence>& samples);

/// Cosine similarity between an embedding and a template centroid.
double verify(std::span<const double> embedding, const UserTemplate& tmpl);
double verify(const Model& model, const TokenizedSequence& sample, const UserTemplate& tmpl);

struct ScoreSet {
  std::vector<double> genuine;
  std::vector<double> impostor;
};

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
  double far = 0.0;
  double frr = 0.0;
};

/// Sweeps every score, every midpoint between neighbouring distinct scores,
/// and one point above the maximum. FAR(t) = share of impostors >= t,
/// FRR(t) = share of genuines < t. Picks the lowest threshold minimizing
/// |FAR - FRR| and reports (FAR + FRR) / 2 there.
EerResult compute_eer(const ScoreSet& scores);

inline constexpr const char* kAuthProtocol = "centroid-cosine-v1";

struct UserBreakdown {
  std::size_t test_samples = 0;
  std::size_t correct = 0;
  std::size_t enrolled = 0;
  double mean_genuine_score = 0.0;
};

struct EvalReport {
  std::string mode;
  double accuracy = 0.0;
  double eer = 0.0;
  double eer_threshold = 0.0;
  std::size_t num_genuine = 0;
  std::size_t num_impostor = 0;
  std::map<std::string, UserBreakdown> per_user;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::string split_hash;
  std::size_t truncated = 0;

  nlohmann::json to_json() const;
};

struct AuthResult {
  ScoreSet scores;
  EerResult eer;
  std::map<std::string, UserBreakdown> per_user;
};

/// Enroll every roster user on their train samples, score every test sample
/// against every template (own = genuine, others = impostor), pool all scores
/// into one EER.
AuthResult evaluate_authentication(const Model& model, const DatasetSplit& split);

/// Identification and authentication on the test side of `split`.
EvalReport evaluate(const Model& model, const DatasetSplit& split);

struct IdentificationRun {
  TrainHistory history;
  EvalReport report;
};

IdentificationRun train_identification(Model& model, const DatasetSplit& split, const TrainOptions& opts);

/// CSV "user_id,e0,...,e{D-1}" of pooled embeddings, one row per sample.
void export_embeddings(const Model& model, const std::vector<TokenizedSequence>& samples,
                       const std::filesystem::path& path);

}  // namespace tckd
