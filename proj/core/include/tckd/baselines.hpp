// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tckd/dataset.hpp"
#include "tckd/encoder.hpp"
#include "tckd/model.hpp"
#include "tckd/parameters.hpp"
#include "tckd/tasks.hpp"

namespace tckd {

// ---------------------------------------------------------------------------
// Manhattan distance

/// Per key class (letter, space, other) mean hold and mean flight, then the
/// sample's overall hold mean/std and flight mean/std. Raw milliseconds.
inline constexpr std::size_t kManhattanFeatures = 10;
std::vector<double> manhattan_features(const KeystrokeSample& sample);

struct ManhattanProfile {
  std::string user_id;
  std::vector<double> features;
};

/// One profile per user: mean feature vector over that user's train samples.
std::vector<ManhattanProfile> build_manhattan_profiles(const std::vector<KeystrokeSample>& train);

struct ManhattanMatch {
  std::string user_id;
  double distance = 0.0;
};

/// argmin of L1 distance; ties go to the lexicographically smallest user id.
ManhattanMatch manhattan_classify(const std::vector<double>& features, const std::vector<ManhattanProfile>& profiles);

// ---------------------------------------------------------------------------
// LSTM sequence classifier

enum class LstmInput { kRawTemporal, kCharBertEmbed, kTempCharEmbed };
std::string to_string(LstmInput m);

struct LstmConfig {
  LstmInput input = LstmInput::kRawTemporal;
  std::size_t input_dim = 0;  // derived for raw mode: char_embed_dim + 2
  std::size_t hidden_dim = 64;
  std::size_t layers = 1;
  std::size_t num_users = 2;
  std::size_t char_vocab = 0;       // raw mode only
  std::size_t char_embed_dim = 16;  // raw mode only
};

struct LstmCellWeights {
  Tensor w_i, u_i, b_i;
  Tensor w_f, u_f, b_f;
  Tensor w_o, u_o, b_o;
  Tensor w_g, u_g, b_g;

  static LstmCellWeights init(ParameterSet& p, const std::string& prefix, std::size_t in, std::size_t hidden,
                              std::mt19937_64& rng);
};

struct LstmState {
  Tensor h;
  Tensor c;
};

/// i, f, o = sigmoid(xW + hU + b); g = tanh(xW_g + hU_g + b_g);
/// c' = f*c + i*g; h' = o*tanh(c').
LstmState lstm_step(const LstmCellWeights& w, const Tensor& x, const LstmState& s);

class LstmClassifier {
 public:
  static LstmClassifier create(const LstmConfig& cfg, std::uint64_t seed);

  const LstmConfig& config() const { return cfg_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  const LstmCellWeights& cell(std::size_t layer) const { return cells_.at(layer); }

  /// Per-step inputs for raw mode: [n_chars x (char_embed + 2)] built from
  /// the learned character table and the normalized (d, f) of every key.
  Tensor raw_inputs(const TokenizedSequence& seq) const;

  /// Final hidden state of each sequence through a linear head:
  /// [batch x num_users]. Each input is [steps x input_dim], steps >= 1.
  Tensor forward(const std::vector<Tensor>& inputs) const;

 private:
  LstmConfig cfg_;
  ParameterSet params_;
  Tensor char_table_;
  std::vector<LstmCellWeights> cells_;
  Tensor head_w_, head_b_;
};

/// Frozen encoder features: one 2H row per non-special token.
Tensor token_features(const TempCharEncoder& encoder, const TokenizedSequence& seq, bool use_temporal);

// ---------------------------------------------------------------------------
// Comparative suite

inline const std::vector<std::string>& baseline_row_names() {
  static const std::vector<std::string> rows = {"charbert",  "tempchar",      "lstm",
                                                "manhattan", "lstm_charbert", "lstm_tempchar"};
  return rows;
}

struct SuiteInputs {
  const SampleSplit* raw = nullptr;
  const DatasetSplit* prepared = nullptr;
  const Model* charbert = nullptr;  // trained char_only model
  const Model* tempchar = nullptr;  // trained temp_char model
};

struct SuiteOptions {
  std::vector<std::string> rows = baseline_row_names();
  TrainOptions lstm_train;
  std::size_t lstm_hidden = 64;
  std::uint64_t seed = 0;
};

struct RowResult {
  double accuracy = 0.0;
  std::optional<double> eer;
};

struct ComparativeReport {
  std::map<std::string, RowResult> rows;
  std::vector<std::string> order;
  std::string split_hash;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
};

/// Evaluates every requested row on the single pinned split.
ComparativeReport run_baseline_suite(const SuiteInputs& in, const SuiteOptions& opts);

/// Trains an LSTM over the given mode's inputs and returns test accuracy.
double train_eval_lstm(LstmInput mode, const DatasetSplit& split, const Model* frozen_source, const TrainOptions& opts,
                       std::size_t hidden, std::uint64_t seed);

}  // namespace tckd
