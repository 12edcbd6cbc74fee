// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tckd/keystroke.hpp"
#include "tckd/tokenizer.hpp"

namespace tckd {

/// Raw per-user stratified split.
struct SampleSplit {
  std::vector<KeystrokeSample> train;
  std::vector<KeystrokeSample> test;
  std::vector<std::string> roster;  // sorted user ids; index = class label

  /// FNV-1a over the (user, session) identities of both sides.
  std::uint64_t hash() const;
};

/// ceil(test_ratio * n) samples of every user go to test. Users with fewer
/// than two samples are rejected. Sample order within each side follows the
/// input order.
SampleSplit split_dataset(const std::vector<KeystrokeSample>& samples, double test_ratio, std::uint64_t seed);

/// Tokenized split ready for training; vocabulary and normalization come
/// from the train side only.
struct DatasetSplit {
  std::vector<TokenizedSequence> train;
  std::vector<TokenizedSequence> test;
  std::vector<std::string> roster;
  std::vector<std::size_t> train_labels;
  std::vector<std::size_t> test_labels;
  Vocabulary vocab;
  NormStats stats;
  std::uint64_t split_hash = 0;

  std::size_t label_of(const std::string& user) const;
};

DatasetSplit prepare_split(const SampleSplit& raw, std::size_t max_subwords);
/// Tokenizes against an existing vocabulary and statistics (evaluation of a
/// stored model).
DatasetSplit prepare_split(const SampleSplit& raw, const Vocabulary& vocab, const NormStats& stats);

std::string hex64(std::uint64_t v);

}  // namespace tckd
