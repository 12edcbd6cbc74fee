// SPDX-License-Identifier: Apache-2.0
#include "tckd/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

namespace tckd {

namespace {

void fnv_mix(std::uint64_t& h, const std::string& s) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  h ^= 0xff;
  h *= 0x100000001b3ULL;
}

}  // namespace

std::uint64_t SampleSplit::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  fnv_mix(h, "train");
  for (const auto& s : train) {
    fnv_mix(h, s.user_id);
    fnv_mix(h, s.session_id);
  }
  fnv_mix(h, "test");
  for (const auto& s : test) {
    fnv_mix(h, s.user_id);
    fnv_mix(h, s.session_id);
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

SampleSplit split_dataset(const std::vector<KeystrokeSample>& samples, double test_ratio, std::uint64_t seed) {
  if (!(test_ratio > 0.0 && test_ratio < 1.0))
    throw std::invalid_argument("split_dataset: test_ratio must be in (0, 1)");
  std::map<std::string, std::vector<std::size_t>> by_user;
  for (std::size_t i = 0; i < samples.size(); ++i) by_user[samples[i].user_id].push_back(i);

  SampleSplit out;
  std::vector<std::uint8_t> is_test(samples.size(), 0);
  std::mt19937_64 rng(seed);
  for (auto& [user, idx] : by_user) {
    if (idx.size() < 2) {
      throw DataError("split_dataset: user '" + user + "' has " + std::to_string(idx.size()) +
                      " sample(s); at least 2 are required");
    }
    out.roster.push_back(user);
    auto n_test = static_cast<std::size_t>(std::ceil(test_ratio * static_cast<double>(idx.size()) - 1e-9));
    n_test = std::clamp<std::size_t>(n_test, 1, idx.size() - 1);
    std::vector<std::size_t> order = idx;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t k = 0; k < n_test; ++k) is_test[order[k]] = 1;
  }
  for (std::size_t i = 0; i < samples.size(); ++i) (is_test[i] ? out.test : out.train).push_back(samples[i]);
  return out;
}

std::size_t DatasetSplit::label_of(const std::string& user) const {
  auto it = std::lower_bound(roster.begin(), roster.end(), user);
  if (it == roster.end() || *it != user) throw DataError("unknown user '" + user + "'");
  return static_cast<std::size_t>(it - roster.begin());
}

DatasetSplit prepare_split(const SampleSplit& raw, const Vocabulary& vocab, const NormStats& stats) {
  DatasetSplit out;
  out.roster = raw.roster;
  out.vocab = vocab;
  out.stats = stats;
  out.split_hash = raw.hash();
  for (const auto& s : raw.train) {
    out.train.push_back(tokenize_align(s, vocab, stats));
    out.train_labels.push_back(out.label_of(s.user_id));
  }
  for (const auto& s : raw.test) {
    out.test.push_back(tokenize_align(s, vocab, stats));
    out.test_labels.push_back(out.label_of(s.user_id));
  }
  return out;
}

DatasetSplit prepare_split(const SampleSplit& raw, std::size_t max_subwords) {
  std::vector<std::u32string> corpus;
  for (const auto& s : raw.train) corpus.push_back(s.text());
  return prepare_split(raw, build_vocab(corpus, max_subwords), compute_norm_stats(raw.train));
}

}  // namespace tckd
