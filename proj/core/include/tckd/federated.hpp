// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tckd/dataset.hpp"
#include "tckd/model.hpp"
#include "tckd/parameters.hpp"
#include "tckd/tasks.hpp"

namespace tckd {

enum class PartitionPolicy { kByUser, kIidShards };
PartitionPolicy parse_partition_policy(const std::string& s);
std::string to_string(PartitionPolicy p);

struct FedConfig {
  std::size_t num_clients = 100;
  double sample_ratio = 0.1;
  std::size_t rounds = 5;
  std::size_t local_epochs = 1;
  std::uint64_t seed = 0;
  PartitionPolicy partition = PartitionPolicy::kByUser;
  bool parallel = false;

  void validate() const;
  std::size_t clients_per_round() const;
};

void to_json(nlohmann::json& j, const FedConfig& c);
void from_json(const nlohmann::json& j, FedConfig& c);

struct ClientShard {
  std::size_t client_id = 0;
  std::vector<std::size_t> indices;  // into split.train, in train order
  std::size_t sample_count() const { return indices.size(); }
};

/// Disjoint shards covering every train sample. by_user keeps each user on
/// one client; iid_shards shuffles samples and cuts near-equal chunks.
std::vector<ClientShard> partition(const DatasetSplit& split, PartitionPolicy policy, std::size_t num_clients,
                                   std::uint64_t seed);

struct ClientResult {
  std::size_t client_id = 0;
  ParameterSet params;
  std::size_t sample_count = 0;
  double final_loss = 0.0;
};

/// Per-client training seed. Round 0, client 0 maps to `seed` itself.
std::uint64_t client_seed(std::uint64_t seed, std::size_t round, std::size_t client_id);

/// Trains a private copy of `global` on the shard; `global` is untouched.
ClientResult client_update(const Model& global, const DatasetSplit& split, const ClientShard& shard,
                           std::size_t local_epochs, const TrainOptions& hyper);

/// Sample-count-weighted mean, accumulated in ascending client-id order.
ParameterSet fedavg_aggregate(std::vector<ClientResult> results);

struct ClientRoundStat {
  std::size_t client_id = 0;
  std::size_t sample_count = 0;
  double final_loss = 0.0;
};

struct RoundReport {
  std::size_t round = 0;
  std::vector<std::size_t> selected;
  std::vector<ClientRoundStat> clients;
  double test_accuracy = 0.0;

  nlohmann::json to_json() const;
};

/// Runs cfg.rounds rounds on `global` in place and returns one report per round.
std::vector<RoundReport> run_rounds(const FedConfig& cfg, Model& global, const DatasetSplit& split,
                                    const std::vector<ClientShard>& shards, const TrainOptions& hyper);

}  // namespace tckd
