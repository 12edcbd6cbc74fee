// SPDX-License-Identifier: Apache-2.0
#include "tckd/federated.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <random>
#include <stdexcept>
#include <thread>

namespace tckd {

PartitionPolicy parse_partition_policy(const std::string& s) {
  if (s == "by_user") return PartitionPolicy::kByUser;
  if (s == "iid_shards") return PartitionPolicy::kIidShards;
  throw std::invalid_argument("unknown partition policy '" + s + "' (expected by_user or iid_shards)");
}

std::string to_string(PartitionPolicy p) { return p == PartitionPolicy::kByUser ? "by_user" : "iid_shards"; }

void FedConfig::validate() const {
  if (num_clients == 0) throw std::invalid_argument("fed: num_clients must be positive");
  if (!(sample_ratio > 0.0 && sample_ratio <= 1.0)) throw std::invalid_argument("fed: sample_ratio must be in (0, 1]");
  if (clients_per_round() == 0) throw std::invalid_argument("fed: num_clients * sample_ratio rounds to zero clients");
}

std::size_t FedConfig::clients_per_round() const {
  return static_cast<std::size_t>(std::llround(static_cast<double>(num_clients) * sample_ratio));
}

void to_json(nlohmann::json& j, const FedConfig& c) {
  j = {{"num_clients", c.num_clients},
       {"sample_ratio", c.sample_ratio},
       {"rounds", c.rounds},
       {"local_epochs", c.local_epochs},
       {"seed", c.seed},
       {"partition", to_string(c.partition)},
       {"parallel", c.parallel}};
}

void from_json(const nlohmann::json& j, FedConfig& c) {
  c.num_clients = j.value("num_clients", c.num_clients);
  c.sample_ratio = j.value("sample_ratio", c.sample_ratio);
  c.rounds = j.value("rounds", c.rounds);
  c.local_epochs = j.value("local_epochs", c.local_epochs);
  c.seed = j.value("seed", c.seed);
  if (j.contains("partition")) c.partition = parse_partition_policy(j.at("partition").get<std::string>());
  c.parallel = j.value("parallel", c.parallel);
}

std::vector<ClientShard> partition(const DatasetSplit& split, PartitionPolicy policy, std::size_t num_clients,
                                   std::uint64_t seed) {
  if (num_clients == 0) throw std::invalid_argument("partition: num_clients must be positive");
  const std::size_t n = split.train.size();
  std::vector<ClientShard> shards(num_clients);
  for (std::size_t c = 0; c < num_clients; ++c) shards[c].client_id = c;

  if (policy == PartitionPolicy::kByUser) {
    const std::size_t users = split.roster.size();
    if (num_clients > users) {
      throw std::invalid_argument("partition: " + std::to_string(num_clients) + " clients but only " +
                                  std::to_string(users) + " users under by_user");
    }
    std::vector<std::size_t> count(users, 0);
    for (auto l : split.train_labels) count.at(l)++;
    std::vector<std::size_t> order(users);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return count[a] > count[b]; });
    std::vector<std::size_t> owner(users);
    for (std::size_t k = 0; k < users; ++k) owner[order[k]] = k % num_clients;
    for (std::size_t i = 0; i < n; ++i) shards[owner[split.train_labels[i]]].indices.push_back(i);
  } else {
    if (num_clients > n) {
      throw std::invalid_argument("partition: " + std::to_string(num_clients) + " clients but only " +
                                  std::to_string(n) + " train samples");
    }
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    const std::size_t base = n / num_clients, extra = n % num_clients;
    std::size_t pos = 0;
    for (std::size_t c = 0; c < num_clients; ++c) {
      const std::size_t len = base + (c < extra ? 1 : 0);
      shards[c].indices.assign(perm.begin() + static_cast<std::ptrdiff_t>(pos),
                               perm.begin() + static_cast<std::ptrdiff_t>(pos + len));
      std::sort(shards[c].indices.begin(), shards[c].indices.end());
      pos += len;
    }
  }
  return shards;
}

std::uint64_t client_seed(std::uint64_t seed, std::size_t round, std::size_t client_id) {
  return seed + static_cast<std::uint64_t>(round) * 0x9E3779B97F4A7C15ULL +
         static_cast<std::uint64_t>(client_id) * 0xBF58476D1CE4E5B9ULL;
}

ClientResult client_update(const Model& global, const DatasetSplit& split, const ClientShard& shard,
                           std::size_t local_epochs, const TrainOptions& hyper) {
  if (shard.indices.empty()) {
    throw std::invalid_argument("client_update: client " + std::to_string(shard.client_id) + " has an empty shard");
  }
  Model local = global.clone();
  std::vector<TokenizedSequence> seqs;
  std::vector<std::size_t> labels;
  for (auto i : shard.indices) {
    seqs.push_back(split.train.at(i));
    labels.push_back(split.train_labels.at(i));
  }
  TrainOptions opts = hyper;
  opts.epochs = local_epochs;
  const auto hist = train_classifier(local, seqs, labels, opts);
  ClientResult r;
  r.client_id = shard.client_id;
  r.sample_count = shard.sample_count();
  r.final_loss = hist.epoch_loss.empty() ? hist.initial_loss : hist.epoch_loss.back();
  r.params = std::move(local.params());
  return r;
}

ParameterSet fedavg_aggregate(std::vector<ClientResult> results) {
  if (results.empty()) throw std::invalid_argument("fedavg: no client results");
  std::sort(results.begin(), results.end(), [](const auto& a, const auto& b) { return a.client_id < b.client_id; });
  std::size_t total = 0;
  for (const auto& r : results) total += r.sample_count;
  if (total == 0) throw std::invalid_argument("fedavg: all sample counts are zero");

  const ParameterSet& ref = results.front().params;
  for (const auto& r : results) {
    if (r.params.size() != ref.size()) throw ShapeError("fedavg: clients disagree on parameter count");
    auto it = r.params.begin();
    for (const auto& [name, t] : ref) {
      if (it->first != name || it->second.shape() != t.shape()) {
        throw ShapeError("fedavg: parameter '" + name + "' mismatch in client " + std::to_string(r.client_id));
      }
      ++it;
    }
  }
  ParameterSet out = ref.clone();
  for (auto& [name, t] : out) {
    auto dst = t.mutable_data();
    std::fill(dst.begin(), dst.end(), 0.0);
    for (const auto& r : results) {
      const double w = static_cast<double>(r.sample_count) / static_cast<double>(total);
      const auto src = r.params.get(name).data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += w * src[i];
    }
  }
  return out;
}

nlohmann::json RoundReport::to_json() const {
  nlohmann::json cl = nlohmann::json::array();
  for (const auto& c : clients) {
    cl.push_back({{"client_id", c.client_id}, {"sample_count", c.sample_count}, {"final_loss", c.final_loss}});
  }
  return {{"round", round}, {"selected", selected}, {"clients", cl}, {"test_accuracy", test_accuracy}};
}

std::vector<RoundReport> run_rounds(const FedConfig& cfg, Model& global, const DatasetSplit& split,
                                    const std::vector<ClientShard>& shards, const TrainOptions& hyper) {
  cfg.validate();
  if (shards.size() != cfg.num_clients) {
    throw std::invalid_argument("fed: " + std::to_string(shards.size()) + " shards for " +
                                std::to_string(cfg.num_clients) + " clients");
  }
  const std::size_t k = cfg.clients_per_round();
  std::vector<RoundReport> reports;
  for (std::size_t round = 0; round < cfg.rounds; ++round) {
    std::seed_seq ss{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                     static_cast<std::uint32_t>(round)};
    std::mt19937_64 rng(ss);
    std::vector<std::size_t> ids(cfg.num_clients);
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(k);
    std::sort(ids.begin(), ids.end());

    std::vector<ClientResult> results(k);
    auto work = [&](std::size_t slot) {
      const auto& shard = shards[ids[slot]];
      TrainOptions opts = hyper;
      opts.seed = client_seed(hyper.seed, round, shard.client_id);
      results[slot] = client_update(global, split, shard, cfg.local_epochs, opts);
    };
    if (cfg.parallel && k > 1) {
      std::vector<std::exception_ptr> errors(k);
      std::vector<std::thread> pool;
      const std::size_t width = std::max(1u, std::thread::hardware_concurrency());
      for (std::size_t start = 0; start < k; start += width) {
        for (std::size_t s = start; s < std::min(k, start + width); ++s) {
          pool.emplace_back([&, s] {
            try {
              work(s);
            } catch (...) {
              errors[s] = std::current_exception();
            }
          });
        }
        for (auto& t : pool) t.join();
        pool.clear();
      }
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    } else {
      for (std::size_t s = 0; s < k; ++s) work(s);
    }

    RoundReport rep;
    rep.round = round;
    rep.selected = ids;
    for (const auto& r : results) rep.clients.push_back({r.client_id, r.sample_count, r.final_loss});
    global.params().copy_values_from(fedavg_aggregate(std::move(results)));
    rep.test_accuracy = accuracy(predict(global, split.test), split.test_labels);
    reports.push_back(std::move(rep));
  }
  return reports;
}

}  // namespace tckd
