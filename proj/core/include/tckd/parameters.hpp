// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "tckd/tensor.hpp"

namespace tckd {

/// Named trainable weights. Iteration order is lexicographic by name.
class ParameterSet {
 public:
  using Map = std::map<std::string, Tensor>;

  /// Registers a tensor under a unique name; marks it as requiring grad.
  Tensor& add(const std::string& name, Tensor t);
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  std::size_t size() const { return entries_.size(); }
  std::size_t total_values() const;
  std::vector<std::string> names() const;

  Map::const_iterator begin() const { return entries_.begin(); }
  Map::const_iterator end() const { return entries_.end(); }
  Map::iterator begin() { return entries_.begin(); }
  Map::iterator end() { return entries_.end(); }

  /// Deep copy: fresh storage, no gradients.
  ParameterSet clone() const;
  /// Subset restricted to names matching `keep`.
  template <typename Pred>
  ParameterSet filter(Pred keep) const {
    ParameterSet out;
    for (const auto& [name, t] : entries_)
      if (keep(name)) out.entries_.emplace(name, t);
    return out;
  }
  /// Overwrites values of every entry from `src` (same names and shapes required).
  void copy_values_from(const ParameterSet& src);

  void zero_grad();

  friend bool operator==(const ParameterSet& a, const ParameterSet& b);  // bitwise values

 private:
  Map entries_;
};

// Initializers. All draw from the supplied engine in a fixed order.
Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);
Tensor normal_init(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng);

struct AdamOptions {
  double learning_rate = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamOptions options;
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
  long step = 0;

  explicit AdamState(AdamOptions opts = {}) : options(opts) {}
};

/// One bias-corrected Adam update over every parameter, then zeroes grads.
/// A parameter without an accumulated gradient is a GraphError.
void adam_step(ParameterSet& params, AdamState& state);

// ---------------------------------------------------------------------------
// Checkpoint file: "TCKPT1\n", a one-line JSON header, then for each tensor
// (in name order) a little-endian record: u32 name length, name bytes,
// u32 rank, u64 dims..., f64 values...

inline constexpr const char* kCheckpointMagic = "TCKPT1";

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_checkpoint(const std::filesystem::path& path, const ParameterSet& params, const std::string& header_json);

struct LoadedCheckpoint {
  std::string header_json;
  ParameterSet params;
};

LoadedCheckpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace tckd
