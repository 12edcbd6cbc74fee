// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tckd/federated.hpp"
#include "tckd/keystroke.hpp"
#include "tckd/model.hpp"
#include "tckd/tasks.hpp"

namespace tckd::cli {

/// Invalid or incomplete run configuration (exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A stored artifact does not match what the run expects (exit code 5).
class ArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataSection {
  std::string path;
  std::optional<CsvFormat> format;
  FlightMode flight_mode = FlightMode::kReleaseToPress;
  double test_ratio = 0.2;
  std::size_t max_subwords = 64;
};

struct SynthSection {
  std::size_t num_users = 8;
  std::size_t samples_per_user = 40;
  double min_profile_separation = 30.0;
  std::vector<std::string> phrases;  // empty: built-in pool
};

struct CompareSection {
  std::vector<std::string> rows;
  std::size_t lstm_hidden = 64;
  std::size_t lstm_epochs = 5;
  double lstm_learning_rate = 1e-3;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out;
  std::string checkpoint;  // empty: <out>/model.ckpt
  std::string export_split = "all";
  DataSection data;
  SynthSection synth;
  ModelConfig model;
  TrainOptions train;
  FedConfig fed;
  CompareSection compare;

  std::filesystem::path checkpoint_path() const {
    return checkpoint.empty() ? out / "model.ckpt" : std::filesystem::path(checkpoint);
  }
};

/// Every key with its default value. "seed" and "data.path" default to null
/// and must be supplied when the command needs them.
nlohmann::json default_config();

/// Merges `overrides` onto the defaults. Unknown keys are a ConfigError.
nlohmann::json merge_config(const nlohmann::json& overrides);

/// Typed view of a merged config. `need_data` requires data.path.
RunConfig resolve(const nlohmann::json& merged, bool need_data);

}  // namespace tckd::cli
