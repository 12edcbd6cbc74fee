// SPDX-License-Identifier: Apache-2.0
#include "tckd_cli/run_config.hpp"

#include "tckd/baselines.hpp"
#include "tckd/synth.hpp"

namespace tckd::cli {

using nlohmann::json;

json default_config() {
  ModelConfig model;
  json model_j = model;
  // Sizes derived from the data are not user settings.
  for (const char* k : {"num_users", "subword_vocab", "char_vocab"}) model_j.erase(k);

  TrainOptions train;
  json train_j = train;
  train_j.erase("seed");

  FedConfig fed;
  json fed_j = fed;
  fed_j.erase("seed");

  SynthSection synth;
  CompareSection compare;
  return {
      {"seed", nullptr},
      {"out", "out"},
      {"checkpoint", ""},
      {"export_split", "all"},
      {"data",
       {{"path", nullptr},
        {"format", nullptr},
        {"flight_mode", "release_to_press"},
        {"test_ratio", 0.2},
        {"max_subwords", 64}}},
      {"synth",
       {{"num_users", synth.num_users},
        {"samples_per_user", synth.samples_per_user},
        {"min_profile_separation", synth.min_profile_separation},
        {"phrases", json::array()}}},
      {"model", model_j},
      {"train", train_j},
      {"fed", fed_j},
      {"compare",
       {{"rows", baseline_row_names()},
        {"lstm_hidden", compare.lstm_hidden},
        {"lstm_epochs", compare.lstm_epochs},
        {"lstm_learning_rate", compare.lstm_learning_rate}}},
  };
}

namespace {

void merge_into(json& base, const json& over, const std::string& where) {
  if (!over.is_object())
    throw ConfigError("config " + (where.empty() ? "root" : "'" + where + "'") + " must be an object");
  for (const auto& [k, v] : over.items()) {
    const std::string key = where.empty() ? k : where + "." + k;
    if (!base.contains(k)) throw ConfigError("unknown config field '" + key + "'");
    if (base[k].is_object()) {
      merge_into(base[k], v, key);
    } else {
      base[k] = v;
    }
  }
}

template <typename T>
T field(const json& j, const std::string& path) {
  const json* cur = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string part = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!cur->contains(part) || (*cur)[part].is_null()) throw ConfigError("missing required field '" + path + "'");
    cur = &(*cur)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  try {
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      if (!cur->is_number_integer() || (!cur->is_number_unsigned() && cur->get<std::int64_t>() < 0))
        throw ConfigError("field '" + path + "' must be a non-negative integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!cur->is_number()) throw ConfigError("field '" + path + "' must be a number");
    }
    return cur->get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("field '" + path + "' has the wrong type: " + e.what());
  }
}

template <typename Fn>
auto parse_enum(const json& j, const std::string& path, Fn fn) {
  const auto s = field<std::string>(j, path);
  try {
    return fn(s);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("field '" + path + "': " + e.what());
  }
}

}  // namespace

json merge_config(const json& overrides) {
  json merged = default_config();
  if (!overrides.is_null()) merge_into(merged, overrides, "");
  return merged;
}

RunConfig resolve(const json& j, bool need_data) {
  RunConfig c;
  c.seed = field<std::uint64_t>(j, "seed");
  c.out = field<std::string>(j, "out");
  if (c.out.empty()) throw ConfigError("field 'out' must not be empty");
  c.checkpoint = field<std::string>(j, "checkpoint");
  c.export_split = field<std::string>(j, "export_split");
  if (c.export_split != "all" && c.export_split != "train" && c.export_split != "test") {
    throw ConfigError("field 'export_split' must be one of all, train, test");
  }

  if (need_data) c.data.path = field<std::string>(j, "data.path");
  if (!j["data"]["format"].is_null()) c.data.format = parse_enum(j, "data.format", parse_csv_format);
  c.data.flight_mode = parse_enum(j, "data.flight_mode", parse_flight_mode);
  c.data.test_ratio = field<double>(j, "data.test_ratio");
  if (!(c.data.test_ratio > 0.0 && c.data.test_ratio < 1.0))
    throw ConfigError("field 'data.test_ratio' must be in (0, 1)");
  c.data.max_subwords = field<std::size_t>(j, "data.max_subwords");

  c.synth.num_users = field<std::size_t>(j, "synth.num_users");
  c.synth.samples_per_user = field<std::size_t>(j, "synth.samples_per_user");
  c.synth.min_profile_separation = field<double>(j, "synth.min_profile_separation");
  c.synth.phrases = field<std::vector<std::string>>(j, "synth.phrases");
  if (c.synth.num_users < 2) throw ConfigError("field 'synth.num_users' must be at least 2");
  if (c.synth.samples_per_user < 2) throw ConfigError("field 'synth.samples_per_user' must be at least 2");

  c.model.num_layers = field<std::size_t>(j, "model.num_layers");
  c.model.num_heads = field<std::size_t>(j, "model.num_heads");
  c.model.hidden_size = field<std::size_t>(j, "model.hidden_size");
  c.model.ffn_size = field<std::size_t>(j, "model.ffn_size");
  c.model.char_embed_dim = field<std::size_t>(j, "model.char_embed_dim");
  c.model.char_hidden_dim = field<std::size_t>(j, "model.char_hidden_dim");
  c.model.max_seq_len = field<std::size_t>(j, "model.max_seq_len");
  c.model.dropout = field<double>(j, "model.dropout");
  c.model.mode = parse_enum(j, "model.mode", parse_model_mode);
  c.model.temporal_mode = parse_enum(j, "model.temporal_mode", parse_temporal_mode);

  c.train.batch_size = field<std::size_t>(j, "train.batch_size");
  c.train.epochs = field<std::size_t>(j, "train.epochs");
  c.train.learning_rate = field<double>(j, "train.learning_rate");
  c.train.seed = c.seed;
  if (c.train.batch_size == 0) throw ConfigError("field 'train.batch_size' must be positive");
  if (!(c.train.learning_rate > 0.0)) throw ConfigError("field 'train.learning_rate' must be positive");

  c.fed.num_clients = field<std::size_t>(j, "fed.num_clients");
  c.fed.sample_ratio = field<double>(j, "fed.sample_ratio");
  c.fed.rounds = field<std::size_t>(j, "fed.rounds");
  c.fed.local_epochs = field<std::size_t>(j, "fed.local_epochs");
  c.fed.partition = parse_enum(j, "fed.partition", parse_partition_policy);
  c.fed.parallel = field<bool>(j, "fed.parallel");
  c.fed.seed = c.seed;
  try {
    c.fed.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  c.compare.rows = field<std::vector<std::string>>(j, "compare.rows");
  const auto& known = baseline_row_names();
  for (const auto& r : c.compare.rows) {
    if (std::find(known.begin(), known.end(), r) == known.end())
      throw ConfigError("compare.rows: unknown row '" + r + "'");
  }
  c.compare.lstm_hidden = field<std::size_t>(j, "compare.lstm_hidden");
  c.compare.lstm_epochs = field<std::size_t>(j, "compare.lstm_epochs");
  c.compare.lstm_learning_rate = field<double>(j, "compare.lstm_learning_rate");
  return c;
}

}  // namespace tckd::cli
