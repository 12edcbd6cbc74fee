// SPDX-License-Identifier: Apache-2.0
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "tckd/baselines.hpp"
#include "tckd/federated.hpp"
#include "tckd/synth.hpp"
#include "tckd_cli/cli.hpp"
#include "tckd_cli/run_config.hpp"

namespace tckd::cli {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kCheckpointKind = "tckd-model";
constexpr int kCheckpointVersion = 1;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::ios_base::failure("cannot open for writing: " + path.string());
  os << text;
  if (!os) throw std::ios_base::failure("write failed: " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void prepare_out(const fs::path& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw std::ios_base::failure("cannot create output directory " + out.string() + ": " + ec.message());
}

json norm_stats_json(const NormStats& s) {
  return {{"hold_mean", s.hold_mean},
          {"hold_std", s.hold_std},
          {"flight_mean", s.flight_mean},
          {"flight_std", s.flight_std}};
}

NormStats norm_stats_from(const json& j) {
  return {j.at("hold_mean").get<double>(), j.at("hold_std").get<double>(), j.at("flight_mean").get<double>(),
          j.at("flight_std").get<double>()};
}

SampleSplit load_split(const RunConfig& c, double test_ratio, std::uint64_t seed) {
  const auto raw = parse_dataset(c.data.path, c.data.format, c.data.flight_mode);
  return split_dataset(raw, test_ratio, seed);
}

ModelConfig model_config_for(const RunConfig& c, const DatasetSplit& split) {
  ModelConfig m = c.model;
  m.num_users = split.roster.size();
  m.subword_vocab = split.vocab.subword_count();
  m.char_vocab = split.vocab.char_count();
  try {
    m.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return m;
}

json checkpoint_header(const Model& model, const DatasetSplit& split, const RunConfig& c) {
  return {
      {"kind", kCheckpointKind},
      {"version", kCheckpointVersion},
      {"model", model.config()},
      {"vocab", json::parse(split.vocab.to_json())},
      {"norm_stats", norm_stats_json(split.stats)},
      {"roster", split.roster},
      {"split_hash", hex64(split.split_hash)},
      {"split", {{"test_ratio", c.data.test_ratio}, {"seed", c.seed}, {"flight_mode", to_string(c.data.flight_mode)}}}};
}

struct LoadedModel {
  Model model;
  DatasetSplit split;
};

// Rebuilds the training-time split from the header and checks that the
// checkpoint, its header and the dataset agree.
LoadedModel load_model(const RunConfig& c) {
  const fs::path path = c.checkpoint_path();
  if (!fs::exists(path)) throw std::ios_base::failure("checkpoint not found: " + path.string());
  LoadedCheckpoint ck;
  try {
    ck = read_checkpoint(path);
  } catch (const CheckpointError& e) {
    throw ArtifactError(e.what());
  }
  json h;
  ModelConfig cfg;
  Vocabulary vocab;
  NormStats stats;
  std::vector<std::string> roster;
  double test_ratio = 0.0;
  std::uint64_t split_seed = 0;
  FlightMode flight_mode{};
  std::string split_hash;
  try {
    h = json::parse(ck.header_json);
    if (h.at("kind") != kCheckpointKind || h.at("version") != kCheckpointVersion) {
      throw ArtifactError("checkpoint header: unsupported kind or version");
    }
    cfg = h.at("model").get<ModelConfig>();
    cfg.validate();
    vocab = Vocabulary::from_json(h.at("vocab").dump());
    stats = norm_stats_from(h.at("norm_stats"));
    roster = h.at("roster").get<std::vector<std::string>>();
    test_ratio = h.at("split").at("test_ratio").get<double>();
    split_seed = h.at("split").at("seed").get<std::uint64_t>();
    flight_mode = parse_flight_mode(h.at("split").at("flight_mode").get<std::string>());
    split_hash = h.at("split_hash").get<std::string>();
  } catch (const ArtifactError&) {
    throw;
  } catch (const std::exception& e) {
    throw ArtifactError(std::string("checkpoint header: ") + e.what());
  }
  if (cfg.num_users != roster.size() || cfg.subword_vocab != vocab.subword_count() ||
      cfg.char_vocab != vocab.char_count()) {
    throw ArtifactError("checkpoint header: model sizes disagree with stored vocabulary or roster");
  }
  const Model skeleton = Model::create(cfg, 0);
  if (skeleton.params().size() != ck.params.size()) throw ArtifactError("checkpoint: parameter count mismatch");
  for (const auto& [name, t] : skeleton.params()) {
    if (!ck.params.contains(name) || ck.params.get(name).shape() != t.shape()) {
      throw ArtifactError("checkpoint: parameter '" + name + "' missing or mis-shaped");
    }
  }

  RunConfig rc = c;
  rc.data.flight_mode = flight_mode;
  const auto raw = load_split(rc, test_ratio, split_seed);
  if (raw.roster != roster) throw ArtifactError("dataset users differ from the checkpoint roster");
  DatasetSplit split = prepare_split(raw, vocab, stats);
  if (hex64(split.split_hash) != split_hash) {
    throw ArtifactError("dataset split hash " + hex64(split.split_hash) + " differs from checkpoint " + split_hash);
  }
  return {Model(cfg, std::move(ck.params)), std::move(split)};
}

void echo_config(const RunConfig& c, const std::string& cmd, const json& merged) {
  write_json(c.out / (cmd + "_config.json"), merged);
}

std::string summary_line(const EvalReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "mode=%s accuracy=%.4f eer=%.4f split=%s", r.mode.c_str(), r.accuracy, r.eer,
                r.split_hash.c_str());
  return buf;
}

// ---------------------------------------------------------------------------

void cmd_synth(const RunConfig& c, const json& merged) {
  SynthConfig sc;
  sc.num_users = c.synth.num_users;
  sc.samples_per_user = c.synth.samples_per_user;
  sc.min_profile_separation = c.synth.min_profile_separation;
  sc.phrase_pool = c.synth.phrases.empty() ? default_phrase_pool() : c.synth.phrases;
  sc.seed = c.seed;
  const auto samples = synth_generate(sc);
  prepare_out(c.out);
  const fs::path ts = c.out / "keystrokes_timestamps.csv";
  const fs::path pre = c.out / "keystrokes_precomputed.csv";
  write_dataset(ts, samples, CsvFormat::kTimestamps);
  write_dataset(pre, samples, CsvFormat::kPrecomputed);
  std::size_t events = 0;
  for (const auto& s : samples) events += s.size();
  json profiles = json::array();
  for (const auto& p : draw_profiles(sc)) {
    profiles.push_back({{"hold_mean", p.hold_mean}, {"flight_mean", p.flight_mean}, {"jitter", p.jitter}});
  }
  write_json(c.out / "manifest.json", {{"seed", c.seed},
                                       {"num_users", sc.num_users},
                                       {"samples_per_user", sc.samples_per_user},
                                       {"num_samples", samples.size()},
                                       {"num_events", events},
                                       {"files", {ts.filename().string(), pre.filename().string()}},
                                       {"profiles", profiles}});
  echo_config(c, "synth", merged);
  std::cout << "wrote " << samples.size() << " samples (" << events << " keystrokes) to " << c.out.string() << "\n";
}

void cmd_train(const RunConfig& c, const json& merged) {
  const auto raw = load_split(c, c.data.test_ratio, c.seed);
  const auto split = prepare_split(raw, c.data.max_subwords);
  Model model = Model::create(model_config_for(c, split), c.seed);
  const auto run = train_identification(model, split, c.train);
  prepare_out(c.out);
  write_checkpoint(c.checkpoint_path(), model.params(), checkpoint_header(model, split, c).dump());
  json rep = run.report.to_json();
  rep["train"] = {
      {"initial_loss", run.history.initial_loss}, {"epoch_loss", run.history.epoch_loss}, {"steps", run.history.steps}};
  write_json(c.out / "report.json", rep);
  echo_config(c, "train", merged);
  std::cout << summary_line(run.report) << "\n";
}

void cmd_eval(const RunConfig& c, const json& merged) {
  const auto loaded = load_model(c);
  const auto report = evaluate(loaded.model, loaded.split);
  prepare_out(c.out);
  write_json(c.out / "eval_report.json", report.to_json());
  echo_config(c, "eval", merged);
  std::cout << summary_line(report) << "\n";
}

void cmd_compare(const RunConfig& c, const json& merged) {
  const auto raw = load_split(c, c.data.test_ratio, c.seed);
  const auto split = prepare_split(raw, c.data.max_subwords);
  auto needs = [&](const char* a, const char* b) {
    return std::find(c.compare.rows.begin(), c.compare.rows.end(), a) != c.compare.rows.end() ||
           std::find(c.compare.rows.begin(), c.compare.rows.end(), b) != c.compare.rows.end();
  };
  std::optional<Model> charbert, tempchar;
  RunConfig rc = c;
  if (needs("charbert", "lstm_charbert")) {
    rc.model.mode = ModelMode::kCharOnly;
    charbert.emplace(Model::create(model_config_for(rc, split), c.seed));
    train_classifier(*charbert, split.train, split.train_labels, c.train);
  }
  if (needs("tempchar", "lstm_tempchar")) {
    rc.model.mode = ModelMode::kTempChar;
    tempchar.emplace(Model::create(model_config_for(rc, split), c.seed));
    train_classifier(*tempchar, split.train, split.train_labels, c.train);
  }
  SuiteInputs in{&raw, &split, charbert ? &*charbert : nullptr, tempchar ? &*tempchar : nullptr};
  SuiteOptions so;
  so.rows = c.compare.rows;
  so.seed = c.seed;
  so.lstm_hidden = c.compare.lstm_hidden;
  so.lstm_train = c.train;
  so.lstm_train.epochs = c.compare.lstm_epochs;
  so.lstm_train.learning_rate = c.compare.lstm_learning_rate;
  const auto rep = run_baseline_suite(in, so);
  prepare_out(c.out);
  write_json(c.out / "compare.json", rep.to_json());
  echo_config(c, "compare", merged);
  for (const auto& name : rep.order) {
    const auto& r = rep.rows.at(name);
    std::printf("%-18s accuracy=%.4f", name.c_str(), r.accuracy);
    if (r.eer) std::printf(" eer=%.4f", *r.eer);
    std::printf("\n");
  }
}

void cmd_fedsim(const RunConfig& c, const json& merged) {
  const auto raw = load_split(c, c.data.test_ratio, c.seed);
  const auto split = prepare_split(raw, c.data.max_subwords);
  Model global = Model::create(model_config_for(c, split), c.seed);
  std::vector<ClientShard> shards;
  try {
    shards = partition(split, c.fed.partition, c.fed.num_clients, c.fed.seed);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const auto reports = run_rounds(c.fed, global, split, shards, c.train);
  prepare_out(c.out);
  std::string lines;
  for (const auto& r : reports) lines += r.to_json().dump() + "\n";
  write_text(c.out / "rounds.jsonl", lines);
  const fs::path ckpt = c.checkpoint.empty() ? c.out / "fed_model.ckpt" : fs::path(c.checkpoint);
  write_checkpoint(ckpt, global.params(), checkpoint_header(global, split, c).dump());
  echo_config(c, "fedsim", merged);
  for (const auto& r : reports) std::printf("round=%zu test_accuracy=%.4f\n", r.round, r.test_accuracy);
}

void cmd_export(const RunConfig& c, const json& merged) {
  const auto loaded = load_model(c);
  std::vector<TokenizedSequence> seqs;
  if (c.export_split != "test") seqs.insert(seqs.end(), loaded.split.train.begin(), loaded.split.train.end());
  if (c.export_split != "train") seqs.insert(seqs.end(), loaded.split.test.begin(), loaded.split.test.end());
  prepare_out(c.out);
  export_embeddings(loaded.model, seqs, c.out / "embeddings.csv");
  echo_config(c, "export-embeddings", merged);
  std::cout << "wrote " << seqs.size() << " embeddings to " << (c.out / "embeddings.csv").string() << "\n";
}

json read_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::ios_base::failure("cannot open config: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  try {
    return json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Keystroke-dynamics toolkit: synthesis, training, evaluation, baselines, federated simulation"};
  app.set_version_flag("--version", "tckd 0.1.0");
  std::string config_path, mode, out;
  std::optional<std::uint64_t> seed;
  bool print_defaults = false;
  app.add_option("--config", config_path, "JSON run configuration")->envname("TCKD_CONFIG");
  app.add_option("--seed", seed, "Seed for data split, initialization and training")->envname("TCKD_SEED");
  app.add_option("--mode", mode, "Model mode")->check(CLI::IsMember({"char_only", "temp_char"}))->envname("TCKD_MODE");
  app.add_option("--out", out, "Output directory")->envname("TCKD_OUT");
  app.add_flag("--print-defaults", print_defaults, "Print the default configuration and exit");

  using Handler = void (*)(const RunConfig&, const json&);
  struct Command {
    const char* name;
    const char* help;
    Handler fn;
    bool needs_data;
  };
  const Command commands[] = {
      {"synth", "Generate a synthetic keystroke dataset", cmd_synth, false},
      {"train", "Train an identification model and write a checkpoint", cmd_train, true},
      {"eval", "Evaluate a checkpoint on its test split", cmd_eval, true},
      {"compare", "Run the model and every baseline on one split", cmd_compare, true},
      {"fedsim", "Federated averaging simulation", cmd_fedsim, true},
      {"export-embeddings", "Write pooled embeddings of a checkpoint as CSV", cmd_export, true},
  };
  for (const auto& cmd : commands) app.add_subcommand(cmd.name, cmd.help)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (print_defaults) {
      std::cout << default_config().dump(2) << "\n";
      return kOk;
    }
    const Command* chosen = nullptr;
    for (const auto& cmd : commands)
      if (app.got_subcommand(cmd.name)) chosen = &cmd;
    if (chosen == nullptr) {
      std::cerr << app.help();
      return kConfigError;
    }
    json overrides = config_path.empty() ? json::object() : read_config_file(config_path);
    json merged = merge_config(overrides);
    if (seed) merged["seed"] = *seed;
    if (!mode.empty()) merged["model"]["mode"] = mode;
    if (!out.empty()) merged["out"] = out;
    const RunConfig rc = resolve(merged, chosen->needs_data);
    chosen->fn(rc, merged);
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const ArtifactError& e) {
    std::cerr << "artifact mismatch: " << e.what() << "\n";
    return kArtifactMismatch;
  } catch (const CheckpointError& e) {
    std::cerr << "artifact mismatch: " << e.what() << "\n";
    return kArtifactMismatch;
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return kDivergence;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kIoError;
  } catch (const std::ios_base::failure& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIoError;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIoError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
}

}  // namespace tckd::cli
