// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tckd/keystroke.hpp"
#include "tckd_cli/cli.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tckd::cli;

namespace {

fs::path tmp_root() {
  const char* env = std::getenv("TCKD_TEST_TMP");
  fs::path p = env ? fs::path(env) : fs::temp_directory_path() / "tckd_cli_test";
  fs::create_directories(p);
  return p;
}

fs::path fresh_dir(const std::string& name) {
  const auto p = tmp_root() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "tckd");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary);
  os << s;
}

// Small but learnable configuration shared by the CLI tests.
fs::path write_config(const fs::path& dir, const fs::path& data) {
  const json j = {
      {"data", {{"path", data.string()}}},
      {"synth", {{"num_users", 3}, {"samples_per_user", 10}}},
      {"model",
       {{"num_layers", 1},
        {"num_heads", 2},
        {"hidden_size", 16},
        {"ffn_size", 32},
        {"char_embed_dim", 8},
        {"char_hidden_dim", 8}}},
      {"train", {{"epochs", 2}, {"learning_rate", 3e-3}}},
      {"fed", {{"num_clients", 2}, {"sample_ratio", 1.0}, {"rounds", 1}, {"partition", "by_user"}}},
      {"compare", {{"rows", {"manhattan", "lstm"}}, {"lstm_hidden", 8}, {"lstm_epochs", 1}}},
  };
  const auto p = dir / "config.json";
  spit(p, j.dump());
  return p;
}

// Synthesizes the dataset once per test binary.
const fs::path& dataset() {
  static const fs::path data = [] {
    const auto dir = fresh_dir("data");
    const auto cfg = write_config(dir, dir / "keystrokes_timestamps.csv");
    REQUIRE(run({"synth", "--config", cfg.string(), "--seed", "3", "--out", dir.string()}) == kOk);
    return dir / "keystrokes_timestamps.csv";
  }();
  return data;
}

}  // namespace

TEST_CASE("cli: synth writes both schemas and a manifest") {
  const auto& data = dataset();
  const auto dir = data.parent_path();
  const auto manifest = json::parse(slurp(dir / "manifest.json"));
  CHECK(manifest["num_samples"] == 30);
  const auto ts = tckd::parse_dataset(data);
  const auto pre = tckd::parse_dataset(dir / "keystrokes_precomputed.csv");
  CHECK(ts.size() == 30);
  REQUIRE(pre.size() == ts.size());
  std::size_t events = 0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    events += ts[i].size();
    CHECK(pre[i].hold_ms.size() == ts[i].hold_ms.size());
  }
  CHECK(manifest["num_events"] == events);
  CHECK(fs::exists(dir / "synth_config.json"));
}

TEST_CASE("cli: exit codes") {
  const auto& data = dataset();
  const auto dir = fresh_dir("exit_codes");
  const auto cfg = write_config(dir, data);

  CHECK(run({"train", "--config", cfg.string(), "--seed", "--bogus"}) == kConfigError);
  CHECK(run({}) == kConfigError);
  CHECK(run({"train", "--config", cfg.string(), "--mode", "lstm"}) == kConfigError);

  spit(dir / "unknown.json", R"({"model": {"hidden_sz": 4}})");
  CHECK(run({"train", "--config", (dir / "unknown.json").string(), "--seed", "1"}) == kConfigError);
  spit(dir / "broken.json", "{ not json");
  CHECK(run({"train", "--config", (dir / "broken.json").string(), "--seed", "1"}) == kConfigError);
  spit(dir / "typed.json", R"({"train": {"epochs": "many"}})");
  CHECK(run({"synth", "--config", (dir / "typed.json").string(), "--seed", "1"}) == kConfigError);
  CHECK(run({"train", "--config", cfg.string()}) == kConfigError);  // seed is required

  const auto missing = write_config(dir / ".." / "exit_codes", dir / "does_not_exist.csv");
  CHECK(run({"train", "--config", missing.string(), "--seed", "1", "--out", dir.string()}) == kIoError);
  CHECK(run({"train", "--config", (dir / "nope.json").string(), "--seed", "1"}) == kIoError);

  const auto good = write_config(dir, data);
  const auto out = dir / "model";
  REQUIRE(run({"train", "--config", good.string(), "--seed", "1", "--out", out.string()}) == kOk);
  CHECK(run({"eval", "--config", good.string(), "--seed", "1", "--out", out.string()}) == kOk);

  std::string ck = slurp(out / "model.ckpt");
  const auto pos = ck.find("\"split_hash\":\"");
  REQUIRE(pos != std::string::npos);
  char& c = ck[pos + 14];
  c = c == '0' ? '1' : '0';
  spit(out / "model.ckpt", ck);
  CHECK(run({"eval", "--config", good.string(), "--seed", "1", "--out", out.string()}) == kArtifactMismatch);

  spit(out / "model.ckpt", "NOTACKPT\n{}\n");
  CHECK(run({"eval", "--config", good.string(), "--seed", "1", "--out", out.string()}) == kArtifactMismatch);
  fs::remove(out / "model.ckpt");
  CHECK(run({"eval", "--config", good.string(), "--seed", "1", "--out", out.string()}) == kIoError);
}

TEST_CASE("cli: train is deterministic and eval reproduces its metrics") {
  const auto& data = dataset();
  const auto dir = fresh_dir("determinism");
  const auto cfg = write_config(dir, data);
  const auto a = dir / "a", b = dir / "b";
  REQUIRE(run({"train", "--config", cfg.string(), "--seed", "7", "--out", a.string()}) == kOk);
  REQUIRE(run({"train", "--config", cfg.string(), "--seed", "7", "--out", b.string()}) == kOk);
  CHECK(slurp(a / "report.json") == slurp(b / "report.json"));
  CHECK(slurp(a / "model.ckpt") == slurp(b / "model.ckpt"));

  REQUIRE(run({"eval", "--config", cfg.string(), "--seed", "7", "--out", a.string()}) == kOk);
  const auto train_rep = json::parse(slurp(a / "report.json"));
  const auto eval_rep = json::parse(slurp(a / "eval_report.json"));
  CHECK(eval_rep["accuracy"] == train_rep["accuracy"]);
  CHECK(eval_rep["eer"] == train_rep["eer"]);
  CHECK(eval_rep["split_hash"] == train_rep["split_hash"]);

  const auto resolved = json::parse(slurp(a / "train_config.json"));
  CHECK(resolved["seed"] == 7);
  CHECK(resolved["model"]["hidden_size"] == 16);
  CHECK(resolved["train"]["batch_size"] == 8);

  REQUIRE(run({"export-embeddings", "--config", cfg.string(), "--seed", "7", "--out", a.string()}) == kOk);
  std::ifstream is(a / "embeddings.csv");
  std::string line;
  std::size_t rows = 0;
  while (std::getline(is, line)) ++rows;
  CHECK(rows == 31);  // header plus every sample
}

TEST_CASE("cli: compare and fedsim write their reports") {
  const auto& data = dataset();
  const auto dir = fresh_dir("compare_fed");
  const auto cfg = write_config(dir, data);
  REQUIRE(run({"compare", "--config", cfg.string(), "--seed", "2", "--out", dir.string()}) == kOk);
  const auto cmp = json::parse(slurp(dir / "compare.json"));
  CHECK(cmp["order"] == json::array({"manhattan", "lstm"}));

  REQUIRE(run({"fedsim", "--config", cfg.string(), "--seed", "2", "--out", dir.string()}) == kOk);
  std::ifstream is(dir / "rounds.jsonl");
  std::string line;
  REQUIRE(std::getline(is, line));
  CHECK(json::parse(line)["selected"] == json::array({0, 1}));
  CHECK(fs::exists(dir / "fed_model.ckpt"));

  spit(dir / "too_many.json", json{{"data", {{"path", data.string()}}}, {"fed", {{"num_clients", 9}}}}.dump());
  CHECK(run({"fedsim", "--config", (dir / "too_many.json").string(), "--seed", "2", "--out", dir.string()}) ==
        kConfigError);
}

TEST_CASE("cli: print-defaults emits the full configuration") {
  std::stringstream captured;
  auto* old = std::cout.rdbuf(captured.rdbuf());
  const int rc = run({"--print-defaults"});
  std::cout.rdbuf(old);
  CHECK(rc == kOk);
  const auto j = json::parse(captured.str());
  for (const char* k : {"seed", "out", "data", "synth", "model", "train", "fed", "compare"})
    CHECK_MESSAGE(j.contains(k), k);
  CHECK(j["train"]["learning_rate"] == 5e-5);
}
