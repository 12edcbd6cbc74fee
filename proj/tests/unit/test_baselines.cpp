// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "support/test_support.hpp"
#include "tckd/baselines.hpp"

using namespace tckd;
using tckd::testing::grad_check;
using tckd::testing::Probe;
using tckd::testing::random_tensor;
using tckd::testing::tiny_model_config;

namespace {

SampleSplit raw_split(std::size_t users, std::size_t per_user, std::uint64_t seed) {
  SynthConfig sc;
  sc.num_users = users;
  sc.samples_per_user = per_user;
  sc.phrase_pool = {"the cat sat", "a dog ran", "the sun is up"};
  sc.seed = seed;
  sc.min_profile_separation = 30.0;
  return split_dataset(synth_generate(sc), 0.2, seed);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("manhattan: hand case and tie-break") {
  const std::vector<ManhattanProfile> profiles = {{"B", {5.0, 5.0}}, {"A", {1.0, 1.0}}};
  const auto m = manhattan_classify({2.0, 2.0}, profiles);
  CHECK(m.user_id == "A");
  CHECK(m.distance == 2.0);
  const auto tie = manhattan_classify({3.0, 3.0}, profiles);
  CHECK(tie.user_id == "A");
  CHECK_THROWS_AS(manhattan_classify({1.0}, profiles), std::invalid_argument);
  CHECK_THROWS(manhattan_classify({1.0, 1.0}, {}));
}

TEST_CASE("manhattan: features, profiles and scale covariance") {
  const auto raw = raw_split(3, 10, 2);
  for (const auto& s : raw.train) CHECK(manhattan_features(s).size() == kManhattanFeatures);
  const auto profiles = build_manhattan_profiles(raw.train);
  REQUIRE(profiles.size() == 3);
  CHECK(profiles[0].user_id < profiles[1].user_id);

  auto scaled = [](KeystrokeSample s, double c) {
    for (auto& v : s.hold_ms) v *= c;
    for (auto& v : s.flight_ms) v *= c;
    return s;
  };
  std::vector<KeystrokeSample> train2;
  for (const auto& s : raw.train) train2.push_back(scaled(s, 3.0));
  const auto profiles2 = build_manhattan_profiles(train2);
  for (const auto& s : raw.test) {
    const auto a = manhattan_classify(manhattan_features(s), profiles);
    const auto b = manhattan_classify(manhattan_features(scaled(s, 3.0)), profiles2);
    CHECK(a.user_id == b.user_id);
    CHECK(b.distance == doctest::Approx(3.0 * a.distance).epsilon(1e-9));
  }
}

TEST_CASE("lstm: zero weights give zero logits") {
  LstmConfig cfg;
  cfg.input = LstmInput::kCharBertEmbed;
  cfg.input_dim = 3;
  cfg.hidden_dim = 4;
  cfg.num_users = 5;
  auto lstm = LstmClassifier::create(cfg, 1);
  for (auto& [name, t] : lstm.params())
    for (auto& v : t.mutable_data()) v = 0.0;
  std::mt19937_64 rng(1);
  const auto out = lstm.forward({random_tensor({4, 3}, rng), random_tensor({2, 3}, rng)});
  CHECK(out.shape() == Shape{2, 5});
  for (double v : out.data()) CHECK(v == 0.0);
}

TEST_CASE("lstm: two-step scalar recurrence oracle") {
  LstmConfig cfg;
  cfg.input = LstmInput::kCharBertEmbed;
  cfg.input_dim = 1;
  cfg.hidden_dim = 1;
  cfg.num_users = 1;
  auto lstm = LstmClassifier::create(cfg, 2);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 0.7);
  for (auto& [name, t] : lstm.params())
    for (auto& v : t.mutable_data()) v = n(rng);
  auto v = [&](const char* name) { return lstm.params().get(std::string("lstm.layers.0.") + name).data()[0]; };
  const std::vector<double> xs = {0.4, -1.3};
  double h = 0.0, c = 0.0;
  for (double x : xs) {
    const double i = sigmoid(x * v("w_i") + h * v("u_i") + v("b_i"));
    const double f = sigmoid(x * v("w_f") + h * v("u_f") + v("b_f"));
    const double o = sigmoid(x * v("w_o") + h * v("u_o") + v("b_o"));
    const double g = std::tanh(x * v("w_g") + h * v("u_g") + v("b_g"));
    c = f * c + i * g;
    h = o * std::tanh(c);
  }
  const double want = h * lstm.params().get("lstm.head.w").data()[0] + lstm.params().get("lstm.head.b").data()[0];
  const auto got = lstm.forward({Tensor::from({2, 1}, {0.4, -1.3})});
  CHECK(std::abs(got.data()[0] - want) < 1e-12);
}

TEST_CASE("lstm: finite differences") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 5; ++t) {
    LstmConfig cfg;
    cfg.input = LstmInput::kTempCharEmbed;
    cfg.input_dim = 3;
    cfg.hidden_dim = 4;
    cfg.layers = 1 + t % 2;
    cfg.num_users = 3;
    auto lstm = LstmClassifier::create(cfg, 10 + t);
    std::vector<Tensor> inputs;
    for (const auto& [name, w] : lstm.params()) inputs.push_back(w);
    const Tensor x = random_tensor({3, 3}, rng, 1.0, true);
    inputs.push_back(x);
    const auto g = grad_check(inputs, [&] { return lstm.forward({x}); }, Probe(t), rng);
    CHECK(g.rel_error < 1e-4);
  }
  CHECK_THROWS_AS(LstmClassifier::create(LstmConfig{}, 0), std::invalid_argument);
}

TEST_CASE("token_features: zero timings with temporal equal features without") {
  const auto split = tckd::testing::small_split(2, 6, 4);
  const Model m = Model::create(tiny_model_config(split), 3);
  for (auto seq : split.test) {
    const auto without = token_features(m.encoder(), seq, false);
    for (auto& t : seq.tokens) {
      std::fill(t.d.begin(), t.d.end(), 0.0);
      std::fill(t.f.begin(), t.f.end(), 0.0);
    }
    const auto zeroed = token_features(m.encoder(), seq, true);
    CHECK(std::equal(without.data().begin(), without.data().end(), zeroed.data().begin(), zeroed.data().end()));
  }
}

TEST_CASE("baseline suite: row contract and errors") {
  const auto raw = raw_split(3, 10, 5);
  const auto prepared = prepare_split(raw, 32);
  const Model cb = Model::create(tiny_model_config(prepared, ModelMode::kCharOnly), 1);
  const Model tcb = Model::create(tiny_model_config(prepared), 1);

  SuiteOptions opts;
  opts.lstm_hidden = 8;
  opts.lstm_train.epochs = 1;
  opts.lstm_train.learning_rate = 1e-2;
  opts.seed = 3;
  SuiteInputs in{&raw, &prepared, &cb, &tcb};
  const auto rep = run_baseline_suite(in, opts);
  CHECK(rep.order == baseline_row_names());
  for (const auto& name : baseline_row_names()) {
    const auto& row = rep.rows.at(name);
    CHECK(row.accuracy >= 0.0);
    CHECK(row.accuracy <= 1.0);
    CHECK(row.eer.has_value() == (name == "charbert" || name == "tempchar"));
  }
  const auto j = rep.to_json();
  CHECK(j["rows"]["lstm"]["eer"].is_null());
  CHECK(j["split_hash"].get<std::string>().size() == 16);
  CHECK(run_baseline_suite(in, opts).to_json() == j);

  SuiteOptions only_manhattan = opts;
  only_manhattan.rows = {"manhattan"};
  CHECK(run_baseline_suite({&raw, &prepared, nullptr, nullptr}, only_manhattan).rows.size() == 1);
  SuiteOptions needs_cb = opts;
  needs_cb.rows = {"lstm_charbert"};
  CHECK_THROWS_AS(run_baseline_suite({&raw, &prepared, nullptr, &tcb}, needs_cb), std::invalid_argument);
  needs_cb.rows = {"bogus"};
  CHECK_THROWS_AS(run_baseline_suite(in, needs_cb), std::invalid_argument);

  const auto other = raw_split(3, 10, 6);
  CHECK_THROWS_AS(run_baseline_suite({&other, &prepared, &cb, &tcb}, opts), std::invalid_argument);
}
