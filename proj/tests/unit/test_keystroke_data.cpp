// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "support/test_support.hpp"
#include "tckd/baselines.hpp"
#include "tckd/dataset.hpp"
#include "tckd/keystroke.hpp"
#include "tckd/synth.hpp"
#include "tckd/tokenizer.hpp"

using namespace tckd;

namespace {

KeystrokeEvent ev(double press, double release, char32_t ch = U'a') {
  return KeystrokeEvent{static_cast<int>(ch), ch, press, release};
}

KeystrokeSample typed(const std::string& user, const std::string& session, const std::u32string& text,
                      double hold = 100.0, double gap = 50.0) {
  KeystrokeSample s;
  s.user_id = user;
  s.session_id = session;
  double t = 0.0;
  for (char32_t c : text) {
    s.events.push_back(ev(t, t + hold, c));
    t += hold + gap;
  }
  derive_sample_times(s);
  return s;
}

}  // namespace

TEST_CASE("derive_times: definitions and overlap") {
  auto one = derive_times({ev(0, 100)});
  CHECK(one.hold_ms == std::vector<double>{100});
  CHECK(one.flight_ms == std::vector<double>{0});

  auto two = derive_times({ev(0, 100), ev(150, 230)});
  CHECK(two.flight_ms[1] == 50);
  CHECK(two.hold_ms[1] == 80);

  auto overlap = derive_times({ev(0, 100), ev(80, 160)});
  CHECK(overlap.flight_ms[1] == -20);

  CHECK_THROWS_AS(derive_times({ev(10, 5)}), DataError);
}

TEST_CASE("derive_times: press-to-press alternative") {
  auto t = derive_times({ev(0, 100), ev(150, 230)}, FlightMode::kPressToPress);
  CHECK(t.flight_ms[1] == 150);
  CHECK(parse_flight_mode("press_to_press") == FlightMode::kPressToPress);
  CHECK_THROWS(parse_flight_mode("bogus"));
}

TEST_CASE("parse_dataset: precomputed row mapping and grouping") {
  const auto s = parse_dataset_text("user_id,key_code,hold_ms,flight_ms,char\nu07,65,120,35,a\n");
  REQUIRE(s.size() == 1);
  CHECK(s[0].user_id == "u07");
  CHECK(s[0].events[0].key_code == 65);
  CHECK(s[0].hold_ms[0] == 120);
  CHECK(s[0].flight_ms[0] == 35);
  CHECK(*s[0].events[0].ch == U'a');

  const auto two =
      parse_dataset_text("user_id,key_code,hold_ms,flight_ms,char\nu1,65,120,0,a\nu1,66,110,30,b\nu2,65,90,0,a\n");
  CHECK(two.size() == 2);

  const auto sessions = parse_dataset_text("user_id,key_code,hold_ms,flight_ms,char\nu1,65,120,0,a\n\nu1,66,110,0,b\n");
  CHECK(sessions.size() == 2);
  CHECK(sessions[0].session_id != sessions[1].session_id);
}

TEST_CASE("parse_dataset: timestamps reproduce precomputed values on a 5-key fixture") {
  // press/release chosen so that one pair overlaps.
  const std::string ts =
      "user_id,key_code,press_ms,release_ms,char\n"
      "u1,72,0,95,h\nu1,69,140,230,e\nu1,76,210,300,l\nu1,76,390,470,l\nu1,79,520,640,o\n";
  const std::string pre =
      "user_id,key_code,hold_ms,flight_ms,char\n"
      "u1,72,95,0,h\nu1,69,90,45,e\nu1,76,90,-20,l\nu1,76,80,90,l\nu1,79,120,50,o\n";
  const auto a = parse_dataset_text(ts);
  const auto b = parse_dataset_text(pre);
  REQUIRE(a.size() == 1);
  CHECK(a[0].hold_ms == b[0].hold_ms);
  CHECK(a[0].flight_ms == b[0].flight_ms);
}

TEST_CASE("parse_dataset: errors") {
  CHECK_THROWS_AS(parse_dataset_text(""), DataError);
  CHECK_THROWS_AS(parse_dataset_text("who,what\n1,2\n"), DataError);
  CHECK_THROWS_AS(parse_dataset_text("user_id,key_code,hold_ms,flight_ms,char\nu1,65,fast,0,a\n"), DataError);
  CHECK_THROWS_AS(parse_dataset_text("user_id,key_code,hold_ms,flight_ms,char\n"), DataError);
}

TEST_CASE("CSV round trip for both schemas") {
  SynthConfig sc;
  sc.num_users = 3;
  sc.samples_per_user = 4;
  sc.phrase_pool = {"hello, \"world\"", "a b", " lead and trail "};
  sc.seed = 5;
  const auto samples = synth_generate(sc);
  const auto ts = parse_dataset_text(write_dataset_text(samples, CsvFormat::kTimestamps));
  CHECK(ts == samples);
  const auto pre = parse_dataset_text(write_dataset_text(samples, CsvFormat::kPrecomputed));
  REQUIRE(pre.size() == samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) CHECK(pre[i] == without_timestamps(samples[i]));
}

TEST_CASE("build_vocab: frequency rule, coverage and bound") {
  const auto v = build_vocab({U"the the cat"}, 10);
  CHECK(v.has_subword(U"the"));
  CHECK(!v.has_subword(U"cat"));
  for (char32_t c : std::u32string(U"the cat")) CHECK(v.has_char(c));
  CHECK(v.subword(Vocabulary::kPad) == U"[PAD]");
  CHECK(v.subword(Vocabulary::kUnk) == U"[UNK]");
  CHECK(v.subword(Vocabulary::kCls) == U"[CLS]");
  CHECK(v.subword_count() <= 10 + 3 + 6);

  const auto capped = build_vocab({U"a a b b c c d d"}, 2);
  CHECK(capped.subword_count() <= 2 + 3 + 4);
  CHECK_THROWS(build_vocab({}, 5));
  CHECK(Vocabulary::from_json(v.to_json()) == v);
}

TEST_CASE("tokenize_align: alignment, count identity and fallback") {
  const auto vocab = build_vocab({U"the the cat"}, 10);
  NormStats stats;
  auto s = typed("u", "s", U"the");
  s.hold_ms = {100, 110, 90};
  const auto seq = tokenize_align(s, vocab, stats);
  REQUIRE(seq.tokens.size() == 2);
  CHECK(seq.tokens[0].subword_id == Vocabulary::kCls);
  CHECK(seq.tokens[0].char_ids.empty());
  CHECK(seq.tokens[1].subword_id == vocab.subword_id(U"the"));
  CHECK(seq.tokens[1].size() == 3);
  CHECK(seq.tokens[1].d == std::vector<double>{5.0, 5.0, 5.0});  // clipped at +5 under unit stats

  const auto oov = tokenize_align(typed("u", "s", U"zyx"), vocab, stats);
  REQUIRE(oov.tokens.size() == 4);
  for (std::size_t i = 1; i < 4; ++i) {
    CHECK(oov.tokens[i].size() == 1);
    CHECK(oov.tokens[i].char_ids[0] == Vocabulary::kCharUnk);
  }

  const auto sentence = typed("u", "s", U"the cat  the");
  const auto tok = tokenize_align(sentence, vocab, stats);
  CHECK(tok.char_total() == sentence.size());
  std::size_t spaces = 0;
  for (const auto& t : tok.tokens) spaces += t.size() == 1 && is_space(vocab.subword(t.subword_id)[0]);
  CHECK(spaces == 3);
}

TEST_CASE("tokenize_align: each character keeps its own timing") {
  const auto vocab = build_vocab({U"ab ab"}, 10);
  auto s = typed("u", "s", U"ab");
  s.hold_ms = {10, 20};
  s.flight_ms = {0, 30};
  NormStats st{15, 5, 15, 15};
  const auto seq = tokenize_align(s, vocab, st);
  CHECK(seq.tokens[1].d == std::vector<double>{-1.0, 1.0});
  CHECK(seq.tokens[1].f == std::vector<double>{-1.0, 1.0});
}

TEST_CASE("normalize_times: z-score, degenerate std, clip") {
  NormStats st{100, 20, 50, 10};
  CHECK(normalize_times(100, 50, st) == std::pair<double, double>{0.0, 0.0});
  CHECK(normalize_times(500, -500, st) == std::pair<double, double>{5.0, -5.0});

  // Hold values 10, 20, 30, 40: mean 25, population std sqrt(125).
  std::vector<KeystrokeSample> train(1);
  train[0].events.resize(4);
  train[0].hold_ms = {10, 20, 30, 40};
  train[0].flight_ms = {0, 5, 5, 5};
  const auto stats = compute_norm_stats(train);
  CHECK(stats.hold_mean == doctest::Approx(25.0));
  CHECK(stats.hold_std == doctest::Approx(std::sqrt(125.0)));
  CHECK(normalize_times(10, 0, stats).first == doctest::Approx(-15.0 / std::sqrt(125.0)));

  std::vector<KeystrokeSample> flat(1);
  flat[0].events.resize(3);
  flat[0].hold_ms = {70, 70, 70};
  flat[0].flight_ms = {0, 0, 0};
  const auto fs = compute_norm_stats(flat);
  CHECK(fs.hold_std == 0.0);
  CHECK(normalize_times(70, 0, fs).first == 0.0);
  CHECK(normalize_times(72, 0, fs).first == 2.0);
}

TEST_CASE("split_dataset: ratios, determinism, disjointness, errors") {
  std::vector<KeystrokeSample> samples;
  for (int i = 0; i < 10; ++i) samples.push_back(typed("ten", "s" + std::to_string(i), U"ab"));
  for (int i = 0; i < 4; ++i) samples.push_back(typed("four", "s" + std::to_string(i), U"ab"));
  const auto a = split_dataset(samples, 0.2, 3);
  auto count = [](const std::vector<KeystrokeSample>& v, const std::string& u) {
    return std::count_if(v.begin(), v.end(), [&](const auto& s) { return s.user_id == u; });
  };
  CHECK(count(a.test, "ten") == 2);
  CHECK(count(a.train, "ten") == 8);
  CHECK(count(a.test, "four") == 1);
  CHECK(count(a.train, "four") == 3);
  const auto b = split_dataset(samples, 0.2, 3);
  CHECK(a.hash() == b.hash());
  CHECK(a.train == b.train);

  std::set<std::pair<std::string, std::string>> tr;
  for (const auto& s : a.train) tr.insert({s.user_id, s.session_id});
  for (const auto& s : a.test) CHECK(tr.count({s.user_id, s.session_id}) == 0);
  CHECK(a.roster == std::vector<std::string>{"four", "ten"});

  samples.push_back(typed("lonely", "s0", U"ab"));
  try {
    split_dataset(samples, 0.2, 3);
    FAIL("expected an error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("lonely") != std::string::npos);
  }
}

TEST_CASE("prepare_split: statistics come from train only") {
  std::vector<KeystrokeSample> samples;
  for (int i = 0; i < 5; ++i) samples.push_back(typed("u1", "s" + std::to_string(i), U"ab", 100 + i));
  for (int i = 0; i < 5; ++i) samples.push_back(typed("u2", "s" + std::to_string(i), U"ab", 200 + i));
  const auto raw = split_dataset(samples, 0.2, 1);
  const auto split = prepare_split(raw, 8);
  CHECK(split.stats == compute_norm_stats(raw.train));
  std::vector<KeystrokeSample> all = raw.train;
  all.insert(all.end(), raw.test.begin(), raw.test.end());
  CHECK(!(split.stats == compute_norm_stats(all)));
  CHECK(split.train.size() + split.test.size() == samples.size());
  for (std::size_t i = 0; i < split.test.size(); ++i)
    CHECK(split.roster[split.test_labels[i]] == split.test[i].user_id);
}

TEST_CASE("synth_generate: determinism, truncation, profile ranges") {
  SynthConfig sc;
  sc.num_users = 4;
  sc.samples_per_user = 5;
  sc.phrase_pool = default_phrase_pool();
  sc.seed = 9;
  const auto a = synth_generate(sc);
  const auto b = synth_generate(sc);
  CHECK(a == b);
  CHECK(a.size() == 20);
  for (const auto& s : a)
    for (double h : s.hold_ms) CHECK(h >= 1.0);
  for (const auto& p : draw_profiles(sc)) {
    for (double h : p.hold_mean) CHECK((h >= 60 && h <= 200));
    for (double f : p.flight_mean) CHECK((f >= 20 && f <= 180));
    CHECK((p.jitter >= 5 && p.jitter <= 25));
  }
  sc.phrase_pool.clear();
  CHECK_THROWS(synth_generate(sc));
}

TEST_CASE("synth_generate: distant profiles are separable by the Manhattan baseline") {
  SynthConfig sc;
  sc.num_users = 2;
  sc.samples_per_user = 50;
  sc.phrase_pool = default_phrase_pool();
  sc.seed = 21;
  for (double m : {80.0, 180.0}) {
    TypingProfile p;
    p.hold_mean = {m, m, m};
    p.flight_mean = {m, m, m};
    p.jitter = 10;
    sc.profiles.push_back(p);
  }
  const auto raw = split_dataset(synth_generate(sc), 0.2, 21);
  REQUIRE(raw.test.size() == 20);
  const auto profiles = build_manhattan_profiles(raw.train);
  for (const auto& s : raw.test) CHECK(manhattan_classify(manhattan_features(s), profiles).user_id == s.user_id);
}
