// SPDX-License-Identifier: Apache-2.0
#include "tckd/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

namespace tckd {

Vocabulary::Vocabulary() {
  for (const char* s : {"[PAD]", "[UNK]", "[CLS]"}) {
    std::u32string piece(s, s + std::char_traits<char>::length(s));
    subword_ids_.emplace(piece, subwords_.size());
    subwords_.push_back(piece);
  }
}

std::size_t Vocabulary::subword_id(const std::u32string& piece) const {
  auto it = subword_ids_.find(piece);
  return it == subword_ids_.end() ? kUnk : it->second;
}

std::size_t Vocabulary::char_id(char32_t c) const {
  auto it = char_ids_.find(c);
  return it == char_ids_.end() ? kCharUnk : it->second;
}

std::size_t Vocabulary::add_subword(const std::u32string& piece) {
  auto it = subword_ids_.find(piece);
  if (it != subword_ids_.end()) return it->second;
  const std::size_t id = subwords_.size();
  subword_ids_.emplace(piece, id);
  subwords_.push_back(piece);
  max_len_ = std::max(max_len_, piece.size());
  return id;
}

std::size_t Vocabulary::add_char(char32_t c) {
  auto it = char_ids_.find(c);
  if (it != char_ids_.end()) return it->second;
  const std::size_t id = chars_.size() + 2;
  char_ids_.emplace(c, id);
  chars_.push_back(c);
  return id;
}

std::string Vocabulary::to_json() const {
  nlohmann::json j;
  j["subwords"] = nlohmann::json::array();
  for (std::size_t i = 3; i < subwords_.size(); ++i) j["subwords"].push_back(utf8_encode(subwords_[i]));
  j["chars"] = nlohmann::json::array();
  for (char32_t c : chars_) j["chars"].push_back(utf8_encode(c));
  return j.dump();
}

Vocabulary Vocabulary::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  Vocabulary v;
  for (const auto& s : j.at("subwords")) v.add_subword(utf8_decode(s.get<std::string>()));
  for (const auto& s : j.at("chars")) {
    const auto c = utf8_decode(s.get<std::string>());
    if (c.size() != 1) throw DataError("vocabulary: char entry is not a single character");
    v.add_char(c[0]);
  }
  return v;
}

bool is_space(char32_t c) { return c == U' ' || c == U'\t' || c == U'\n' || c == U'\r'; }

Vocabulary build_vocab(const std::vector<std::u32string>& corpus, std::size_t max_subwords) {
  std::map<std::u32string, std::size_t> freq;
  std::map<char32_t, bool> seen;
  bool any = false;
  for (const auto& text : corpus) {
    std::u32string word;
    for (char32_t c : text) {
      any = true;
      seen[c] = true;
      if (is_space(c)) {
        if (!word.empty()) ++freq[word];
        word.clear();
      } else {
        word.push_back(c);
      }
    }
    if (!word.empty()) ++freq[word];
  }
  if (!any) throw DataError("build_vocab: empty corpus");

  std::vector<std::pair<std::u32string, std::size_t>> words;
  for (const auto& [w, n] : freq)
    if (n >= 2) words.emplace_back(w, n);
  std::sort(words.begin(), words.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  if (words.size() > max_subwords) words.resize(max_subwords);

  Vocabulary v;
  for (const auto& [w, _] : words) v.add_subword(w);
  for (const auto& [c, _] : seen) {
    v.add_char(c);
    v.add_subword(std::u32string(1, c));
  }
  return v;
}

NormStats compute_norm_stats(const std::vector<KeystrokeSample>& train) {
  double n = 0, sd = 0, sf = 0;
  for (const auto& s : train) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      sd += s.hold_ms[j];
      sf += s.flight_ms[j];
      n += 1;
    }
  }
  if (n == 0) throw DataError("compute_norm_stats: no training events");
  NormStats st;
  st.hold_mean = sd / n;
  st.flight_mean = sf / n;
  double vd = 0, vf = 0;
  for (const auto& s : train) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      vd += (s.hold_ms[j] - st.hold_mean) * (s.hold_ms[j] - st.hold_mean);
      vf += (s.flight_ms[j] - st.flight_mean) * (s.flight_ms[j] - st.flight_mean);
    }
  }
  st.hold_std = std::sqrt(vd / n);
  st.flight_std = std::sqrt(vf / n);
  return st;
}

std::pair<double, double> normalize_times(double hold_ms, double flight_ms, const NormStats& stats) {
  auto z = [](double x, double mu, double sd) {
    const double v = sd > 0.0 ? (x - mu) / sd : (x - mu);
    return std::clamp(v, -kNormClip, kNormClip);
  };
  return {z(hold_ms, stats.hold_mean, stats.hold_std), z(flight_ms, stats.flight_mean, stats.flight_std)};
}

std::size_t TokenizedSequence::char_total() const {
  std::size_t n = 0;
  for (const auto& t : tokens) n += t.size();
  return n;
}

TokenizedSequence tokenize_align(const KeystrokeSample& sample, const Vocabulary& vocab, const NormStats& stats) {
  if (sample.hold_ms.size() != sample.events.size() || sample.flight_ms.size() != sample.events.size()) {
    throw DataError("tokenize_align: sample " + sample.user_id + "/" + sample.session_id + " has no derived times");
  }
  TokenizedSequence seq;
  seq.user_id = sample.user_id;
  seq.session_id = sample.session_id;
  seq.tokens.push_back(Token{Vocabulary::kCls, {}, {}, {}});

  auto push_char = [&](Token& tok, std::size_t event_index, std::size_t char_id) {
    const auto [d, f] = normalize_times(sample.hold_ms[event_index], sample.flight_ms[event_index], stats);
    tok.char_ids.push_back(char_id);
    tok.d.push_back(d);
    tok.f.push_back(f);
  };

  std::vector<std::size_t> run;  // event indices of the current word
  auto flush = [&] {
    std::size_t p = 0;
    while (p < run.size()) {
      std::size_t best = 0;
      std::size_t best_id = Vocabulary::kUnk;
      const std::size_t longest = std::min(vocab.max_subword_length(), run.size() - p);
      std::u32string piece;
      for (std::size_t k = 0; k < longest; ++k) piece.push_back(*sample.events[run[p + k]].ch);
      for (std::size_t len = longest; len >= 1; --len) {
        piece.resize(len);
        if (vocab.has_subword(piece)) {
          best = len;
          best_id = vocab.subword_id(piece);
          break;
        }
      }
      if (best == 0) best = 1;  // unknown character: [UNK] unit
      Token tok;
      tok.subword_id = best_id;
      for (std::size_t k = 0; k < best; ++k) {
        const auto& ev = sample.events[run[p + k]];
        push_char(tok, run[p + k], vocab.char_id(*ev.ch));
      }
      seq.tokens.push_back(std::move(tok));
      p += best;
    }
    run.clear();
  };

  for (std::size_t j = 0; j < sample.events.size(); ++j) {
    const auto& ev = sample.events[j];
    if (ev.ch && !is_space(*ev.ch)) {
      run.push_back(j);
      continue;
    }
    flush();
    Token tok;
    if (ev.ch) {
      tok.subword_id = vocab.subword_id(std::u32string(1, *ev.ch));
      push_char(tok, j, vocab.char_id(*ev.ch));
    } else {
      tok.subword_id = Vocabulary::kUnk;
      push_char(tok, j, Vocabulary::kCharUnk);
    }
    seq.tokens.push_back(std::move(tok));
  }
  flush();
  return seq;
}

}  // namespace tckd
