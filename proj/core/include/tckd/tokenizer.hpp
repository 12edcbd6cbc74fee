// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tckd/keystroke.hpp"

namespace tckd {

/// Subword and character inventories. Subword ids 0..2 are [PAD], [UNK],
/// [CLS]; character ids 0..1 are pad and unknown.
class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kCls = 2;
  static constexpr std::size_t kCharPad = 0;
  static constexpr std::size_t kCharUnk = 1;

  Vocabulary();

  std::size_t subword_count() const { return subwords_.size(); }
  std::size_t char_count() const { return chars_.size() + 2; }
  std::size_t max_subword_length() const { return max_len_; }

  /// kUnk when absent.
  std::size_t subword_id(const std::u32string& piece) const;
  bool has_subword(const std::u32string& piece) const { return subword_ids_.count(piece) != 0; }
  const std::u32string& subword(std::size_t id) const { return subwords_.at(id); }
  /// kCharUnk when absent.
  std::size_t char_id(char32_t c) const;
  bool has_char(char32_t c) const { return char_ids_.count(c) != 0; }

  std::size_t add_subword(const std::u32string& piece);
  std::size_t add_char(char32_t c);

  /// Compact JSON text: {"subwords":[...],"chars":[...]} (UTF-8 strings, id order).
  std::string to_json() const;
  static Vocabulary from_json(const std::string& text);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.subwords_ == b.subwords_ && a.chars_ == b.chars_;
  }

 private:
  std::vector<std::u32string> subwords_;
  std::map<std::u32string, std::size_t> subword_ids_;
  std::vector<char32_t> chars_;
  std::map<char32_t, std::size_t> char_ids_;
  std::size_t max_len_ = 1;
};

bool is_space(char32_t c);

/// Word inventory: whitespace-delimited words occurring at least twice
/// (highest frequency first, ties lexicographic) up to max_subwords, then
/// every distinct corpus character as a single-character unit.
Vocabulary build_vocab(const std::vector<std::u32string>& corpus, std::size_t max_subwords);

/// Per-feature z-score statistics taken from the training split.
struct NormStats {
  double hold_mean = 0.0;
  double hold_std = 1.0;
  double flight_mean = 0.0;
  double flight_std = 1.0;

  friend bool operator==(const NormStats&, const NormStats&) = default;
};

NormStats compute_norm_stats(const std::vector<KeystrokeSample>& train);

inline constexpr double kNormClip = 5.0;

/// (d, f) z-scored and clipped to [-5, 5]. A zero std leaves that feature
/// centred but unscaled.
std::pair<double, double> normalize_times(double hold_ms, double flight_ms, const NormStats& stats);

struct Token {
  std::size_t subword_id = Vocabulary::kUnk;
  std::vector<std::size_t> char_ids;  // empty for [CLS] / [PAD]
  std::vector<double> d;              // normalized hold per char
  std::vector<double> f;              // normalized flight per char

  std::size_t size() const { return char_ids.size(); }
};

struct TokenizedSequence {
  std::string user_id;
  std::string session_id;
  std::vector<Token> tokens;  // tokens[0] is [CLS]

  std::size_t char_total() const;
};

/// Greedy longest-match segmentation of the typed stream. Whitespace keys
/// and keys without a character become single-character tokens; [CLS] is
/// prepended with no characters.
TokenizedSequence tokenize_align(const KeystrokeSample& sample, const Vocabulary& vocab, const NormStats& stats);

}  // namespace tckd
