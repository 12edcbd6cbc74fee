// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tckd/keystroke.hpp"

namespace tckd {

/// Key classes with their own timing means in a synthetic profile.
enum class KeyClass : std::size_t { kLetter = 0, kSpace = 1, kOther = 2 };
inline constexpr std::size_t kNumKeyClasses = 3;

KeyClass key_class(char32_t c);
/// Virtual-key style code: uppercase ASCII for letters, code point otherwise.
int key_code_for(char32_t c);

struct TypingProfile {
  std::array<double, kNumKeyClasses> hold_mean{};
  std::array<double, kNumKeyClasses> flight_mean{};
  double jitter = 10.0;
};

struct SynthConfig {
  std::size_t num_users = 8;
  std::size_t samples_per_user = 40;
  std::vector<std::string> phrase_pool;
  std::uint64_t seed = 0;
  /// Minimum mean absolute difference (ms) between any two users' profile
  /// means; profiles are redrawn until satisfied. 0 disables.
  double min_profile_separation = 0.0;
  /// Fixed profiles (one per user) instead of random draws.
  std::vector<TypingProfile> profiles;
};

std::vector<std::string> default_phrase_pool();

/// Random profile: hold means in [60, 200], flight means in [20, 180],
/// jitter in [5, 25] ms.
std::vector<TypingProfile> draw_profiles(const SynthConfig& cfg);

/// Per user a latent profile; every keystroke samples hold and flight as a
/// Gaussian around its class mean, hold truncated at 1 ms, both rounded to
/// whole milliseconds. Texts come from the shared phrase pool.
std::vector<KeystrokeSample> synth_generate(const SynthConfig& cfg);

}  // namespace tckd
