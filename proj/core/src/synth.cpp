// SPDX-License-Identifier: Apache-2.0
#include "tckd/synth.hpp"

#include <cmath>
#include <cstdio>
#include <random>

namespace tckd {

KeyClass key_class(char32_t c) {
  if ((c >= U'a' && c <= U'z') || (c >= U'A' && c <= U'Z')) return KeyClass::kLetter;
  if (c == U' ') return KeyClass::kSpace;
  return KeyClass::kOther;
}

int key_code_for(char32_t c) {
  if (c >= U'a' && c <= U'z') return static_cast<int>(c - U'a' + U'A');
  return static_cast<int>(c);
}

std::vector<std::string> default_phrase_pool() {
  return {
      "the quick brown fox jumps over the lazy dog",
      "please send the report before the meeting",
      "my password is not the name of my dog",
      "we will meet at the station at nine",
      "the weather is nice for a walk today",
      "open the door and close the window",
      "she reads the news every morning",
      "keep the change and have a good day",
      "the train leaves in ten minutes",
      "call me when you get home tonight",
      "the cat sleeps on the warm sofa",
      "i need to buy milk and bread",
  };
}

namespace {

double profile_distance(const TypingProfile& a, const TypingProfile& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < kNumKeyClasses; ++k) {
    s += std::abs(a.hold_mean[k] - b.hold_mean[k]) + std::abs(a.flight_mean[k] - b.flight_mean[k]);
  }
  return s / (2.0 * kNumKeyClasses);
}

TypingProfile draw_one(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> hold(60.0, 200.0), flight(20.0, 180.0), jitter(5.0, 25.0);
  TypingProfile p;
  for (auto& h : p.hold_mean) h = hold(rng);
  for (auto& f : p.flight_mean) f = flight(rng);
  p.jitter = jitter(rng);
  return p;
}

}  // namespace

std::vector<TypingProfile> draw_profiles(const SynthConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  std::vector<TypingProfile> out;
  constexpr int kMaxRedraws = 10000;
  while (out.size() < cfg.num_users) {
    TypingProfile p = draw_one(rng);
    bool ok = true;
    for (int tries = 0; cfg.min_profile_separation > 0.0; ++tries) {
      ok = true;
      for (const auto& q : out) ok = ok && profile_distance(p, q) >= cfg.min_profile_separation;
      if (ok) break;
      if (tries >= kMaxRedraws) {
        throw std::invalid_argument("synth: cannot place " + std::to_string(cfg.num_users) +
                                    " profiles with separation " + std::to_string(cfg.min_profile_separation));
      }
      p = draw_one(rng);
    }
    out.push_back(p);
  }
  return out;
}

std::vector<KeystrokeSample> synth_generate(const SynthConfig& cfg) {
  if (cfg.num_users < 2) throw std::invalid_argument("synth: num_users must be at least 2");
  if (cfg.phrase_pool.empty()) throw std::invalid_argument("synth: empty phrase pool");
  if (!cfg.profiles.empty() && cfg.profiles.size() != cfg.num_users) {
    throw std::invalid_argument("synth: profiles given for " + std::to_string(cfg.profiles.size()) +
                                " users, expected " + std::to_string(cfg.num_users));
  }
  const auto profiles = cfg.profiles.empty() ? draw_profiles(cfg) : cfg.profiles;
  std::vector<std::u32string> pool;
  for (const auto& p : cfg.phrase_pool) {
    pool.push_back(utf8_decode(p));
    if (pool.back().empty()) throw std::invalid_argument("synth: empty phrase in pool");
  }

  // Separate stream from profile drawing so explicit profiles and drawn ones
  // produce the same texts for the same seed.
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::vector<KeystrokeSample> out;
  for (std::size_t u = 0; u < cfg.num_users; ++u) {
    const auto& prof = profiles[u];
    char uid[16];
    std::snprintf(uid, sizeof(uid), "u%02zu", u);
    std::normal_distribution<double> noise(0.0, prof.jitter);
    for (std::size_t s = 0; s < cfg.samples_per_user; ++s) {
      KeystrokeSample sample;
      sample.user_id = uid;
      sample.session_id = "s" + std::to_string(s);
      const auto& text = pool[pick(rng)];
      double prev_release = 0.0;
      double prev_hold = 0.0;
      for (std::size_t j = 0; j < text.size(); ++j) {
        const auto cls = static_cast<std::size_t>(key_class(text[j]));
        const double hold = std::max(1.0, std::round(prof.hold_mean[cls] + noise(rng)));
        double flight = std::round(prof.flight_mean[cls] + noise(rng));
        KeystrokeEvent ev;
        ev.key_code = key_code_for(text[j]);
        ev.ch = text[j];
        if (j == 0) {
          ev.press_ms = 0.0;
        } else {
          flight = std::max(flight, -prev_hold);  // keep presses ordered
          ev.press_ms = prev_release + flight;
        }
        ev.release_ms = ev.press_ms + hold;
        prev_release = ev.release_ms;
        prev_hold = hold;
        sample.events.push_back(ev);
      }
      derive_sample_times(sample, FlightMode::kReleaseToPress);
      out.push_back(std::move(sample));
    }
  }
  return out;
}

}  // namespace tckd
