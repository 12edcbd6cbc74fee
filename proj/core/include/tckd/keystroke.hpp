// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace tckd {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct KeystrokeEvent {
  int key_code = 0;
  std::optional<char32_t> ch;
  double press_ms = 0.0;
  double release_ms = 0.0;

  friend bool operator==(const KeystrokeEvent&, const KeystrokeEvent&) = default;
};

/// Which interval counts as "flight" between consecutive keys.
enum class FlightMode { kReleaseToPress, kPressToPress };

FlightMode parse_flight_mode(const std::string& s);
std::string to_string(FlightMode m);

/// One typing session of one user. hold_ms/flight_ms are aligned with events.
/// Samples read from the precomputed schema carry no timestamps
/// (has_timestamps == false, press/release left at zero).
struct KeystrokeSample {
  std::string user_id;
  std::string session_id;
  std::vector<KeystrokeEvent> events;
  std::vector<double> hold_ms;
  std::vector<double> flight_ms;
  bool has_timestamps = true;

  std::size_t size() const { return events.size(); }
  std::u32string text() const;  // characters of events that carry one
  friend bool operator==(const KeystrokeSample&, const KeystrokeSample&) = default;
};

struct KeyTimings {
  std::vector<double> hold_ms;
  std::vector<double> flight_ms;
};

/// hold[j] = release[j] - press[j]; flight[0] = 0 and for j >= 1 either
/// press[j] - release[j-1] (may be negative when keys overlap) or
/// press[j] - press[j-1].
KeyTimings derive_times(const std::vector<KeystrokeEvent>& events, FlightMode mode = FlightMode::kReleaseToPress);

/// Fills hold_ms/flight_ms of a timestamped sample.
void derive_sample_times(KeystrokeSample& sample, FlightMode mode = FlightMode::kReleaseToPress);

/// Same sample as it would read back from the precomputed schema.
KeystrokeSample without_timestamps(const KeystrokeSample& s);

// ---------------------------------------------------------------------------
// CSV interchange

enum class CsvFormat { kTimestamps, kPrecomputed };

std::string to_string(CsvFormat f);
CsvFormat parse_csv_format(const std::string& s);

/// Reads a keystroke CSV. Without `format` the schema is detected from the
/// header. Groups rows into samples by (user_id, session_id) when a
/// session_id column exists, otherwise by runs of one user separated by
/// blank lines.
std::vector<KeystrokeSample> parse_dataset(const std::filesystem::path& path, std::optional<CsvFormat> format = {},
                                           FlightMode mode = FlightMode::kReleaseToPress);
std::vector<KeystrokeSample> parse_dataset_text(const std::string& text, std::optional<CsvFormat> format = {},
                                                FlightMode mode = FlightMode::kReleaseToPress);

std::string write_dataset_text(const std::vector<KeystrokeSample>& samples, CsvFormat format);
void write_dataset(const std::filesystem::path& path, const std::vector<KeystrokeSample>& samples, CsvFormat format);

// UTF-8 helpers shared by the data layer.
std::string utf8_encode(char32_t c);
std::string utf8_encode(const std::u32string& s);
std::u32string utf8_decode(const std::string& s);

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

}  // namespace tckd
