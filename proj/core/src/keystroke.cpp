// SPDX-License-Identifier: Apache-2.0
#include "tckd/keystroke.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

namespace tckd {

FlightMode parse_flight_mode(const std::string& s) {
  if (s == "release_to_press") return FlightMode::kReleaseToPress;
  if (s == "press_to_press") return FlightMode::kPressToPress;
  throw std::invalid_argument("unknown flight_mode '" + s + "'");
}

std::string to_string(FlightMode m) { return m == FlightMode::kReleaseToPress ? "release_to_press" : "press_to_press"; }

std::string to_string(CsvFormat f) { return f == CsvFormat::kTimestamps ? "timestamps" : "precomputed"; }

CsvFormat parse_csv_format(const std::string& s) {
  if (s == "timestamps") return CsvFormat::kTimestamps;
  if (s == "precomputed") return CsvFormat::kPrecomputed;
  throw std::invalid_argument("unknown csv format '" + s + "'");
}

std::u32string KeystrokeSample::text() const {
  std::u32string out;
  for (const auto& e : events)
    if (e.ch) out.push_back(*e.ch);
  return out;
}

KeyTimings derive_times(const std::vector<KeystrokeEvent>& events, FlightMode mode) {
  KeyTimings t;
  t.hold_ms.reserve(events.size());
  t.flight_ms.reserve(events.size());
  for (std::size_t j = 0; j < events.size(); ++j) {
    const auto& e = events[j];
    if (e.release_ms < e.press_ms) {
      throw DataError("malformed event " + std::to_string(j) + ": release " + format_double(e.release_ms) +
                      " before press " + format_double(e.press_ms));
    }
    t.hold_ms.push_back(e.release_ms - e.press_ms);
    if (j == 0) {
      t.flight_ms.push_back(0.0);
    } else if (mode == FlightMode::kReleaseToPress) {
      t.flight_ms.push_back(e.press_ms - events[j - 1].release_ms);
    } else {
      t.flight_ms.push_back(e.press_ms - events[j - 1].press_ms);
    }
  }
  return t;
}

void derive_sample_times(KeystrokeSample& sample, FlightMode mode) {
  auto t = derive_times(sample.events, mode);
  sample.hold_ms = std::move(t.hold_ms);
  sample.flight_ms = std::move(t.flight_ms);
  sample.has_timestamps = true;
}

KeystrokeSample without_timestamps(const KeystrokeSample& s) {
  KeystrokeSample out = s;
  for (auto& e : out.events) e.press_ms = e.release_ms = 0.0;
  out.has_timestamps = false;
  return out;
}

// ---------------------------------------------------------------------------

std::string utf8_encode(char32_t c) {
  std::string out;
  if (c < 0x80) {
    out.push_back(static_cast<char>(c));
  } else if (c < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (c >> 6)));
    out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  } else if (c < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (c >> 12)));
    out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (c >> 18)));
    out.push_back(static_cast<char>(0x80 | ((c >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  }
  return out;
}

std::string utf8_encode(const std::u32string& s) {
  std::string out;
  for (char32_t c : s) out += utf8_encode(c);
  return out;
}

std::u32string utf8_decode(const std::string& s) {
  std::u32string out;
  for (std::size_t i = 0; i < s.size();) {
    const auto b = static_cast<unsigned char>(s[i]);
    int len = b < 0x80 ? 1 : (b >> 5) == 0x6 ? 2 : (b >> 4) == 0xE ? 3 : (b >> 3) == 0x1E ? 4 : 0;
    if (len == 0 || i + len > s.size()) throw DataError("invalid UTF-8 sequence");
    char32_t c = len == 1 ? b : len == 2 ? (b & 0x1F) : len == 3 ? (b & 0x0F) : (b & 0x07);
    for (int k = 1; k < len; ++k) {
      const auto cb = static_cast<unsigned char>(s[i + k]);
      if ((cb >> 6) != 0x2) throw DataError("invalid UTF-8 continuation byte");
      c = (c << 6) | (cb & 0x3F);
    }
    out.push_back(c);
    i += len;
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (quoted) throw DataError("line " + std::to_string(line_no) + ": unterminated quoted field");
  fields.push_back(std::move(cur));
  return fields;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos && (s.empty() || (s.front() != ' ' && s.back() != ' '))) {
    return s;
  }
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

double parse_number(const std::string& s, const char* column, std::size_t line_no) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || s.empty()) {
    throw DataError("line " + std::to_string(line_no) + ": non-numeric " + column + " '" + s + "'");
  }
  return v;
}

struct Columns {
  CsvFormat format;
  int user = -1, key = -1, a = -1, b = -1, ch = -1, session = -1;
  std::size_t width = 0;
};

Columns resolve_header(const std::vector<std::string>& header, std::optional<CsvFormat> want) {
  std::map<std::string, int> pos;
  for (std::size_t i = 0; i < header.size(); ++i) pos[header[i]] = static_cast<int>(i);
  auto has = [&](const char* n) { return pos.count(n) != 0; };
  Columns c;
  c.width = header.size();
  CsvFormat detected;
  if (has("press_ms") && has("release_ms")) {
    detected = CsvFormat::kTimestamps;
  } else if (has("hold_ms") && has("flight_ms")) {
    detected = CsvFormat::kPrecomputed;
  } else {
    std::string h;
    for (const auto& x : header) h += (h.empty() ? "" : ",") + x;
    throw DataError("unknown schema: header '" + h + "'");
  }
  if (want && *want != detected) {
    throw DataError("unknown schema: expected " + to_string(*want) + " header, found " + to_string(detected));
  }
  if (!has("user_id") || !has("key_code") || !has("char")) throw DataError("unknown schema: missing required column");
  const std::size_t expected = 5 + (has("session_id") ? 1 : 0);
  if (header.size() != expected) throw DataError("unknown schema: unexpected columns in header");
  c.format = detected;
  c.user = pos["user_id"];
  c.key = pos["key_code"];
  c.ch = pos["char"];
  c.a = detected == CsvFormat::kTimestamps ? pos["press_ms"] : pos["hold_ms"];
  c.b = detected == CsvFormat::kTimestamps ? pos["release_ms"] : pos["flight_ms"];
  if (has("session_id")) c.session = pos["session_id"];
  return c;
}

}  // namespace

std::vector<KeystrokeSample> parse_dataset_text(const std::string& text, std::optional<CsvFormat> format,
                                                FlightMode mode) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::optional<Columns> cols;
  std::vector<KeystrokeSample> samples;
  std::map<std::pair<std::string, std::string>, std::size_t> by_session;
  std::map<std::string, std::size_t> sessions_per_user;
  bool break_pending = true;

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!cols) {
      if (line.empty()) continue;
      cols = resolve_header(split_csv_line(line, line_no), format);
      continue;
    }
    if (line.empty()) {
      break_pending = true;
      continue;
    }
    auto f = split_csv_line(line, line_no);
    if (f.size() != cols->width) {
      throw DataError("line " + std::to_string(line_no) + ": expected " + std::to_string(cols->width) +
                      " fields, got " + std::to_string(f.size()));
    }
    const std::string& user = f[cols->user];
    KeystrokeEvent ev;
    ev.key_code = static_cast<int>(parse_number(f[cols->key], "key_code", line_no));
    const auto chars = utf8_decode(f[cols->ch]);
    if (chars.size() > 1)
      throw DataError("line " + std::to_string(line_no) + ": char field holds more than one character");
    if (!chars.empty()) ev.ch = chars[0];
    const double a = parse_number(f[cols->a], cols->format == CsvFormat::kTimestamps ? "press_ms" : "hold_ms", line_no);
    const double b =
        parse_number(f[cols->b], cols->format == CsvFormat::kTimestamps ? "release_ms" : "flight_ms", line_no);

    KeystrokeSample* target = nullptr;
    if (cols->session >= 0) {
      const auto key = std::make_pair(user, f[cols->session]);
      auto it = by_session.find(key);
      if (it == by_session.end()) {
        it = by_session.emplace(key, samples.size()).first;
        samples.push_back({});
        samples.back().user_id = user;
        samples.back().session_id = key.second;
      }
      target = &samples[it->second];
    } else {
      if (break_pending || samples.empty() || samples.back().user_id != user) {
        samples.push_back({});
        samples.back().user_id = user;
        samples.back().session_id = "s" + std::to_string(sessions_per_user[user]++);
      }
      target = &samples.back();
    }
    break_pending = false;

    if (cols->format == CsvFormat::kTimestamps) {
      ev.press_ms = a;
      ev.release_ms = b;
      target->events.push_back(ev);
    } else {
      if (a < 0) throw DataError("line " + std::to_string(line_no) + ": negative hold_ms");
      target->events.push_back(ev);
      target->hold_ms.push_back(a);
      target->flight_ms.push_back(b);
      target->has_timestamps = false;
    }
  }
  if (!cols) throw DataError("empty dataset file");
  if (samples.empty()) throw DataError("dataset has a header but no rows");
  if (cols->format == CsvFormat::kTimestamps) {
    for (auto& s : samples) derive_sample_times(s, mode);
  }
  return samples;
}

std::vector<KeystrokeSample> parse_dataset(const std::filesystem::path& path, std::optional<CsvFormat> format,
                                           FlightMode mode) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::ios_base::failure("cannot open dataset: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_dataset_text(ss.str(), format, mode);
}

std::string write_dataset_text(const std::vector<KeystrokeSample>& samples, CsvFormat format) {
  std::ostringstream os;
  if (format == CsvFormat::kTimestamps) {
    os << "user_id,key_code,press_ms,release_ms,char,session_id\n";
  } else {
    os << "user_id,key_code,hold_ms,flight_ms,char,session_id\n";
  }
  for (const auto& s : samples) {
    if (format == CsvFormat::kTimestamps && !s.has_timestamps) {
      throw DataError("sample " + s.user_id + "/" + s.session_id + " has no timestamps to write");
    }
    for (std::size_t j = 0; j < s.events.size(); ++j) {
      const auto& e = s.events[j];
      const double a = format == CsvFormat::kTimestamps ? e.press_ms : s.hold_ms.at(j);
      const double b = format == CsvFormat::kTimestamps ? e.release_ms : s.flight_ms.at(j);
      os << csv_field(s.user_id) << ',' << e.key_code << ',' << format_double(a) << ',' << format_double(b) << ','
         << csv_field(e.ch ? utf8_encode(*e.ch) : std::string()) << ',' << csv_field(s.session_id) << '\n';
    }
  }
  return os.str();
}

void write_dataset(const std::filesystem::path& path, const std::vector<KeystrokeSample>& samples, CsvFormat format) {
  const auto text = write_dataset_text(samples, format);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::ios_base::failure("cannot open for writing: " + path.string());
  os << text;
  if (!os) throw std::ios_base::failure("write failed: " + path.string());
}

}  // namespace tckd
