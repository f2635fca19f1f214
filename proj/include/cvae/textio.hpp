#pragma once

// Deterministic, locale-free text formatting for everything this project
// writes to disk (checkpoints, CSVs, SVGs). Doubles use the shortest
// round-trip representation so a value parsed back compares bit-equal.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>

namespace cvae {

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  if (res.ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, res.ptr);
}

inline std::string format_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

inline double parse_double(std::string_view s) {
  double out = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw std::runtime_error("parse_double: bad value '" + std::string(s) + "'");
  }
  return out;
}

inline unsigned long long parse_u64(std::string_view s) {
  unsigned long long out = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw std::runtime_error("parse_u64: bad value '" + std::string(s) + "'");
  }
  return out;
}

inline void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace cvae
