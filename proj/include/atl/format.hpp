#pragma once

#include <charconv>
#include <string>

namespace atl {

/// Fixed-point text with `digits` decimals; locale-independent.
inline std::string fixed(double value, int digits = 6) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::fixed, digits);
  return std::string(buf, res.ptr);
}

/// Shortest text that round-trips to the same double.
inline std::string exact(double value) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

}  // namespace atl
