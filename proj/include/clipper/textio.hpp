#pragma once

#include <charconv>
#include <string>

#include "clipper/error.hpp"

namespace clipper {

// Shortest round-trip decimal form; keeps text output bit-reproducible.
inline std::string fmt_double(double x) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
  double out = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw ConfigError("not a number: '" + s + "'");
  return out;
}

}  // namespace clipper
