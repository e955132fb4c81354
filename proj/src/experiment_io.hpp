#pragma once

// Plain comma-separated text shared by the run and report stages. Fields
// never contain commas, quotes or newlines; names are validated upstream.

#include <charconv>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "clopa/errors.hpp"

namespace clopa::detail {

inline std::vector<std::string> split_csv(std::string_view line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    cells.emplace_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

template <class T>
T parse_number(const std::string& cell, const std::string& ctx) {
  T v{};
  const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (res.ec != std::errc{} || res.ptr != cell.data() + cell.size())
    throw ConfigError(ctx + ": not a number: '" + cell + "'");
  return v;
}

inline double parse_double(const std::string& cell, const std::string& ctx) { return parse_number<double>(cell, ctx); }
inline std::uint64_t parse_u64(const std::string& cell, const std::string& ctx) {
  return parse_number<std::uint64_t>(cell, ctx);
}
inline int parse_int(const std::string& cell, const std::string& ctx) { return parse_number<int>(cell, ctx); }

}  // namespace clopa::detail
