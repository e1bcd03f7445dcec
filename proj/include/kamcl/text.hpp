#pragma once

#include <charconv>
#include <cstdint>
#include <system_error>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kamcl/error.hpp"

namespace kamcl {

/// Bidirectional map between raw string ids and dense indices (first-seen order).
class IdMap {
 public:
  std::size_t intern(const std::string& raw) {
    auto [it, inserted] = index_.try_emplace(raw, raw_.size());
    if (inserted) raw_.push_back(raw);
    return it->second;
  }
  std::optional<std::size_t> find(const std::string& raw) const {
    auto it = index_.find(raw);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  const std::string& raw(std::size_t index) const { return raw_.at(index); }
  std::size_t size() const { return raw_.size(); }
  const std::vector<std::string>& raw_ids() const { return raw_; }

  /// Ids "<prefix>0", "<prefix>1", ... for generated data.
  static IdMap sequential(std::size_t n, const std::string& prefix) {
    IdMap m;
    for (std::size_t i = 0; i < n; ++i) m.intern(prefix + std::to_string(i));
    return m;
  }

  bool operator==(const IdMap& o) const { return raw_ == o.raw_; }

 private:
  std::vector<std::string> raw_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r' || s.front() == '\n'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '\n')) s.remove_suffix(1);
  return s;
}

/// Calls `row(fields, lineno)` for every non-blank, non-'#' line of a TSV stream.
inline void for_each_tsv_row(std::istream& in,
                             const std::function<void(const std::vector<std::string_view>&, std::size_t)>& row) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || line.front() == '#') continue;
    row(split_tabs(line), lineno);
  }
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path);
  return in;
}

/// Shortest decimal form that round-trips to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw ContractError("format_double failed");
  return std::string(buf, ptr);
}

inline double parse_double(std::string_view s, std::size_t line = 0) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ParseError("bad number '" + std::string(s) + "'", line);
  return v;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

inline std::string read_file(const std::string& path) {
  auto in = open_input(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace kamcl
