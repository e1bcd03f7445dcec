#pragma once

// Plain-text key-value files:
//
//   # comment
//   section.key = value
//   [section]
//   key = value          (read as section.key)
//
// Keys keep file order. Used for configs, synthetic-data specs and run manifests.

#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "kamcl/error.hpp"
#include "kamcl/text.hpp"

namespace kamcl {

struct KvEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
  bool operator==(const KvEntry& o) const { return key == o.key && value == o.value; }
};

using KvList = std::vector<KvEntry>;

inline KvList parse_kv(std::istream& in) {
  KvList out;
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto s = trim(line);
    if (s.empty() || s.front() == '#') continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ParseError("unterminated section header", lineno);
      section = std::string(trim(s.substr(1, s.size() - 2)));
      continue;
    }
    auto eq = s.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected 'key = value'", lineno);
    std::string key(trim(s.substr(0, eq)));
    std::string value(trim(s.substr(eq + 1)));
    if (key.empty()) throw ParseError("empty key", lineno);
    if (!section.empty()) key = section + "." + key;
    out.push_back({std::move(key), std::move(value), lineno});
  }
  return out;
}

inline KvList parse_kv_string(const std::string& text) {
  std::istringstream in(text);
  return parse_kv(in);
}

inline void write_kv(std::ostream& out, const KvList& kv) {
  for (const auto& e : kv) out << e.key << " = " << e.value << '\n';
}

inline std::string to_kv_string(const KvList& kv) {
  std::ostringstream out;
  write_kv(out, kv);
  return out.str();
}

namespace kv {

inline double to_double(const KvEntry& e) {
  try {
    std::size_t pos = 0;
    double v = std::stod(e.value, &pos);
    if (pos != e.value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ParseError("'" + e.key + "' expects a number, got '" + e.value + "'", e.line);
  }
}

inline std::uint64_t to_uint(const KvEntry& e) {
  try {
    if (!e.value.empty() && e.value.front() == '-') throw std::invalid_argument("negative");
    std::size_t pos = 0;
    auto v = std::stoull(e.value, &pos);
    if (pos != e.value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ParseError("'" + e.key + "' expects a non-negative integer, got '" + e.value + "'", e.line);
  }
}

inline bool to_bool(const KvEntry& e) {
  if (e.value == "true" || e.value == "1" || e.value == "yes") return true;
  if (e.value == "false" || e.value == "0" || e.value == "no") return false;
  throw ParseError("'" + e.key + "' expects true/false, got '" + e.value + "'", e.line);
}

inline std::vector<double> to_doubles(const KvEntry& e) {
  std::vector<double> out;
  if (trim(e.value).empty()) return out;
  std::stringstream ss(e.value);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(to_double({e.key, std::string(trim(tok)), e.line}));
  return out;
}

inline std::vector<std::string> to_strings(const KvEntry& e) {
  std::vector<std::string> out;
  if (trim(e.value).empty()) return out;
  std::stringstream ss(e.value);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.emplace_back(trim(tok));
  return out;
}

inline std::string from_double(double v) { return format_double(v); }

inline std::string from_strings(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
  return s;
}

inline std::string from_doubles(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + from_double(v[i]);
  return s;
}

}  // namespace kv

}  // namespace kamcl
