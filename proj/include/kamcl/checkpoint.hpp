#pragma once

// Text checkpoint format, version 1:
//
//   kamcl-checkpoint 1
//   meta <key> <value>             (zero or more; value runs to end of line)
//   tensor <name> <rows> <cols>    followed by <rows> lines of <cols> values
//   end
//
// Values use the shortest round-trip decimal form (std::to_chars), so a
// write/read cycle reproduces every double bit-for-bit.

#include <cstddef>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "kamcl/error.hpp"
#include "kamcl/matrix.hpp"
#include "kamcl/text.hpp"

namespace kamcl {

inline constexpr int kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Matrix value;
  bool operator==(const NamedTensor&) const = default;
};

struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<NamedTensor> tensors;

  const Matrix* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t.value;
    return nullptr;
  }
  const Matrix& at(const std::string& name) const {
    if (const auto* m = find(name)) return *m;
    throw ValidationError("checkpoint has no tensor '" + name + "'");
  }
  bool operator==(const Checkpoint&) const = default;
};

inline void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  out << "kamcl-checkpoint " << kCheckpointVersion << '\n';
  for (const auto& [k, v] : ckpt.meta) {
    if (k.find_first_of(" \t\n") != std::string::npos || v.find('\n') != std::string::npos)
      throw ContractError("checkpoint meta key/value contains whitespace or newline: " + k);
    out << "meta " << k << ' ' << v << '\n';
  }
  for (const auto& t : ckpt.tensors) {
    if (t.name.empty() || t.name.find_first_of(" \t\n") != std::string::npos)
      throw ContractError("checkpoint tensor name must be non-empty without whitespace: '" + t.name + "'");
    out << "tensor " << t.name << ' ' << t.value.rows() << ' ' << t.value.cols() << '\n';
    for (std::size_t r = 0; r < t.value.rows(); ++r) {
      auto row = t.value.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) {
        if (c) out << ' ';
        out << format_double(row[c]);
      }
      out << '\n';
    }
  }
  out << "end\n";
}

inline Checkpoint read_checkpoint(std::istream& in) {
  Checkpoint ckpt;
  std::string line;
  std::size_t lineno = 0;
  auto next = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++lineno;
    return true;
  };
  if (!next()) throw ParseError("empty checkpoint");
  {
    std::istringstream hs(line);
    std::string magic;
    int version = 0;
    if (!(hs >> magic >> version) || magic != "kamcl-checkpoint") throw ParseError("not a kamcl checkpoint", lineno);
    if (version != kCheckpointVersion)
      throw ParseError("unsupported checkpoint version " + std::to_string(version), lineno);
  }
  while (next()) {
    if (line == "end") return ckpt;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      ckpt.meta[key] = value;
    } else if (kind == "tensor") {
      NamedTensor t;
      std::size_t rows = 0, cols = 0;
      if (!(ls >> t.name >> rows >> cols)) throw ParseError("bad tensor header", lineno);
      std::vector<double> values;
      values.reserve(rows * cols);
      for (std::size_t r = 0; r < rows; ++r) {
        if (!next()) throw ParseError("truncated tensor '" + t.name + "'", lineno);
        std::istringstream rs(line);
        std::string tok;
        std::size_t count = 0;
        while (rs >> tok) {
          values.push_back(parse_double(tok, lineno));
          ++count;
        }
        if (count != cols) throw ParseError("tensor '" + t.name + "' row has " + std::to_string(count) + " values", lineno);
      }
      t.value = Matrix(rows, cols, std::move(values));
      ckpt.tensors.push_back(std::move(t));
    } else {
      throw ParseError("unexpected checkpoint record '" + kind + "'", lineno);
    }
  }
  throw ParseError("checkpoint missing 'end' marker", lineno);
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_checkpoint(out, ckpt);
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  return read_checkpoint(in);
}

}  // namespace kamcl
