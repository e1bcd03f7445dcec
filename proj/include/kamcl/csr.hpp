#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "kamcl/error.hpp"

namespace kamcl {

/// Compressed sparse rows: for each source row, a sorted list of member indices.
/// Used for adjacency (user -> items, entity -> neighbors) and for the
/// index groups consumed by segment-mean.
class Csr {
 public:
  Csr() : offsets_{0} {}

  /// Builds from (row, member) pairs. Duplicate pairs are collapsed.
  static Csr from_pairs(std::size_t num_rows, std::vector<std::pair<std::size_t, std::size_t>> pairs) {
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
    Csr out;
    out.offsets_.assign(num_rows + 1, 0);
    out.members_.reserve(pairs.size());
    for (const auto& [r, m] : pairs) {
      if (r >= num_rows) throw ContractError("Csr: row " + std::to_string(r) + " >= " + std::to_string(num_rows));
      ++out.offsets_[r + 1];
      out.members_.push_back(m);
    }
    for (std::size_t r = 0; r < num_rows; ++r) out.offsets_[r + 1] += out.offsets_[r];
    return out;
  }

  /// Builds from explicit per-row member lists (kept in the given order).
  static Csr from_lists(const std::vector<std::vector<std::size_t>>& lists) {
    Csr out;
    out.offsets_.assign(lists.size() + 1, 0);
    for (std::size_t r = 0; r < lists.size(); ++r) {
      out.offsets_[r + 1] = out.offsets_[r] + lists[r].size();
      out.members_.insert(out.members_.end(), lists[r].begin(), lists[r].end());
    }
    return out;
  }

  /// Rows `rows` of this structure, in that order.
  Csr select_rows(std::span<const std::size_t> rows) const {
    Csr out;
    out.offsets_.assign(rows.size() + 1, 0);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      auto m = row(rows[k]);
      out.offsets_[k + 1] = out.offsets_[k] + m.size();
      out.members_.insert(out.members_.end(), m.begin(), m.end());
    }
    return out;
  }

  /// Transpose with `num_cols` output rows.
  Csr transpose(std::size_t num_cols) const {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    pairs.reserve(members_.size());
    for (std::size_t r = 0; r + 1 < offsets_.size(); ++r)
      for (auto m : row(r)) pairs.emplace_back(m, r);
    return from_pairs(num_cols, std::move(pairs));
  }

  std::size_t num_rows() const { return offsets_.size() - 1; }
  std::size_t num_entries() const { return members_.size(); }
  std::size_t degree(std::size_t r) const { return offsets_[r + 1] - offsets_[r]; }
  std::span<const std::size_t> row(std::size_t r) const {
    return {members_.data() + offsets_[r], offsets_[r + 1] - offsets_[r]};
  }
  bool contains(std::size_t r, std::size_t m) const {
    auto v = row(r);
    return std::binary_search(v.begin(), v.end(), m);
  }
  std::span<const std::size_t> offsets() const { return offsets_; }
  std::span<const std::size_t> members() const { return members_; }

  bool operator==(const Csr&) const = default;

 private:
  std::vector<std::size_t> offsets_;
  std::vector<std::size_t> members_;
};

}  // namespace kamcl
