#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kamcl/error.hpp"
#include "kamcl/interaction_graph.hpp"
#include "kamcl/rng.hpp"
#include "kamcl/text.hpp"

namespace kamcl {

/// Leave-one-out split of the target behavior.
struct DatasetSplit {
  InteractionGraph train;
  /// Held-out target item per user; empty for users not in the test set.
  std::vector<std::optional<std::size_t>> test;
  std::uint64_t seed = 0;

  std::size_t num_test_users() const {
    std::size_t n = 0;
    for (const auto& t : test) n += t.has_value();
    return n;
  }
};

/// Builds a split from explicit (user, held-out item) pairs.
inline DatasetSplit apply_split(const InteractionGraph& graph, const std::vector<std::pair<std::size_t, std::size_t>>& held_out,
                                std::uint64_t seed) {
  DatasetSplit split;
  split.seed = seed;
  split.test.assign(graph.num_users(), std::nullopt);
  for (const auto& [u, i] : held_out) {
    if (u >= graph.num_users() || !graph.has_edge(u, i, graph.target_behavior()))
      throw ValidationError("held-out pair (" + std::to_string(u) + ", " + std::to_string(i) +
                            ") is not a target-behavior edge");
    if (split.test[u]) throw ValidationError("user " + std::to_string(u) + " held out twice");
    split.test[u] = i;
  }
  split.train = graph.without_target_edges(held_out);
  return split;
}

/// Per user with at least two target items, holds out one uniformly chosen
/// target item. Users with a single target item keep it in train.
inline DatasetSplit split_leave_one_out(const InteractionGraph& graph, std::uint64_t seed) {
  Rng rng(seed, /*stream=*/0x5b1);
  std::vector<std::pair<std::size_t, std::size_t>> held_out;
  const Csr& target = graph.target_adjacency();
  for (std::size_t u = 0; u < graph.num_users(); ++u) {
    auto items = target.row(u);
    if (items.size() < 2) continue;
    held_out.emplace_back(u, items[rng.index(items.size())]);
  }
  return apply_split(graph, held_out, seed);
}

/// Removes round(drop_fraction * |target edges|) uniformly chosen target edges.
inline InteractionGraph sparsify_target(const InteractionGraph& graph, double drop_fraction, std::uint64_t seed) {
  if (!(drop_fraction >= 0 && drop_fraction <= 1)) throw ContractError("sparsify_target: drop fraction outside [0, 1]");
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  const Csr& target = graph.target_adjacency();
  for (std::size_t u = 0; u < graph.num_users(); ++u)
    for (auto i : target.row(u)) edges.emplace_back(u, i);
  Rng rng(seed, /*stream=*/0x5a7);
  rng.shuffle(std::span(edges));
  edges.resize(static_cast<std::size_t>(std::llround(drop_fraction * static_cast<double>(edges.size()))));
  return graph.without_target_edges(edges);
}

/// Writes `user<TAB>held_out_item<TAB>seed` rows with raw ids.
inline void write_split_manifest(std::ostream& out, const DatasetSplit& split) {
  const auto& g = split.train;
  for (std::size_t u = 0; u < split.test.size(); ++u)
    if (split.test[u]) out << g.user_ids().raw(u) << '\t' << g.item_ids().raw(*split.test[u]) << '\t' << split.seed << '\n';
}

/// Rebuilds a split of `graph` (the full, unsplit graph) from a manifest.
inline DatasetSplit read_split_manifest(std::istream& in, const InteractionGraph& graph) {
  std::vector<std::pair<std::size_t, std::size_t>> held_out;
  std::optional<std::uint64_t> seed;
  for_each_tsv_row(in, [&](const std::vector<std::string_view>& f, std::size_t lineno) {
    if (f.size() != 3) throw ParseError("split manifest: expected 3 fields", lineno);
    auto u = graph.user_ids().find(std::string(trim(f[0])));
    auto i = graph.item_ids().find(std::string(trim(f[1])));
    if (!u || !i) throw ValidationError("split manifest: unknown user/item at line " + std::to_string(lineno));
    std::uint64_t s = 0;
    try {
      s = std::stoull(std::string(trim(f[2])));
    } catch (const std::exception&) {
      throw ParseError("split manifest: bad seed", lineno);
    }
    if (seed && *seed != s) throw ValidationError("split manifest: mixed seeds");
    seed = s;
    held_out.emplace_back(*u, *i);
  });
  return apply_split(graph, held_out, seed.value_or(0));
}

}  // namespace kamcl
