#pragma once

#include <algorithm>
#include <cstddef>
#include <istream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "kamcl/csr.hpp"
#include "kamcl/error.hpp"
#include "kamcl/log.hpp"
#include "kamcl/text.hpp"

namespace kamcl {

struct Interaction {
  std::size_t user;
  std::size_t item;
  std::size_t behavior;
  auto operator<=>(const Interaction&) const = default;
};

/// Users, items and one edge set per behavior, with one behavior designated
/// as the prediction target. Immutable once built.
class InteractionGraph {
 public:
  InteractionGraph() = default;

  /// Validates indices, drops duplicate (u, i, b) edges and builds both
  /// adjacency directions. `duplicates` receives the number of dropped edges.
  static InteractionGraph build(std::size_t num_users, std::size_t num_items, std::vector<std::string> behaviors,
                                std::size_t target_behavior, const std::vector<Interaction>& edges,
                                IdMap user_ids = {}, IdMap item_ids = {}, std::size_t* duplicates = nullptr) {
    if (behaviors.empty()) throw ValidationError("interaction graph needs at least one behavior");
    if (target_behavior >= behaviors.size())
      throw ValidationError("target behavior index " + std::to_string(target_behavior) + " >= " +
                            std::to_string(behaviors.size()));
    InteractionGraph g;
    g.num_users_ = num_users;
    g.num_items_ = num_items;
    g.behaviors_ = std::move(behaviors);
    g.target_ = target_behavior;
    g.user_ids_ = user_ids.size() ? std::move(user_ids) : IdMap::sequential(num_users, "u");
    g.item_ids_ = item_ids.size() ? std::move(item_ids) : IdMap::sequential(num_items, "i");
    if (g.user_ids_.size() != num_users || g.item_ids_.size() != num_items)
      throw ContractError("id map sizes do not match user/item counts");

    const std::size_t nb = g.behaviors_.size();
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> pairs(nb);
    for (const auto& e : edges) {
      if (e.user >= num_users || e.item >= num_items || e.behavior >= nb)
        throw ValidationError("edge (" + std::to_string(e.user) + ", " + std::to_string(e.item) + ", " +
                              std::to_string(e.behavior) + ") out of range");
      pairs[e.behavior].emplace_back(e.user, e.item);
    }
    std::size_t total = 0;
    for (std::size_t b = 0; b < nb; ++b) {
      g.forward_.push_back(Csr::from_pairs(num_users, pairs[b]));
      g.reverse_.push_back(g.forward_.back().transpose(num_items));
      total += g.forward_.back().num_entries();
    }
    if (duplicates) *duplicates = edges.size() - total;
    return g;
  }

  std::size_t num_users() const { return num_users_; }
  std::size_t num_items() const { return num_items_; }
  std::size_t num_behaviors() const { return behaviors_.size(); }
  const std::vector<std::string>& behaviors() const { return behaviors_; }
  std::size_t target_behavior() const { return target_; }
  const IdMap& user_ids() const { return user_ids_; }
  const IdMap& item_ids() const { return item_ids_; }

  /// user -> sorted item list for behavior b.
  const Csr& adjacency(std::size_t b) const { return forward_.at(b); }
  /// item -> sorted user list for behavior b.
  const Csr& reverse(std::size_t b) const { return reverse_.at(b); }
  const Csr& target_adjacency() const { return forward_.at(target_); }

  std::size_t num_edges(std::size_t b) const { return forward_.at(b).num_entries(); }
  std::size_t num_edges() const {
    std::size_t n = 0;
    for (const auto& f : forward_) n += f.num_entries();
    return n;
  }
  bool has_edge(std::size_t u, std::size_t i, std::size_t b) const { return forward_.at(b).contains(u, i); }

  std::vector<Interaction> edges() const {
    std::vector<Interaction> out;
    out.reserve(num_edges());
    for (std::size_t b = 0; b < forward_.size(); ++b)
      for (std::size_t u = 0; u < num_users_; ++u)
        for (auto i : forward_[b].row(u)) out.push_back({u, i, b});
    return out;
  }

  /// Copy of this graph without the listed target-behavior (user, item) edges.
  InteractionGraph without_target_edges(const std::vector<std::pair<std::size_t, std::size_t>>& removed) const {
    std::vector<Interaction> kept;
    auto sorted = removed;
    std::sort(sorted.begin(), sorted.end());
    for (const auto& e : edges()) {
      if (e.behavior == target_ && std::binary_search(sorted.begin(), sorted.end(), std::pair{e.user, e.item}))
        continue;
      kept.push_back(e);
    }
    return build(num_users_, num_items_, behaviors_, target_, kept, user_ids_, item_ids_);
  }

  std::size_t behavior_index(const std::string& name) const {
    auto it = std::find(behaviors_.begin(), behaviors_.end(), name);
    if (it == behaviors_.end()) throw ValidationError("unknown behavior '" + name + "'");
    return static_cast<std::size_t>(it - behaviors_.begin());
  }

 private:
  std::size_t num_users_ = 0;
  std::size_t num_items_ = 0;
  std::vector<std::string> behaviors_;
  std::size_t target_ = 0;
  std::vector<Csr> forward_;
  std::vector<Csr> reverse_;
  IdMap user_ids_;
  IdMap item_ids_;
};

struct LoadedInteractions {
  InteractionGraph graph;
  std::size_t duplicates = 0;
};

/// Parses `user<TAB>item<TAB>behavior` rows. Raw ids are reindexed densely in
/// first-seen order. `target` names the target behavior; empty means the last
/// entry of `behavior_names`.
inline LoadedInteractions read_interactions(std::istream& in, const std::vector<std::string>& behavior_names,
                                            const std::string& target = {}) {
  if (behavior_names.empty()) throw ValidationError("no behavior names given");
  IdMap users, items;
  std::vector<Interaction> edges;
  for_each_tsv_row(in, [&](const std::vector<std::string_view>& f, std::size_t lineno) {
    if (f.size() != 3) throw ParseError("expected 3 tab-separated fields, got " + std::to_string(f.size()), lineno);
    const std::string u(trim(f[0])), i(trim(f[1])), b(trim(f[2]));
    if (u.empty() || i.empty() || b.empty()) throw ParseError("empty field", lineno);
    auto it = std::find(behavior_names.begin(), behavior_names.end(), b);
    if (it == behavior_names.end())
      throw ValidationError("unknown behavior '" + b + "' at line " + std::to_string(lineno));
    edges.push_back({users.intern(u), items.intern(i), static_cast<std::size_t>(it - behavior_names.begin())});
  });
  std::size_t target_index = behavior_names.size() - 1;
  if (!target.empty()) {
    auto it = std::find(behavior_names.begin(), behavior_names.end(), target);
    if (it == behavior_names.end()) throw ValidationError("unknown target behavior '" + target + "'");
    target_index = static_cast<std::size_t>(it - behavior_names.begin());
  }
  LoadedInteractions out;
  const std::size_t nu = users.size(), ni = items.size();
  out.graph = InteractionGraph::build(nu, ni, behavior_names, target_index, edges, std::move(users), std::move(items),
                                      &out.duplicates);
  if (out.duplicates) log::warn("interactions: dropped " + std::to_string(out.duplicates) + " duplicate edges");
  return out;
}

inline LoadedInteractions load_interactions(const std::string& path, const std::vector<std::string>& behavior_names,
                                            const std::string& target = {}) {
  auto in = open_input(path);
  return read_interactions(in, behavior_names, target);
}

inline void write_interactions(std::ostream& out, const InteractionGraph& g) {
  for (const auto& e : g.edges())
    out << g.user_ids().raw(e.user) << '\t' << g.item_ids().raw(e.item) << '\t' << g.behaviors()[e.behavior] << '\n';
}

}  // namespace kamcl
