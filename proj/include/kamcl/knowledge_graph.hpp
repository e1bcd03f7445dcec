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

struct Triple {
  std::size_t head;
  std::size_t relation;
  std::size_t tail;
  auto operator<=>(const Triple&) const = default;
};

/// Entity-relation-entity triples over an entity space whose first
/// `num_items` indices are the recommendation items (item i is entity i).
class KnowledgeGraph {
 public:
  KnowledgeGraph() = default;

  /// Validates ranges, sorts triples and removes duplicates. `entity_ids` must
  /// list the items first.
  static KnowledgeGraph build(std::size_t num_items, IdMap entity_ids, IdMap relation_ids, std::vector<Triple> triples,
                              std::size_t* duplicates = nullptr) {
    if (entity_ids.size() < num_items) throw ContractError("knowledge graph has fewer entities than items");
    KnowledgeGraph kg;
    kg.num_items_ = num_items;
    kg.entity_ids_ = std::move(entity_ids);
    kg.relation_ids_ = std::move(relation_ids);
    for (const auto& t : triples)
      if (t.head >= kg.entity_ids_.size() || t.tail >= kg.entity_ids_.size() || t.relation >= kg.relation_ids_.size())
        throw ValidationError("triple (" + std::to_string(t.head) + ", " + std::to_string(t.relation) + ", " +
                              std::to_string(t.tail) + ") out of range");
    const std::size_t before = triples.size();
    std::sort(triples.begin(), triples.end());
    triples.erase(std::unique(triples.begin(), triples.end()), triples.end());
    if (duplicates) *duplicates = before - triples.size();
    kg.triples_ = std::move(triples);
    return kg;
  }

  /// KG with no relations: every item is an isolated entity.
  static KnowledgeGraph empty(const IdMap& item_ids) { return build(item_ids.size(), item_ids, IdMap{}, {}); }

  std::size_t num_entities() const { return entity_ids_.size(); }
  std::size_t num_relations() const { return relation_ids_.size(); }
  std::size_t num_items() const { return num_items_; }
  std::size_t item_entity(std::size_t item) const { return item; }
  const std::vector<Triple>& triples() const { return triples_; }
  const IdMap& entity_ids() const { return entity_ids_; }
  const IdMap& relation_ids() const { return relation_ids_; }

  bool operator==(const KnowledgeGraph& o) const {
    return num_items_ == o.num_items_ && entity_ids_ == o.entity_ids_ && relation_ids_ == o.relation_ids_ &&
           triples_ == o.triples_;
  }

 private:
  std::size_t num_items_ = 0;
  IdMap entity_ids_;
  IdMap relation_ids_;
  std::vector<Triple> triples_;
};

struct LoadedKnowledgeGraph {
  KnowledgeGraph kg;
  /// Items that appear in no triple; they keep only their base embedding.
  std::vector<std::size_t> uncovered_items;
  std::size_t duplicates = 0;
};

inline std::vector<std::size_t> uncovered_items(const KnowledgeGraph& kg) {
  std::vector<bool> seen(kg.num_items(), false);
  for (const auto& t : kg.triples()) {
    if (t.head < kg.num_items()) seen[t.head] = true;
    if (t.tail < kg.num_items()) seen[t.tail] = true;
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < seen.size(); ++i)
    if (!seen[i]) out.push_back(i);
  return out;
}

/// Parses `head<TAB>relation<TAB>tail` rows. Ids equal to an item's raw id
/// resolve to that item's entity.
inline LoadedKnowledgeGraph read_triples(std::istream& in, const IdMap& item_ids) {
  IdMap entities = item_ids;
  IdMap relations;
  std::vector<Triple> triples;
  for_each_tsv_row(in, [&](const std::vector<std::string_view>& f, std::size_t lineno) {
    if (f.size() != 3) throw ParseError("expected 3 tab-separated fields, got " + std::to_string(f.size()), lineno);
    const std::string h(trim(f[0])), r(trim(f[1])), t(trim(f[2]));
    if (h.empty() || r.empty() || t.empty()) throw ParseError("empty field", lineno);
    const auto hi = entities.intern(h);
    const auto ri = relations.intern(r);
    triples.push_back({hi, ri, entities.intern(t)});
  });
  LoadedKnowledgeGraph out;
  out.kg = KnowledgeGraph::build(item_ids.size(), std::move(entities), std::move(relations), std::move(triples),
                                 &out.duplicates);
  out.uncovered_items = uncovered_items(out.kg);
  if (!out.uncovered_items.empty())
    log::info("knowledge graph: " + std::to_string(out.uncovered_items.size()) + " of " +
              std::to_string(item_ids.size()) + " items have no triples");
  return out;
}

inline LoadedKnowledgeGraph load_triples(const std::string& path, const IdMap& item_ids) {
  auto in = open_input(path);
  return read_triples(in, item_ids);
}

inline void write_triples(std::ostream& out, const KnowledgeGraph& kg) {
  for (const auto& t : kg.triples())
    out << kg.entity_ids().raw(t.head) << '\t' << kg.relation_ids().raw(t.relation) << '\t'
        << kg.entity_ids().raw(t.tail) << '\n';
}

/// Number of triples incident to each entity (a self-loop counts once).
inline std::vector<std::size_t> entity_degrees(std::size_t num_entities, const std::vector<Triple>& triples) {
  std::vector<std::size_t> deg(num_entities, 0);
  for (const auto& t : triples) {
    ++deg[t.head];
    if (t.tail != t.head) ++deg[t.tail];
  }
  return deg;
}

/// Iteratively drops triples touching a non-item entity of degree below
/// `min_entity_degree` and triples of relations with fewer than
/// `min_relation_count` triples, until neither rule fires. Surviving
/// non-item entities and relations are reindexed densely in their original
/// order; items keep indices [0, M).
inline KnowledgeGraph filter_kg(const KnowledgeGraph& kg, std::size_t min_entity_degree,
                                std::size_t min_relation_count) {
  if (min_entity_degree < 1 || min_relation_count < 1) throw ContractError("filter_kg: thresholds must be >= 1");
  const std::size_t ne = kg.num_entities(), nr = kg.num_relations(), ni = kg.num_items();
  std::vector<Triple> current = kg.triples();
  while (true) {
    std::vector<std::size_t> rel_count(nr, 0);
    for (const auto& t : current) ++rel_count[t.relation];
    const auto deg = entity_degrees(ne, current);
    auto weak_entity = [&](std::size_t e) { return e >= ni && deg[e] < min_entity_degree; };
    std::vector<Triple> next;
    next.reserve(current.size());
    for (const auto& t : current)
      if (rel_count[t.relation] >= min_relation_count && !weak_entity(t.head) && !weak_entity(t.tail))
        next.push_back(t);
    if (next.size() == current.size()) break;
    current = std::move(next);
  }

  std::vector<bool> keep_entity(ne, false), keep_relation(nr, false);
  for (std::size_t i = 0; i < ni; ++i) keep_entity[i] = true;
  for (const auto& t : current) {
    keep_entity[t.head] = keep_entity[t.tail] = true;
    keep_relation[t.relation] = true;
  }
  std::vector<std::size_t> entity_map(ne), relation_map(nr);
  IdMap entity_ids, relation_ids;
  for (std::size_t e = 0; e < ne; ++e)
    if (keep_entity[e]) entity_map[e] = entity_ids.intern(kg.entity_ids().raw(e));
  for (std::size_t r = 0; r < nr; ++r)
    if (keep_relation[r]) relation_map[r] = relation_ids.intern(kg.relation_ids().raw(r));
  for (auto& t : current) t = {entity_map[t.head], relation_map[t.relation], entity_map[t.tail]};

  if (current.empty() && !kg.triples().empty())
    log::warn("filter_kg: every triple was filtered out; items keep only their base embeddings");
  return KnowledgeGraph::build(ni, std::move(entity_ids), std::move(relation_ids), std::move(current));
}

/// The KG restricted to one relation, with an undirected neighbor structure.
struct RelationSubgraph {
  std::size_t relation = 0;
  std::vector<Triple> triples;
  /// entity -> sorted, de-duplicated first-order neighbors under this relation.
  Csr neighbors;

  std::size_t degree(std::size_t entity) const { return neighbors.degree(entity); }
};

inline std::vector<RelationSubgraph> build_relation_subgraphs(const KnowledgeGraph& kg) {
  std::vector<RelationSubgraph> subs(kg.num_relations());
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> pairs(kg.num_relations());
  for (std::size_t r = 0; r < subs.size(); ++r) subs[r].relation = r;
  for (const auto& t : kg.triples()) {
    subs[t.relation].triples.push_back(t);
    pairs[t.relation].emplace_back(t.head, t.tail);
    pairs[t.relation].emplace_back(t.tail, t.head);
  }
  for (std::size_t r = 0; r < subs.size(); ++r)
    subs[r].neighbors = Csr::from_pairs(kg.num_entities(), std::move(pairs[r]));
  return subs;
}

}  // namespace kamcl
