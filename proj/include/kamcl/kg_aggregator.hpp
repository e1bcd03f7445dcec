#pragma once

// Relation-wise knowledge propagation, cross-relation fusion into item
// embeddings, and the relation-view item contrastive loss.

#include <cstddef>
#include <span>
#include <vector>

#include "kamcl/contrastive.hpp"
#include "kamcl/knowledge_graph.hpp"
#include "kamcl/ops.hpp"

namespace kamcl {

/// Shared fusion layer fus(v) = W v + bias, W: d x (|R| d).
struct FusionVars {
  ad::Var weight;
  ad::Var bias;
};

/// One propagation step inside a single relation subgraph. Rows of entities
/// with neighbors become the mean of (neighbor row * relation embedding);
/// entities without neighbors carry their previous row forward.
inline ad::Var propagate_relation(const RelationSubgraph& sub, ad::Var state, ad::Var relation_row) {
  if (sub.neighbors.num_rows() != state.rows())
    throw ContractError("propagate_relation: subgraph has " + std::to_string(sub.neighbors.num_rows()) +
                        " entities, state has " + std::to_string(state.rows()) + " rows");
  auto messages = ad::mul_row(state, relation_row);
  auto aggregated = ad::segment_mean(messages, sub.neighbors);
  std::vector<double> isolated(state.rows());
  bool any_isolated = false;
  for (std::size_t e = 0; e < isolated.size(); ++e) {
    isolated[e] = sub.degree(e) == 0 ? 1.0 : 0.0;
    any_isolated = any_isolated || isolated[e] != 0.0;
  }
  if (!any_isolated) return aggregated;
  return ad::add(aggregated, ad::scale_rows(state, std::move(isolated)));
}

/// Concatenates the per-relation states (relation-index order) and applies the fusion layer.
inline ad::Var fuse_items(std::span<const ad::Var> per_relation, const FusionVars& fusion) {
  const std::size_t d = fusion.weight.rows();
  if (per_relation.empty() || per_relation.size() * d != fusion.weight.cols())
    throw ContractError("fuse_items: " + std::to_string(per_relation.size()) + " relation inputs for fusion weight " +
                        fusion.weight.value().shape_string());
  return ad::affine(ad::concat_cols(per_relation), fusion.weight, fusion.bias);
}

/// InfoNCE between relation views of the same items, in-batch negatives.
/// `per_relation` are the |E| x d states of the top layer; `items` the batch
/// anchors (entity indices); `extra_negatives` optional additional rows.
inline ad::Var item_contrastive_loss(std::span<const ad::Var> per_relation, const std::vector<std::size_t>& items,
                                     const InfoNceOptions& opt, std::size_t max_pairs = 6, Rng* rng = nullptr,
                                     const std::vector<std::size_t>& extra_negatives = {}) {
  return multi_view_info_nce(per_relation, items, extra_negatives, opt, max_pairs, rng, "item_contrastive_loss");
}

}  // namespace kamcl
