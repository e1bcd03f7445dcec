#pragma once

// Per-behavior user modeling: intent selection, neighborhood aggregation,
// gated residual update, behavior fusion and the behavior-view contrastive loss.

#include <cstddef>
#include <span>
#include <vector>

#include "kamcl/contrastive.hpp"
#include "kamcl/csr.hpp"
#include "kamcl/ops.hpp"

namespace kamcl {

/// softmax(logits) * intents: n x |P| logits against |P| x d intents -> n x d.
inline ad::Var user_intent(ad::Var logits, ad::Var intents) {
  if (logits.cols() != intents.rows())
    throw ContractError("user_intent: logits " + logits.value().shape_string() + " vs intents " +
                        intents.value().shape_string());
  return ad::matmul(ad::softmax_rows(logits), intents);
}

/// Row k = mean of item rows listed in neighborhoods.row(k); zero when empty.
inline ad::Var aggregate_user_items(ad::Var item_emb, const Csr& neighborhoods) {
  return ad::segment_mean(item_emb, neighborhoods);
}

/// intent (elementwise) aggregate + previous layer.
inline ad::Var update_user_behavior(ad::Var intent, ad::Var aggregated, ad::Var previous) {
  return ad::add(ad::mul(intent, aggregated), previous);
}

/// sum_b gamma_b * states[b].
inline ad::Var fuse_behaviors(std::span<const ad::Var> states, std::span<const double> gamma) {
  if (states.size() != gamma.size())
    throw ContractError("fuse_behaviors: " + std::to_string(states.size()) + " states vs " +
                        std::to_string(gamma.size()) + " weights");
  return ad::weighted_sum(states, gamma);
}

/// InfoNCE between behavior views of the same users. `states[b]` holds the
/// top-layer rows of the forward users; the first `num_anchors` rows are the
/// batch anchors and any remaining rows serve only as extra negatives.
/// num_anchors = 0 means every row is an anchor.
inline ad::Var behavior_contrastive_loss(std::span<const ad::Var> states, const InfoNceOptions& opt,
                                         std::size_t max_pairs = 6, Rng* rng = nullptr, std::size_t num_anchors = 0) {
  if (states.empty()) throw ContractError("behavior_contrastive_loss: no behaviors");
  const std::size_t rows = states[0].rows();
  if (num_anchors == 0) num_anchors = rows;
  if (num_anchors > rows) throw ContractError("behavior_contrastive_loss: more anchors than rows");
  std::vector<std::size_t> anchors(num_anchors), extra(rows - num_anchors);
  for (std::size_t k = 0; k < num_anchors; ++k) anchors[k] = k;
  for (std::size_t k = 0; k < extra.size(); ++k) extra[k] = num_anchors + k;
  return multi_view_info_nce(states, anchors, extra, opt, max_pairs, rng, "behavior_contrastive_loss");
}

}  // namespace kamcl
