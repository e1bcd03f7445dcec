#pragma once

// Intents as attention-weighted combinations of relation embeddings, pushed
// through the same fusion layer the items use.

#include <cmath>
#include <cstddef>

#include "kamcl/kg_aggregator.hpp"
#include "kamcl/ops.hpp"

namespace kamcl {

/// Row-wise softmax of the |P| x |R| intent logits.
inline ad::Var intent_attention(ad::Var logits) { return ad::softmax_rows(logits); }

/// v'_k = concat_j(alpha(k, j) * v_{r_j}), v_k = fus(v'_k). Returns |P| x d.
inline ad::Var build_intents(ad::Var relation_emb, ad::Var logits, const FusionVars& fusion) {
  if (logits.cols() != relation_emb.rows())
    throw ContractError("build_intents: logits " + logits.value().shape_string() + " vs relation embeddings " +
                        relation_emb.value().shape_string());
  auto raw = ad::relation_blocks(intent_attention(logits), relation_emb);
  return ad::affine(raw, fusion.weight, fusion.bias);
}

/// Materialized intent state for inspection.
struct IntentBank {
  Matrix logits;       // |P| x |R|
  Matrix alpha;        // |P| x |R|
  Matrix raw_intents;  // |P| x (|R| d)
  Matrix intents;      // |P| x d
  Matrix cosine;       // |P| x |P| pairwise cosine between intents
};

inline IntentBank compute_intent_bank(const Matrix& relation_emb, const Matrix& logits, const Matrix& fusion_w,
                                      const Matrix& fusion_b) {
  ad::Tape tape;
  auto rel = tape.constant(relation_emb);
  auto lg = tape.constant(logits);
  FusionVars fusion{tape.constant(fusion_w), tape.constant(fusion_b)};
  auto alpha = intent_attention(lg);
  auto raw = ad::relation_blocks(alpha, rel);
  auto intents = ad::affine(raw, fusion.weight, fusion.bias);
  auto cos = ad::cosine_matrix(intents, intents);
  return {logits, alpha.value(), raw.value(), intents.value(), cos.value()};
}

}  // namespace kamcl
