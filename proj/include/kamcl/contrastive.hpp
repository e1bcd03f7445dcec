#pragma once

// InfoNCE shared by the relation-view item loss and the behavior-view user
// loss. Both contrast two views of the same batch: row i of view A against
// row i of view B (positive) and rows j != i of view B (negatives).

#include <algorithm>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "kamcl/config.hpp"
#include "kamcl/log.hpp"
#include "kamcl/ops.hpp"
#include "kamcl/rng.hpp"

namespace kamcl {

struct InfoNceOptions {
  double tau = 0.2;
  Similarity similarity = Similarity::cosine;
  /// Adds the positive pair to the denominator (conventional InfoNCE).
  bool include_positive = false;
};

/// Pairwise similarity matrix s(a_i, b_j); n x m.
inline ad::Var similarity_matrix(ad::Var a, ad::Var b, Similarity sim) {
  return sim == Similarity::cosine ? ad::cosine_matrix(a, b) : ad::matmul_nt(a, b);
}

/// Mean over anchors i of
///   -s(a_i, c_i)/tau + log sum_{j != i} exp(s(a_i, c_j)/tau)
/// where `candidates` holds the n positives in its first n rows followed by
/// any extra negatives. Requires at least one negative per anchor.
inline ad::Var info_nce(ad::Var anchors, ad::Var candidates, const InfoNceOptions& opt) {
  auto logits = ad::scale(similarity_matrix(anchors, candidates, opt.similarity), 1.0 / opt.tau);
  auto positive = ad::diagonal(logits);
  auto normalizer = ad::logsumexp_rows(logits, /*exclude_diagonal=*/!opt.include_positive);
  return ad::mean(ad::sub(normalizer, positive));
}

/// Ordered view pairs (a, b), a != b, over `num_views` views. All pairs when
/// num_views <= 6, otherwise `max_pairs` distinct pairs drawn with `rng`.
inline std::vector<std::pair<std::size_t, std::size_t>> view_pairs(std::size_t num_views, std::size_t max_pairs,
                                                                    Rng* rng) {
  std::vector<std::pair<std::size_t, std::size_t>> all;
  for (std::size_t a = 0; a < num_views; ++a)
    for (std::size_t b = 0; b < num_views; ++b)
      if (a != b) all.emplace_back(a, b);
  if (num_views <= 6 || all.size() <= max_pairs || rng == nullptr) return all;
  // Partial Fisher-Yates, then restore a canonical order.
  for (std::size_t k = 0; k < max_pairs; ++k) std::swap(all[k], all[k + rng->index(all.size() - k)]);
  all.resize(max_pairs);
  std::sort(all.begin(), all.end());
  return all;
}

/// Contrasts views[a] against views[b] on the rows `anchors` for each ordered
/// pair; `extra_negatives` rows are appended to the candidate pool. Returns
/// the mean over pairs, or a constant 0 when fewer than two views exist or
/// no anchor has a negative.
inline ad::Var multi_view_info_nce(std::span<const ad::Var> views, const std::vector<std::size_t>& anchors,
                                   const std::vector<std::size_t>& extra_negatives, const InfoNceOptions& opt,
                                   std::size_t max_pairs, Rng* rng, const char* what) {
  if (views.empty()) throw ContractError(std::string(what) + ": no views");
  ad::Tape& tape = *views[0].tape();
  if (views.size() < 2) {
    log::debug(std::string(what) + ": fewer than two views, contrastive term is 0");
    return tape.constant(Matrix::scalar(0.0));
  }
  if (anchors.empty()) throw ContractError(std::string(what) + ": empty batch");
  if (anchors.size() + extra_negatives.size() < 2) {
    log::warn(std::string(what) + ": batch of one with no negatives; contrastive term is 0");
    return tape.constant(Matrix::scalar(0.0));
  }
  std::vector<std::size_t> pool = anchors;
  pool.insert(pool.end(), extra_negatives.begin(), extra_negatives.end());

  const auto pairs = view_pairs(views.size(), max_pairs, rng);
  std::vector<ad::Var> gathered_a(views.size()), gathered_c(views.size());
  std::vector<ad::Var> terms;
  for (const auto& [a, b] : pairs) {
    if (!gathered_a[a].valid()) gathered_a[a] = ad::gather_rows(views[a], anchors);
    if (!gathered_c[b].valid()) gathered_c[b] = ad::gather_rows(views[b], pool);
    terms.push_back(info_nce(gathered_a[a], gathered_c[b], opt));
  }
  const std::vector<double> w(terms.size(), 1.0 / static_cast<double>(terms.size()));
  return ad::weighted_sum(terms, w);
}

}  // namespace kamcl
