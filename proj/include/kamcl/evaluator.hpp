#pragma once

// Sampled-candidate ranking evaluation: each test user's held-out item is
// ranked against sampled items the user never interacted with (target
// behavior), and HR@K / NDCG@K are averaged over users.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "kamcl/interaction_graph.hpp"
#include "kamcl/log.hpp"
#include "kamcl/model.hpp"
#include "kamcl/rng.hpp"
#include "kamcl/split.hpp"

namespace kamcl {

struct CandidateOptions {
  std::size_t num_negatives = 99;
  /// Also exclude items the user touched under auxiliary behaviors.
  bool exclude_auxiliary = false;
};

struct EvalCandidates {
  struct Entry {
    std::size_t user;
    std::size_t positive;
    std::vector<std::size_t> negatives;
  };
  std::vector<Entry> entries;
  std::uint64_t seed = 0;
  std::size_t requested_negatives = 0;
  /// Users whose eligible pool was smaller than requested (all eligible items were used).
  std::vector<std::size_t> short_users;
  /// Users with no eligible negative at all.
  std::vector<std::size_t> skipped_users;
};

/// Samples negatives for the given (user, positive) pairs. `owned(u)` lists
/// the items excluded for u (must include the positive). Sampling for user u
/// depends only on (seed, u).
inline EvalCandidates build_candidates(std::size_t num_items,
                                       const std::vector<std::pair<std::size_t, std::size_t>>& positives,
                                       const std::function<std::vector<std::size_t>(std::size_t)>& owned,
                                       std::uint64_t seed, const CandidateOptions& opt = {}) {
  EvalCandidates out;
  out.seed = seed;
  out.requested_negatives = opt.num_negatives;
  for (const auto& [u, pos] : positives) {
    std::vector<std::size_t> excluded = owned(u);
    excluded.push_back(pos);
    std::sort(excluded.begin(), excluded.end());
    excluded.erase(std::unique(excluded.begin(), excluded.end()), excluded.end());
    const std::size_t eligible = num_items - excluded.size();
    if (eligible == 0) {
      out.skipped_users.push_back(u);
      log::info("build_candidates: user " + std::to_string(u) + " has no eligible negative, skipped");
      continue;
    }
    Rng rng(seed, 0xca11ULL + u);
    EvalCandidates::Entry e{u, pos, {}};
    auto is_excluded = [&](std::size_t i) { return std::binary_search(excluded.begin(), excluded.end(), i); };
    if (eligible >= 4 * opt.num_negatives) {
      std::unordered_set<std::size_t> seen;
      while (e.negatives.size() < opt.num_negatives) {
        const std::size_t i = rng.index(num_items);
        if (!is_excluded(i) && seen.insert(i).second) e.negatives.push_back(i);
      }
    } else {
      std::vector<std::size_t> pool;
      pool.reserve(eligible);
      for (std::size_t i = 0; i < num_items; ++i)
        if (!is_excluded(i)) pool.push_back(i);
      const std::size_t take = std::min(opt.num_negatives, pool.size());
      for (std::size_t k = 0; k < take; ++k) std::swap(pool[k], pool[k + rng.index(pool.size() - k)]);
      pool.resize(take);
      e.negatives = std::move(pool);
      if (take < opt.num_negatives) out.short_users.push_back(u);
    }
    out.entries.push_back(std::move(e));
  }
  return out;
}

/// Items of user u excluded from negative sampling: target-behavior items in
/// `graph` (plus auxiliary-behavior items when requested).
inline std::vector<std::size_t> owned_items(const InteractionGraph& graph, std::size_t u, bool include_auxiliary) {
  std::vector<std::size_t> out;
  for (std::size_t b = 0; b < graph.num_behaviors(); ++b) {
    if (b != graph.target_behavior() && !include_auxiliary) continue;
    auto row = graph.adjacency(b).row(u);
    out.insert(out.end(), row.begin(), row.end());
  }
  return out;
}

/// Candidates for the split's test users. Negatives avoid every target item of
/// the user, in train and test.
inline EvalCandidates build_candidates(const DatasetSplit& split, std::uint64_t seed, const CandidateOptions& opt = {}) {
  std::vector<std::pair<std::size_t, std::size_t>> positives;
  for (std::size_t u = 0; u < split.test.size(); ++u)
    if (split.test[u]) positives.emplace_back(u, *split.test[u]);
  return build_candidates(
      split.train.num_items(), positives,
      [&](std::size_t u) { return owned_items(split.train, u, opt.exclude_auxiliary); }, seed, opt);
}

/// 1 + number of negatives scoring >= the positive (ties count against the positive).
inline std::size_t rank_of_positive(double positive_score, std::span<const double> negative_scores) {
  std::size_t rank = 1;
  for (double s : negative_scores)
    if (s >= positive_score) ++rank;
  return rank;
}

inline std::vector<std::size_t> rank_and_score(const EmbeddingTables& tables, const EvalCandidates& cands) {
  std::vector<std::size_t> ranks;
  ranks.reserve(cands.entries.size());
  std::vector<double> neg;
  for (const auto& e : cands.entries) {
    neg.clear();
    for (auto i : e.negatives) neg.push_back(score(tables, e.user, i));
    ranks.push_back(rank_of_positive(score(tables, e.user, e.positive), neg));
  }
  return ranks;
}

inline double hr_at_k(std::span<const std::size_t> ranks, std::size_t k) {
  if (ranks.empty()) return std::nan("");
  std::size_t hits = 0;
  for (auto r : ranks) hits += r <= k;
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

inline double ndcg_at_k(std::span<const std::size_t> ranks, std::size_t k) {
  if (ranks.empty()) return std::nan("");
  double total = 0.0;
  for (auto r : ranks)
    if (r <= k) total += 1.0 / std::log2(static_cast<double>(r) + 1.0);
  return total / static_cast<double>(ranks.size());
}

struct MetricsReport {
  struct Row {
    std::string metric;  // "HR" or "NDCG"
    std::size_t k;
    double value;
  };
  std::vector<Row> rows;
  std::size_t num_users = 0;
  std::uint64_t seed = 0;
  std::size_t negatives_per_user = 0;
  std::size_t short_users = 0;
  std::size_t skipped_users = 0;

  /// False when no user was evaluated (metrics are NaN).
  bool defined() const { return num_users > 0; }

  double get(const std::string& metric, std::size_t k) const {
    for (const auto& r : rows)
      if (r.metric == metric && r.k == k) return r.value;
    throw ContractError("metrics report has no " + metric + "@" + std::to_string(k));
  }
  double hr(std::size_t k) const { return get("HR", k); }
  double ndcg(std::size_t k) const { return get("NDCG", k); }
};

inline MetricsReport make_report(std::span<const std::size_t> ranks, const EvalCandidates& cands,
                                 std::span<const std::size_t> ks = std::vector<std::size_t>{5, 10}) {
  MetricsReport rep;
  rep.num_users = ranks.size();
  rep.seed = cands.seed;
  rep.negatives_per_user = cands.requested_negatives;
  rep.short_users = cands.short_users.size();
  rep.skipped_users = cands.skipped_users.size();
  for (auto k : ks) rep.rows.push_back({"HR", k, hr_at_k(ranks, k)});
  for (auto k : ks) rep.rows.push_back({"NDCG", k, ndcg_at_k(ranks, k)});
  if (!rep.defined()) log::warn("evaluation: empty test set, metrics undefined");
  return rep;
}

inline MetricsReport evaluate(const EmbeddingTables& tables, const EvalCandidates& cands) {
  const auto ranks = rank_and_score(tables, cands);
  return make_report(ranks, cands);
}

/// `metric<TAB>K<TAB>value<TAB>n_users<TAB>seed` rows, with a header line.
inline void write_report_tsv(std::ostream& out, const MetricsReport& rep) {
  out << "metric\tK\tvalue\tn_users\tseed\n";
  for (const auto& r : rep.rows)
    out << r.metric << '\t' << r.k << '\t' << format_double(r.value) << '\t' << rep.num_users << '\t' << rep.seed
        << '\n';
}

inline std::string format_report_table(const MetricsReport& rep, const std::string& title = "KAMCL") {
  std::ostringstream s;
  s << std::fixed << std::setprecision(4);
  s << std::left << std::setw(12) << "Method";
  for (const auto& r : rep.rows) s << std::setw(10) << ((r.metric == "HR" ? "H@" : "N@") + std::to_string(r.k));
  s << '\n' << std::setw(12) << title;
  for (const auto& r : rep.rows) s << std::setw(10) << r.value;
  s << "\n(" << rep.num_users << " users, " << rep.negatives_per_user << " sampled negatives each, seed " << rep.seed;
  if (rep.short_users) s << ", " << rep.short_users << " users with fewer negatives";
  if (rep.skipped_users) s << ", " << rep.skipped_users << " users skipped";
  s << ")\n";
  return s.str();
}

}  // namespace kamcl
