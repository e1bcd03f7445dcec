#pragma once

// Synthetic multi-behavior datasets with planted intents. Each item carries
// one attribute value per relation; each attribute value has a latent vector.
// A latent intent mixes relations, and every user has an independent
// preference vector per (intent, relation). Each user draws, per behavior, an
// intent mixture m_{u,b} = (1 - rho) affinity[b] + rho onehot(k), with
// k ~ affinity[b]. Behavior b scores an item as
//   s_b(u, i) = sum_k m_{u,b}[k] sum_r mix[k][r] <q_{u,k,r}, z_{r, a_r(i)}>
// and draws round(density_b * M) distinct items per user with probability
// proportional to exp(sharpness * s_b) (Gumbel top-k).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "kamcl/interaction_graph.hpp"
#include "kamcl/knowledge_graph.hpp"
#include "kamcl/kv.hpp"
#include "kamcl/matrix.hpp"
#include "kamcl/model.hpp"
#include "kamcl/rng.hpp"

namespace kamcl {

struct SynthSpec {
  std::size_t users = 500;
  std::size_t items = 200;
  std::size_t relations = 2;
  std::size_t intents = 2;
  std::size_t attributes = 10;  // attribute values per relation
  std::size_t latent_dim = 4;
  /// Behavior names; the last one is the target.
  std::vector<std::string> behaviors{"view", "cart", "buy"};
  /// B x K, rows normalized to sum 1. Empty: target on intent 0, auxiliaries on the others.
  std::vector<std::vector<double>> affinity;
  /// K x R relation mixture per intent, rows normalized. Empty: intent k leans on relation k mod R.
  std::vector<std::vector<double>> relation_mix;
  /// Per behavior, fraction of items each user interacts with.
  std::vector<double> density{0.15, 0.1, 0.05};
  double sharpness = 8.0;
  /// rho above: 0 gives every user the behavior's affinity row, 1 a single sampled intent.
  double personalization = 1.0;
  std::uint64_t seed = 1;

  std::size_t target() const { return behaviors.size() - 1; }

  /// Fills the default affinity / relation mixture and normalizes rows.
  SynthSpec resolved() const;
  void validate() const;

  KvList to_kv() const;
  static SynthSpec from_kv(const KvList& entries);
};

inline SynthSpec SynthSpec::resolved() const {
  SynthSpec s = *this;
  const std::size_t B = s.behaviors.size(), K = s.intents, R = s.relations;
  if (s.affinity.empty()) {
    s.affinity.assign(B, std::vector<double>(K, 0.0));
    for (std::size_t b = 0; b < B; ++b) {
      if (b == s.target() || K == 1) {
        s.affinity[b][0] = 1.0;
      } else {
        s.affinity[b][1 + b % (K - 1)] = 1.0;
      }
    }
  }
  if (s.relation_mix.empty()) {
    s.relation_mix.assign(K, std::vector<double>(R, R == 1 ? 1.0 : 0.25 / static_cast<double>(R - 1)));
    for (std::size_t k = 0; k < K && R > 1; ++k) s.relation_mix[k][k % R] = 0.75;
  }
  auto normalize = [](std::vector<std::vector<double>>& rows) {
    for (auto& row : rows) {
      const double t = std::accumulate(row.begin(), row.end(), 0.0);
      if (t > 0)
        for (auto& v : row) v /= t;
    }
  };
  normalize(s.affinity);
  normalize(s.relation_mix);
  return s;
}

inline void SynthSpec::validate() const {
  auto fail = [](const std::string& m) { throw ValidationError("synth spec: " + m); };
  if (users == 0 || items == 0) fail("users and items must be > 0");
  if (relations == 0 || intents == 0 || attributes == 0 || latent_dim == 0)
    fail("relations, intents, attributes and latent_dim must be > 0");
  if (behaviors.empty()) fail("at least one behavior is required");
  if (density.size() != behaviors.size()) fail("density needs one entry per behavior");
  for (double d : density)
    if (!(d > 0 && d <= 1)) fail("densities must lie in (0, 1]");
  if (!affinity.empty()) {
    if (affinity.size() != behaviors.size()) fail("affinity needs one row per behavior");
    for (const auto& row : affinity) {
      if (row.size() != intents) fail("affinity rows need one entry per intent");
      double t = 0;
      for (double v : row) {
        if (!(v >= 0)) fail("affinity entries must be >= 0");
        t += v;
      }
      if (!(t > 0)) fail("affinity rows must have a positive sum");
    }
  }
  if (!relation_mix.empty()) {
    if (relation_mix.size() != intents) fail("relation_mix needs one row per intent");
    for (const auto& row : relation_mix) {
      if (row.size() != relations) fail("relation_mix rows need one entry per relation");
      for (double v : row)
        if (!(v >= 0)) fail("relation_mix entries must be >= 0");
    }
  }
  if (!(sharpness >= 0)) fail("sharpness must be >= 0");
  if (!(personalization >= 0 && personalization <= 1)) fail("personalization must lie in [0, 1]");
}

namespace detail {

inline std::string join_matrix(const std::vector<std::vector<double>>& rows) {
  std::string out;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (r) out += ';';
    out += kv::from_doubles(rows[r]);
  }
  return out;
}

inline std::vector<std::vector<double>> split_matrix(const KvEntry& e) {
  const std::string& text = e.value;
  std::vector<std::vector<double>> rows;
  if (text.empty()) return rows;
  std::size_t start = 0;
  while (true) {
    const auto end = text.find(';', start);
    rows.push_back(kv::to_doubles({e.key, text.substr(start, end - start), e.line}));
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return rows;
}

}  // namespace detail

inline KvList SynthSpec::to_kv() const {
  std::string names;
  for (std::size_t b = 0; b < behaviors.size(); ++b) names += (b ? "," : "") + behaviors[b];
  return {{"synth.users", std::to_string(users)},
          {"synth.items", std::to_string(items)},
          {"synth.relations", std::to_string(relations)},
          {"synth.intents", std::to_string(intents)},
          {"synth.attributes", std::to_string(attributes)},
          {"synth.latent_dim", std::to_string(latent_dim)},
          {"synth.behaviors", names},
          {"synth.affinity", detail::join_matrix(affinity)},
          {"synth.relation_mix", detail::join_matrix(relation_mix)},
          {"synth.density", kv::from_doubles(density)},
          {"synth.sharpness", kv::from_double(sharpness)},
          {"synth.personalization", kv::from_double(personalization)},
          {"synth.seed", std::to_string(seed)}};
}

inline SynthSpec SynthSpec::from_kv(const KvList& entries) {
  SynthSpec s;
  for (const auto& e : entries) {
    const std::string& k = e.key;
    if (k == "synth.users") s.users = kv::to_uint(e);
    else if (k == "synth.items") s.items = kv::to_uint(e);
    else if (k == "synth.relations") s.relations = kv::to_uint(e);
    else if (k == "synth.intents") s.intents = kv::to_uint(e);
    else if (k == "synth.attributes") s.attributes = kv::to_uint(e);
    else if (k == "synth.latent_dim") s.latent_dim = kv::to_uint(e);
    else if (k == "synth.affinity") s.affinity = detail::split_matrix(e);
    else if (k == "synth.relation_mix") s.relation_mix = detail::split_matrix(e);
    else if (k == "synth.density") s.density = kv::to_doubles(e);
    else if (k == "synth.sharpness") s.sharpness = kv::to_double(e);
    else if (k == "synth.personalization") s.personalization = kv::to_double(e);
    else if (k == "synth.seed") s.seed = kv::to_uint(e);
    else if (k == "synth.behaviors") {
      s.behaviors.clear();
      std::size_t start = 0;
      while (true) {
        const auto end = e.value.find(',', start);
        s.behaviors.emplace_back(trim(std::string_view(e.value).substr(start, end - start)));
        if (end == std::string::npos) break;
        start = end + 1;
      }
    } else {
      throw ValidationError("unknown synth key '" + k + "' at line " + std::to_string(e.line));
    }
  }
  s.validate();
  return s;
}

/// Planted latents behind a generated dataset.
struct SynthTruth {
  SynthSpec spec;                                    // resolved
  std::vector<std::vector<std::size_t>> attribute;  // [r][item] attribute value
  std::vector<Matrix> attribute_latent;             // [r]: attributes x D
  std::vector<Matrix> preference;                   // [k * R + r]: users x D
  std::vector<Matrix> mixture;                      // [b]: users x K
};

struct SynthDataset {
  InteractionGraph graph;
  KnowledgeGraph kg;
  SynthTruth truth;
};

/// Behavior-b score tables: user rows and item rows whose dot product is s_b.
inline EmbeddingTables oracle_tables(const SynthTruth& t, std::size_t behavior) {
  const auto& s = t.spec;
  const std::size_t R = s.relations, D = s.latent_dim;
  EmbeddingTables out{Matrix(s.users, R * D), Matrix(s.items, R * D)};
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t i = 0; i < s.items; ++i)
      for (std::size_t c = 0; c < D; ++c) out.items(i, r * D + c) = t.attribute_latent[r](t.attribute[r][i], c);
    for (std::size_t k = 0; k < s.intents; ++k)
      for (std::size_t u = 0; u < s.users; ++u) {
        const double w = t.mixture[behavior](u, k) * s.relation_mix[k][r];
        if (w == 0) continue;
        for (std::size_t c = 0; c < D; ++c) out.users(u, r * D + c) += w * t.preference[k * R + r](u, c);
      }
  }
  return out;
}

inline SynthDataset generate(const SynthSpec& input) {
  input.validate();
  const SynthSpec spec = input.resolved();
  const std::size_t N = spec.users, M = spec.items, R = spec.relations, K = spec.intents, A = spec.attributes,
                    D = spec.latent_dim, B = spec.behaviors.size();

  SynthTruth truth;
  truth.spec = spec;
  Rng latent_rng(spec.seed, 0x5a1);
  const double scale = 1.0 / std::sqrt(static_cast<double>(D));
  truth.attribute.assign(R, std::vector<std::size_t>(M));
  for (std::size_t r = 0; r < R; ++r) {
    Matrix z(A, D);
    for (auto& v : z.values()) v = latent_rng.normal();
    truth.attribute_latent.push_back(std::move(z));
    for (std::size_t i = 0; i < M; ++i) truth.attribute[r][i] = latent_rng.index(A);
  }
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t r = 0; r < R; ++r) {
      Matrix q(N, D);
      for (auto& v : q.values()) v = latent_rng.normal(0.0, scale);
      truth.preference.push_back(std::move(q));
    }
  Rng mixture_rng(spec.seed, 0x313);
  for (std::size_t b = 0; b < B; ++b) {
    Matrix m(N, K);
    for (std::size_t u = 0; u < N; ++u) {
      double x = mixture_rng.uniform();
      std::size_t pick = K - 1;
      for (std::size_t k = 0; k < K; ++k) {
        if (x < spec.affinity[b][k]) {
          pick = k;
          break;
        }
        x -= spec.affinity[b][k];
      }
      for (std::size_t k = 0; k < K; ++k)
        m(u, k) = (1.0 - spec.personalization) * spec.affinity[b][k] + (k == pick ? spec.personalization : 0.0);
    }
    truth.mixture.push_back(std::move(m));
  }

  std::vector<Interaction> edges;
  Rng edge_rng(spec.seed, 0xed9e);
  std::vector<std::pair<double, std::size_t>> keyed(M);
  for (std::size_t b = 0; b < B; ++b) {
    const auto tables = oracle_tables(truth, b);
    const auto count = std::max<std::size_t>(
        1, std::min<std::size_t>(M, static_cast<std::size_t>(std::llround(spec.density[b] * static_cast<double>(M)))));
    for (std::size_t u = 0; u < N; ++u) {
      for (std::size_t i = 0; i < M; ++i) {
        const double gumbel = -std::log(-std::log(edge_rng.uniform_open()));
        keyed[i] = {spec.sharpness * score(tables, u, i) + gumbel, i};
      }
      std::partial_sort(keyed.begin(), keyed.begin() + static_cast<std::ptrdiff_t>(count), keyed.end(),
                        [](const auto& x, const auto& y) { return x.first > y.first || (x.first == y.first && x.second < y.second); });
      for (std::size_t k = 0; k < count; ++k) edges.push_back({u, keyed[k].second, b});
    }
  }

  SynthDataset ds{InteractionGraph::build(N, M, spec.behaviors, spec.target(), edges, IdMap::sequential(N, "u"),
                                          IdMap::sequential(M, "i")),
                  {},
                  std::move(truth)};
  if (ds.graph.num_edges(spec.target()) == 0) throw ValidationError("synth spec produced no target-behavior edges");

  IdMap entities = IdMap::sequential(M, "i"), relations;
  std::vector<Triple> triples;
  for (std::size_t r = 0; r < R; ++r) {
    const auto rel = relations.intern("rel" + std::to_string(r));
    for (std::size_t i = 0; i < M; ++i) {
      const auto e = entities.intern("r" + std::to_string(r) + "_a" + std::to_string(ds.truth.attribute[r][i]));
      triples.push_back({i, rel, e});
    }
  }
  ds.kg = KnowledgeGraph::build(M, std::move(entities), std::move(relations), std::move(triples));
  return ds;
}

/// Diagnostic sidecar: resolved spec, item attributes and latent tables.
inline void write_ground_truth(std::ostream& out, const SynthTruth& t) {
  out << "# resolved spec\n";
  for (const auto& e : t.spec.to_kv()) out << "spec\t" << e.key << '\t' << e.value << '\n';
  out << "# item\trelation\tattribute\n";
  for (std::size_t r = 0; r < t.attribute.size(); ++r)
    for (std::size_t i = 0; i < t.attribute[r].size(); ++i)
      out << "attr\ti" << i << "\trel" << r << '\t' << t.attribute[r][i] << '\n';
  auto dump = [&](const std::string& tag, const Matrix& m) {
    for (std::size_t row = 0; row < m.rows(); ++row) {
      out << tag << '\t' << row;
      for (double v : m.row(row)) out << '\t' << format_double(v);
      out << '\n';
    }
  };
  for (std::size_t r = 0; r < t.attribute_latent.size(); ++r) dump("attr_latent\trel" + std::to_string(r), t.attribute_latent[r]);
  for (std::size_t k = 0; k < t.spec.intents; ++k)
    for (std::size_t r = 0; r < t.spec.relations; ++r)
      dump("preference\tintent" + std::to_string(k) + "\trel" + std::to_string(r), t.preference[k * t.spec.relations + r]);
  for (std::size_t b = 0; b < t.mixture.size(); ++b) dump("mixture\t" + t.spec.behaviors[b], t.mixture[b]);
}

}  // namespace kamcl
