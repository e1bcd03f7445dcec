#pragma once

// Loop-only reference evaluation of the model and its losses, written from
// the formulas with nested vectors and no shared code paths beyond the input
// containers. Each comparison returns the max absolute deviation.

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "kamcl/kamcl.hpp"

namespace kamcl::oracles {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

inline Mat to_mat(const Matrix& m) {
  Mat out(m.rows(), Vec(m.cols()));
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out[r][c] = m(r, c);
  return out;
}

inline double max_dev(const Mat& a, const Matrix& b) {
  if (a.size() != b.rows()) return INFINITY;
  double worst = 0;
  for (std::size_t r = 0; r < a.size(); ++r) {
    if (a[r].size() != b.cols()) return INFINITY;
    for (std::size_t c = 0; c < a[r].size(); ++c) worst = std::max(worst, std::abs(a[r][c] - b(r, c)));
  }
  return worst;
}

inline double dot(const Vec& a, const Vec& b) {
  double s = 0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

inline Vec softmax(const Vec& x) {
  double mx = *std::max_element(x.begin(), x.end()), z = 0;
  Vec out(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) z += out[k] = std::exp(x[k] - mx);
  for (auto& v : out) v /= z;
  return out;
}

/// W v + b with W: d x (|R| d).
inline Vec fuse(const Mat& w, const Vec& bias, const Vec& v) {
  Vec out(w.size());
  for (std::size_t o = 0; o < w.size(); ++o) out[o] = bias[o] + dot(w[o], v);
  return out;
}

inline double cosine(const Vec& a, const Vec& b) {
  return dot(a, b) / ((std::sqrt(dot(a, a)) + 1e-12) * (std::sqrt(dot(b, b)) + 1e-12));
}

/// Mean over ordered view pairs (a != b) and anchors i of
/// -cos(x^a_i, x^b_i)/tau + log sum_{j != i} exp(cos(x^a_i, x^b_j)/tau).
inline double info_nce(const std::vector<Mat>& views, const std::vector<std::size_t>& anchors, double tau) {
  double total = 0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < views.size(); ++a)
    for (std::size_t b = 0; b < views.size(); ++b) {
      if (a == b) continue;
      double sum = 0;
      for (std::size_t i : anchors) {
        double denom = 0;
        for (std::size_t j : anchors)
          if (j != i) denom += std::exp(cosine(views[a][i], views[b][j]) / tau);
        sum += -cosine(views[a][i], views[b][i]) / tau + std::log(denom);
      }
      total += sum / static_cast<double>(anchors.size());
      ++pairs;
    }
  return pairs ? total / static_cast<double>(pairs) : 0.0;
}

struct Instance {
  InteractionGraph graph;
  KnowledgeGraph kg;
  TrainConfig config;
  ModelParams params;
  TrainBatch batch;
};

/// Random instance: 7 users, 6 items, 12 entities, 3 relations, 3 behaviors,
/// 3 intents, d = 5, L = 2. Architecture flags vary with the seed.
inline Instance random_instance(std::uint64_t seed) {
  const std::size_t N = 7, M = 6, E = 12, R = 3, B = 3;
  Rng rng(seed, 0x0AC1E);
  Instance in;
  std::vector<Interaction> edges;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t u = 0; u < N; ++u)
      for (std::size_t i = 0; i < M; ++i)
        if (rng.uniform() < 0.35) edges.push_back({u, i, b});
  in.graph = InteractionGraph::build(N, M, {"view", "cart", "buy"}, 2, edges);

  // Undirected pairs are kept unique per relation so neighbor lists have no repeats.
  IdMap entities = IdMap::sequential(M, "i"), relations;
  for (std::size_t e = M; e < E; ++e) entities.intern("e" + std::to_string(e));
  for (std::size_t r = 0; r < R; ++r) relations.intern("r" + std::to_string(r));
  std::vector<Triple> triples;
  std::set<std::tuple<std::size_t, std::size_t, std::size_t>> seen;
  while (triples.size() < 16) {
    const std::size_t h = rng.index(E), t = rng.index(E), r = rng.index(R);
    if (h == t || !seen.insert({r, std::min(h, t), std::max(h, t)}).second) continue;
    triples.push_back({h, r, t});
  }
  in.kg = KnowledgeGraph::build(M, entities, relations, triples);

  auto& c = in.config;
  c.dim = 5;
  c.layers = 2;
  c.intents = 3;
  c.per_behavior_base = seed % 2 == 1;
  c.no_intent = seed % 4 == 0;
  if (seed % 3 == 0) c.gamma = {0.5, 1.0, 2.5};
  c.tau = 0.3 + 0.1 * static_cast<double>(seed % 3);
  c.lambda1 = 0.2;
  c.lambda2 = 0.15;
  c.lambda3 = 0.01;
  const auto ctx = ModelContext::make(in.graph, in.kg, c);
  in.params = ModelParams::init(ctx.shape(), 0.6, seed);
  for (std::size_t k = 0; k < 6; ++k) in.batch.push(rng.index(N), rng.index(M), rng.index(M));
  return in;
}

/// Everything the reference evaluation produces.
struct Reference {
  std::vector<std::vector<Mat>> relation_states;  // [l][r]: E x d
  std::vector<Mat> item_layers;                   // [l-1]: M x d
  Mat alpha;                                      // P x R
  Mat intents;                                    // P x d
  std::vector<Mat> user_intents;                  // [b]: N x d
  std::vector<std::vector<Mat>> behavior_states;  // [l][b]: N x d
  std::vector<Mat> user_layers;                   // [l-1]: N x d
  Mat user_final, item_final;
};

inline Reference reference_forward(const Instance& in) {
  const auto& g = in.graph;
  const auto& cfg = in.config;
  const std::size_t N = g.num_users(), M = g.num_items(), B = g.num_behaviors(), E = in.kg.num_entities(),
                    R = in.kg.num_relations(), L = cfg.layers, P = cfg.intents, d = cfg.dim;
  const Mat ent = to_mat(in.params.entity_emb.value), rel = to_mat(in.params.relation_emb.value),
            w = to_mat(in.params.fusion_w.value), ilog = to_mat(in.params.intent_logits.value),
            ulog = to_mat(in.params.user_intent_logits.value), base = to_mat(in.params.user_base.value);
  const Vec bias = to_mat(in.params.fusion_b.value)[0];

  std::vector<std::vector<std::vector<std::size_t>>> nb(R, std::vector<std::vector<std::size_t>>(E));
  for (const auto& t : in.kg.triples()) {
    nb[t.relation][t.head].push_back(t.tail);
    nb[t.relation][t.tail].push_back(t.head);
  }

  Reference ref;
  ref.relation_states.assign(L + 1, std::vector<Mat>(R, ent));
  for (std::size_t l = 1; l <= L; ++l) {
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t e = 0; e < E; ++e) {
        const auto& prev = ref.relation_states[l - 1][r];
        if (nb[r][e].empty()) {
          ref.relation_states[l][r][e] = prev[e];
          continue;
        }
        Vec acc(d, 0.0);
        for (auto j : nb[r][e])
          for (std::size_t c = 0; c < d; ++c) acc[c] += prev[j][c] * rel[r][c];
        for (auto& v : acc) v /= static_cast<double>(nb[r][e].size());
        ref.relation_states[l][r][e] = acc;
      }
    Mat items(M);
    for (std::size_t i = 0; i < M; ++i) {
      Vec cat;
      for (std::size_t r = 0; r < R; ++r)
        cat.insert(cat.end(), ref.relation_states[l][r][i].begin(), ref.relation_states[l][r][i].end());
      items[i] = fuse(w, bias, cat);
    }
    ref.item_layers.push_back(items);
  }

  for (std::size_t k = 0; k < P; ++k) {
    ref.alpha.push_back(softmax(ilog[k]));
    Vec cat;
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < d; ++c) cat.push_back(ref.alpha[k][r] * rel[r][c]);
    ref.intents.push_back(fuse(w, bias, cat));
  }
  ref.user_intents.assign(B, Mat(N, Vec(d, 0.0)));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t u = 0; u < N; ++u) {
      const Vec beta = softmax(ulog[b * N + u]);
      for (std::size_t k = 0; k < P; ++k)
        for (std::size_t c = 0; c < d; ++c) ref.user_intents[b][u][c] += beta[k] * ref.intents[k][c];
    }

  double gsum = 0;
  Vec gamma(B, 1.0);
  if (!cfg.gamma.empty()) gamma = cfg.gamma;
  for (double v : gamma) gsum += v;
  for (auto& v : gamma) v /= gsum;

  ref.behavior_states.assign(L + 1, std::vector<Mat>(B, Mat(N)));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t u = 0; u < N; ++u) ref.behavior_states[0][b][u] = base[(cfg.per_behavior_base ? b * N : 0) + u];
  for (std::size_t l = 1; l <= L; ++l) {
    Mat layer(N, Vec(d, 0.0));
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t u = 0; u < N; ++u) {
        Vec agg(d, 0.0);
        std::size_t count = 0;
        for (std::size_t i = 0; i < M; ++i) {
          if (!g.has_edge(u, i, b)) continue;
          ++count;
          for (std::size_t c = 0; c < d; ++c) agg[c] += ref.item_layers[l - 1][i][c];
        }
        if (count)
          for (auto& v : agg) v /= static_cast<double>(count);
        Vec next = ref.behavior_states[l - 1][b][u];
        for (std::size_t c = 0; c < d; ++c) next[c] += (cfg.no_intent ? 1.0 : ref.user_intents[b][u][c]) * agg[c];
        ref.behavior_states[l][b][u] = next;
        for (std::size_t c = 0; c < d; ++c) layer[u][c] += gamma[b] * next[c];
      }
    ref.user_layers.push_back(layer);
  }
  ref.user_final.assign(N, Vec(d, 0.0));
  ref.item_final.assign(M, Vec(d, 0.0));
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t c = 0; c < d; ++c) {
      for (std::size_t u = 0; u < N; ++u) ref.user_final[u][c] += ref.user_layers[l][u][c];
      for (std::size_t i = 0; i < M; ++i) ref.item_final[i][c] += ref.item_layers[l][i][c];
    }
  return ref;
}

/// Per-component deviations between the library and the reference on one random instance.
inline std::vector<std::pair<std::string, double>> compare_forward(std::uint64_t seed) {
  auto in = random_instance(seed);
  const auto ref = reference_forward(in);
  const auto ctx = ModelContext::make(in.graph, in.kg, in.config);
  const std::size_t N = in.graph.num_users(), M = in.graph.num_items(), B = in.graph.num_behaviors(),
                    R = in.kg.num_relations(), L = in.config.layers;
  std::vector<std::size_t> all(N);
  for (std::size_t u = 0; u < N; ++u) all[u] = u;

  ad::Tape tape;
  const auto fp = forward(tape, in.params, ctx, all);
  std::vector<std::pair<std::string, double>> out;
  auto worst = [&](const std::string& name, double e) {
    for (auto& [n, v] : out)
      if (n == name) {
        v = std::max(v, e);
        return;
      }
    out.emplace_back(name, e);
  };

  for (std::size_t l = 1; l <= L; ++l) {
    for (std::size_t r = 0; r < R; ++r)
      worst("relation_propagation", max_dev(ref.relation_states[l][r], fp.relation_states[l][r].value()));
    worst("item_fusion", max_dev(ref.item_layers[l - 1], fp.item_layers[l - 1].value()));
  }
  const auto bank = compute_intent_bank(in.params.relation_emb.value, in.params.intent_logits.value,
                                        in.params.fusion_w.value, in.params.fusion_b.value);
  worst("relation_attention", max_dev(ref.alpha, bank.alpha));
  worst("intent_fusion", max_dev(ref.intents, fp.intents.value()));
  if (!in.config.no_intent)
    for (std::size_t b = 0; b < B; ++b) worst("user_intent", max_dev(ref.user_intents[b], fp.user_intents[b].value()));
  for (std::size_t l = 1; l <= L; ++l) {
    for (std::size_t b = 0; b < B; ++b)
      worst("behavior_update", max_dev(ref.behavior_states[l][b], fp.behavior_states[l][b].value()));
    worst("behavior_fusion", max_dev(ref.user_layers[l - 1], fp.user_layers[l - 1].value()));
  }
  worst("layer_sum", std::max(max_dev(ref.user_final, fp.user_final.value()),
                              max_dev(ref.item_final, fp.item_final.value())));

  const auto tables = compute_tables(in.params, ctx);
  double score_dev = 0;
  for (std::size_t u = 0; u < N; ++u)
    for (std::size_t i = 0; i < M; ++i)
      score_dev = std::max(score_dev, std::abs(score(tables, u, i) - dot(ref.user_final[u], ref.item_final[i])));
  worst("score", score_dev);

  // Objective on the batch: BPR plus both contrastive views.
  ad::Tape t2;
  const auto parts = total_loss(t2, in.params, ctx, in.batch);
  double bpr = 0;
  for (std::size_t k = 0; k < in.batch.size(); ++k) {
    const auto& u = ref.user_final[in.batch.users[k]];
    const double x = dot(u, ref.item_final[in.batch.pos[k]]) - dot(u, ref.item_final[in.batch.neg[k]]);
    bpr += -std::log(1.0 / (1.0 + std::exp(-x)));
  }
  bpr /= static_cast<double>(in.batch.size());
  worst("bpr", std::abs(parts.bpr.value().item() - bpr));

  std::set<std::size_t> item_set(in.batch.pos.begin(), in.batch.pos.end());
  item_set.insert(in.batch.neg.begin(), in.batch.neg.end());
  std::set<std::size_t> user_set(in.batch.users.begin(), in.batch.users.end());
  const std::vector<std::size_t> items(item_set.begin(), item_set.end()), users(user_set.begin(), user_set.end());
  std::vector<Mat> user_views(B);
  for (std::size_t b = 0; b < B; ++b)
    for (auto u : users) user_views[b].push_back(ref.behavior_states[L][b][u]);
  std::vector<std::size_t> user_anchors(users.size());
  for (std::size_t k = 0; k < users.size(); ++k) user_anchors[k] = k;
  const double icl = info_nce(ref.relation_states[L], items, in.config.tau);
  const double bcl = info_nce(user_views, user_anchors, in.config.tau);
  worst("item_infonce", std::abs(parts.icl.value().item() - icl));
  worst("behavior_infonce", std::abs(parts.bcl.value().item() - bcl));

  double reg = 0;
  auto sq = [](const Vec& v) { return dot(v, v); };
  const auto ent = to_mat(in.params.entity_emb.value);
  for (auto i : items) reg += sq(ent[i]);
  for (const auto* m : {&in.params.relation_emb.value, &in.params.fusion_w.value, &in.params.fusion_b.value,
                        &in.params.intent_logits.value})
    for (const auto& row : to_mat(*m)) reg += sq(row);
  const auto base = to_mat(in.params.user_base.value), ulog = to_mat(in.params.user_intent_logits.value);
  for (std::size_t b = 0; b < (in.config.per_behavior_base ? B : 1); ++b)
    for (auto u : users) reg += sq(base[b * N + u]);
  if (!in.config.no_intent)
    for (std::size_t b = 0; b < B; ++b)
      for (auto u : users) reg += sq(ulog[b * N + u]);
  const auto& c = in.config;
  const double total = bpr + c.lambda1 * icl + c.lambda2 * bcl + c.lambda3 * reg;
  worst("objective", std::abs(parts.total.value().item() - total));
  return out;
}

}  // namespace kamcl::oracles
