#pragma once

// Parameters and the full forward pass: relation propagation and fusion on
// the item side, intents, per-behavior user states, layer summation.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kamcl/behavior.hpp"
#include "kamcl/checkpoint.hpp"
#include "kamcl/config.hpp"
#include "kamcl/intent.hpp"
#include "kamcl/interaction_graph.hpp"
#include "kamcl/kg_aggregator.hpp"
#include "kamcl/knowledge_graph.hpp"
#include "kamcl/rng.hpp"

namespace kamcl {

struct ModelShape {
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t entities = 0;
  std::size_t relations = 0;
  std::size_t behaviors = 0;
  std::size_t intents = 0;
  std::size_t dim = 0;
  bool per_behavior_base = false;
};

/// Every trainable tensor of the model.
struct ModelParams {
  ad::ParamTensor entity_emb;          // |E| x d; rows [0, M) are the items
  ad::ParamTensor relation_emb;        // |R| x d
  ad::ParamTensor fusion_w;            // d x (|R| d)
  ad::ParamTensor fusion_b;            // 1 x d
  ad::ParamTensor intent_logits;       // |P| x |R|
  ad::ParamTensor user_intent_logits;  // (B N) x |P|; row b*N + u
  ad::ParamTensor user_base;           // N x d, or (B N) x d with per-behavior bases

  /// Entity/relation/user tables, logits and fusion weight ~ normal(0, std); fusion bias = 0.
  static ModelParams init(const ModelShape& s, double stddev, std::uint64_t seed) {
    Rng rng(seed, /*stream=*/0x1417);
    auto normal = [&](std::size_t r, std::size_t c) {
      Matrix m(r, c);
      for (auto& v : m.values()) v = rng.normal(0.0, stddev);
      return m;
    };
    ModelParams p;
    p.entity_emb = {"entity_emb", normal(s.entities, s.dim)};
    p.relation_emb = {"relation_emb", normal(s.relations, s.dim)};
    p.fusion_w = {"fusion_w", normal(s.dim, s.relations * s.dim)};
    p.fusion_b = {"fusion_b", Matrix(1, s.dim)};
    p.intent_logits = {"intent_logits", normal(s.intents, s.relations)};
    p.user_intent_logits = {"user_intent_logits", normal(s.behaviors * s.users, s.intents)};
    p.user_base = {"user_base", normal((s.per_behavior_base ? s.behaviors : 1) * s.users, s.dim)};
    return p;
  }

  std::vector<ad::ParamTensor*> all() {
    return {&entity_emb, &relation_emb, &fusion_w, &fusion_b, &intent_logits, &user_intent_logits, &user_base};
  }
  std::vector<const ad::ParamTensor*> all() const {
    return {&entity_emb, &relation_emb, &fusion_w, &fusion_b, &intent_logits, &user_intent_logits, &user_base};
  }

  void zero_grad() {
    for (auto* p : all()) p->zero_grad();
  }

  std::vector<NamedTensor> to_tensors() const {
    std::vector<NamedTensor> out;
    for (const auto* p : all()) out.push_back({p->name, p->value});
    return out;
  }

  static ModelParams from_checkpoint(const Checkpoint& ckpt) {
    ModelParams p;
    auto load = [&](ad::ParamTensor& t, const char* name) { t = {name, ckpt.at(name)}; };
    load(p.entity_emb, "entity_emb");
    load(p.relation_emb, "relation_emb");
    load(p.fusion_w, "fusion_w");
    load(p.fusion_b, "fusion_b");
    load(p.intent_logits, "intent_logits");
    load(p.user_intent_logits, "user_intent_logits");
    load(p.user_base, "user_base");
    return p;
  }
};

/// Immutable inputs of the forward pass.
struct ModelContext {
  const InteractionGraph* train = nullptr;  // target edges of test users removed
  std::vector<RelationSubgraph> subgraphs;  // at least one (an empty one when the KG has no relations)
  std::size_t num_entities = 0;
  TrainConfig config;
  std::vector<double> gamma;

  static ModelContext make(const InteractionGraph& train, const KnowledgeGraph& kg, const TrainConfig& config) {
    if (kg.num_items() != train.num_items())
      throw ValidationError("knowledge graph covers " + std::to_string(kg.num_items()) + " items, interactions have " +
                            std::to_string(train.num_items()));
    ModelContext ctx;
    ctx.train = &train;
    ctx.num_entities = kg.num_entities();
    ctx.subgraphs = build_relation_subgraphs(kg);
    if (ctx.subgraphs.empty()) {
      // No relations: a single empty subgraph so every item carries its base row.
      RelationSubgraph empty;
      empty.neighbors = Csr::from_pairs(kg.num_entities(), {});
      ctx.subgraphs.push_back(std::move(empty));
    }
    ctx.config = config;
    ctx.gamma = config.behavior_weights(train.num_behaviors());
    return ctx;
  }

  ModelShape shape() const {
    return {train->num_users(), train->num_items(), num_entities, subgraphs.size(), train->num_behaviors(),
            config.intents,     config.dim,         config.per_behavior_base};
  }

  void check(const ModelParams& p) const {
    const auto s = shape();
    auto expect = [](const ad::ParamTensor& t, std::size_t r, std::size_t c) {
      if (t.value.rows() != r || t.value.cols() != c)
        throw ValidationError("parameter '" + t.name + "' has shape " + t.value.shape_string() + ", expected " +
                              std::to_string(r) + "x" + std::to_string(c));
    };
    expect(p.entity_emb, s.entities, s.dim);
    expect(p.relation_emb, s.relations, s.dim);
    expect(p.fusion_w, s.dim, s.relations * s.dim);
    expect(p.fusion_b, 1, s.dim);
    expect(p.intent_logits, s.intents, s.relations);
    expect(p.user_intent_logits, s.behaviors * s.users, s.intents);
    expect(p.user_base, (s.per_behavior_base ? s.behaviors : 1) * s.users, s.dim);
  }
};

/// Everything one forward pass records, for loss assembly and inspection.
struct ForwardPass {
  std::vector<std::size_t> users;                  // row k of user tensors = users[k]
  std::vector<std::vector<ad::Var>> relation_states;  // [l][r], |E| x d, l = 0..L
  std::vector<ad::Var> item_layers;                // [l-1], M x d, l = 1..L
  ad::Var intents;                                 // |P| x d
  std::vector<ad::Var> user_intents;               // [b], n x d
  std::vector<std::vector<ad::Var>> behavior_states;  // [l][b], n x d, l = 0..L
  std::vector<ad::Var> user_layers;                // [l-1], n x d
  ad::Var user_final;                              // n x d
  ad::Var item_final;                              // M x d

  ad::Var entity_leaf, relation_leaf, fusion_w_leaf, fusion_b_leaf, intent_logits_leaf, user_intent_leaf,
      user_base_leaf;
};

/// Sum over layers 1..L of per-layer embeddings.
inline ad::Var final_embeddings(std::span<const ad::Var> layers) {
  if (layers.empty()) throw ContractError("final_embeddings: no layers");
  const std::vector<double> ones(layers.size(), 1.0);
  return ad::weighted_sum(layers, ones);
}

/// Forward pass for the listed users (all items are always computed).
inline ForwardPass forward(ad::Tape& tape, ModelParams& params, const ModelContext& ctx,
                           const std::vector<std::size_t>& users) {
  ctx.check(params);
  const auto& cfg = ctx.config;
  const auto& g = *ctx.train;
  const std::size_t L = cfg.layers, R = ctx.subgraphs.size(), B = g.num_behaviors(), N = g.num_users(),
                    M = g.num_items();

  ForwardPass fp;
  fp.users = users;
  fp.entity_leaf = tape.leaf(params.entity_emb);
  fp.relation_leaf = tape.leaf(params.relation_emb);
  fp.fusion_w_leaf = tape.leaf(params.fusion_w);
  fp.fusion_b_leaf = tape.leaf(params.fusion_b);
  fp.intent_logits_leaf = tape.leaf(params.intent_logits);
  fp.user_intent_leaf = tape.leaf(params.user_intent_logits);
  fp.user_base_leaf = tape.leaf(params.user_base);
  const FusionVars fusion{fp.fusion_w_leaf, fp.fusion_b_leaf};

  // Item side.
  std::vector<ad::Var> relation_rows(R);
  for (std::size_t r = 0; r < R; ++r) relation_rows[r] = ad::gather_rows(fp.relation_leaf, {r});
  std::vector<std::size_t> item_rows(M);
  for (std::size_t i = 0; i < M; ++i) item_rows[i] = i;

  fp.relation_states.assign(L + 1, std::vector<ad::Var>(R, fp.entity_leaf));
  for (std::size_t l = 1; l <= L; ++l) {
    std::vector<ad::Var> items_per_relation(R);
    for (std::size_t r = 0; r < R; ++r) {
      fp.relation_states[l][r] = propagate_relation(ctx.subgraphs[r], fp.relation_states[l - 1][r], relation_rows[r]);
      items_per_relation[r] = M == ctx.num_entities ? fp.relation_states[l][r]
                                                    : ad::gather_rows(fp.relation_states[l][r], item_rows);
    }
    fp.item_layers.push_back(fuse_items(items_per_relation, fusion));
  }
  fp.item_final = final_embeddings(fp.item_layers);

  // Intents and per-behavior user intents.
  fp.intents = build_intents(fp.relation_leaf, fp.intent_logits_leaf, fusion);
  fp.user_intents.resize(B);
  if (!cfg.no_intent) {
    for (std::size_t b = 0; b < B; ++b) {
      std::vector<std::size_t> rows(users.size());
      for (std::size_t k = 0; k < users.size(); ++k) rows[k] = b * N + users[k];
      fp.user_intents[b] = user_intent(ad::gather_rows(fp.user_intent_leaf, std::move(rows)), fp.intents);
    }
  }

  // User side.
  fp.behavior_states.assign(L + 1, std::vector<ad::Var>(B));
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<std::size_t> rows(users.size());
    for (std::size_t k = 0; k < users.size(); ++k) rows[k] = (cfg.per_behavior_base ? b * N : 0) + users[k];
    if (cfg.per_behavior_base || b == 0)
      fp.behavior_states[0][b] = ad::gather_rows(fp.user_base_leaf, std::move(rows));
    else
      fp.behavior_states[0][b] = fp.behavior_states[0][0];
  }
  std::vector<Csr> neighborhoods(B);
  for (std::size_t b = 0; b < B; ++b) neighborhoods[b] = g.adjacency(b).select_rows(users);
  for (std::size_t l = 1; l <= L; ++l) {
    for (std::size_t b = 0; b < B; ++b) {
      auto agg = aggregate_user_items(fp.item_layers[l - 1], neighborhoods[b]);
      fp.behavior_states[l][b] = cfg.no_intent ? ad::add(agg, fp.behavior_states[l - 1][b])
                                               : update_user_behavior(fp.user_intents[b], agg,
                                                                      fp.behavior_states[l - 1][b]);
    }
    fp.user_layers.push_back(fuse_behaviors(fp.behavior_states[l], ctx.gamma));
  }
  fp.user_final = final_embeddings(fp.user_layers);
  return fp;
}

/// Final user (N x d) and item (M x d) tables for scoring.
struct EmbeddingTables {
  Matrix users;
  Matrix items;
};

inline EmbeddingTables compute_tables(ModelParams& params, const ModelContext& ctx) {
  std::vector<std::size_t> all(ctx.train->num_users());
  for (std::size_t u = 0; u < all.size(); ++u) all[u] = u;
  ad::Tape tape;
  auto fp = forward(tape, params, ctx, all);
  return {fp.user_final.value(), fp.item_final.value()};
}

/// Predicted preference: dot product of final user and item rows.
inline double score(const EmbeddingTables& t, std::size_t user, std::size_t item) {
  auto u = t.users.row(user);
  auto i = t.items.row(item);
  double s = 0.0;
  for (std::size_t c = 0; c < u.size(); ++c) s += u[c] * i[c];
  return s;
}

}  // namespace kamcl
