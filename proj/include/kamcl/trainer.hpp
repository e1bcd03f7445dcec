#pragma once

// Objective assembly, Adam, negative sampling and the epoch loop.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "kamcl/checkpoint.hpp"
#include "kamcl/config.hpp"
#include "kamcl/evaluator.hpp"
#include "kamcl/log.hpp"
#include "kamcl/model.hpp"
#include "kamcl/rng.hpp"
#include "kamcl/split.hpp"

namespace kamcl {

/// Parallel arrays of (user, positive, negative) triplets.
struct TrainBatch {
  std::vector<std::size_t> users;
  std::vector<std::size_t> pos;
  std::vector<std::size_t> neg;

  std::size_t size() const { return users.size(); }
  void push(std::size_t u, std::size_t i, std::size_t j) {
    users.push_back(u);
    pos.push_back(i);
    neg.push_back(j);
  }
};

/// -mean log sigmoid(score(u, i+) - score(u, i-)). `user_rows` index rows of
/// `users`, `pos`/`neg` rows of `items`.
inline ad::Var bpr_loss(ad::Var users, ad::Var items, const std::vector<std::size_t>& user_rows,
                        const std::vector<std::size_t>& pos, const std::vector<std::size_t>& neg) {
  if (user_rows.empty()) throw ContractError("bpr_loss: empty batch");
  if (pos.size() != user_rows.size() || neg.size() != user_rows.size())
    throw ContractError("bpr_loss: triplet arrays differ in length");
  auto u = ad::gather_rows(users, user_rows);
  auto margin = ad::sub(ad::row_dot(u, ad::gather_rows(items, pos)), ad::row_dot(u, ad::gather_rows(items, neg)));
  return ad::scale(ad::mean(ad::log_sigmoid(margin)), -1.0);
}

/// BPR on fixed tables.
inline double bpr_loss(const EmbeddingTables& tables, const TrainBatch& batch) {
  ad::Tape tape;
  return bpr_loss(tape.constant(tables.users), tape.constant(tables.items), batch.users, batch.pos, batch.neg)
      .value()
      .item();
}

struct LossParts {
  ad::Var total;
  ad::Var bpr;
  ad::Var icl;
  ad::Var bcl;
  ad::Var reg;
  ForwardPass forward;
};

/// Forward pass over the batch users plus the full objective. Contrastive
/// terms reuse the batch: ICL anchors are the batch's distinct items, BCL
/// anchors its distinct users. Terms whose weight is zero are evaluated for
/// logging but left out of `total`. `cl_rng` drives view-pair and extra
/// negative sampling; null disables both.
inline LossParts total_loss(ad::Tape& tape, ModelParams& params, const ModelContext& ctx, const TrainBatch& batch,
                            Rng* cl_rng = nullptr) {
  const auto& cfg = ctx.config;
  const std::size_t N = ctx.train->num_users(), M = ctx.train->num_items(), B = ctx.train->num_behaviors();

  std::vector<std::size_t> users = batch.users;
  std::sort(users.begin(), users.end());
  users.erase(std::unique(users.begin(), users.end()), users.end());
  std::vector<std::size_t> items = batch.pos;
  items.insert(items.end(), batch.neg.begin(), batch.neg.end());
  std::sort(items.begin(), items.end());
  items.erase(std::unique(items.begin(), items.end()), items.end());
  const std::size_t num_anchor_users = users.size();

  std::vector<std::size_t> extra_items;
  if (cfg.cl_negatives.kind == ClNegatives::Kind::sampled && cl_rng != nullptr) {
    auto draw = [&](std::size_t k, std::size_t range, const std::vector<std::size_t>& taken) {
      std::vector<std::size_t> out;
      const std::size_t available = range - taken.size();
      k = std::min(k, available);
      while (out.size() < k) {
        const std::size_t x = cl_rng->index(range);
        if (!std::binary_search(taken.begin(), taken.end(), x) && std::find(out.begin(), out.end(), x) == out.end())
          out.push_back(x);
      }
      return out;
    };
    extra_items = draw(cfg.cl_negatives.count, M, items);
    const auto extra_users = draw(cfg.cl_negatives.count, N, users);
    users.insert(users.end(), extra_users.begin(), extra_users.end());
  }

  LossParts parts;
  parts.forward = forward(tape, params, ctx, users);
  const auto& fp = parts.forward;

  std::vector<std::size_t> user_rows(batch.size());
  for (std::size_t k = 0; k < batch.size(); ++k)
    user_rows[k] = static_cast<std::size_t>(
        std::lower_bound(users.begin(), users.begin() + static_cast<std::ptrdiff_t>(num_anchor_users), batch.users[k]) -
        users.begin());
  parts.bpr = bpr_loss(fp.user_final, fp.item_final, user_rows, batch.pos, batch.neg);

  const InfoNceOptions opt{cfg.tau, cfg.similarity, cfg.infonce_include_positive};
  parts.icl = item_contrastive_loss(fp.relation_states[cfg.layers], items, opt, cfg.cl_relation_pairs, cl_rng,
                                    extra_items);
  parts.bcl = behavior_contrastive_loss(fp.behavior_states[cfg.layers], opt, cfg.cl_relation_pairs, cl_rng,
                                        num_anchor_users);

  // Squared norm of the parameters this batch touches.
  std::vector<std::size_t> intent_rows, base_rows;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t k = 0; k < num_anchor_users; ++k) intent_rows.push_back(b * N + users[k]);
  for (std::size_t b = 0; b < (cfg.per_behavior_base ? B : 1); ++b)
    for (std::size_t k = 0; k < num_anchor_users; ++k) base_rows.push_back(b * N + users[k]);
  std::vector<ad::Var> reg_terms{ad::sum_squares(ad::gather_rows(fp.entity_leaf, items)),
                                 ad::sum_squares(fp.relation_leaf),
                                 ad::sum_squares(fp.fusion_w_leaf),
                                 ad::sum_squares(fp.fusion_b_leaf),
                                 ad::sum_squares(fp.intent_logits_leaf),
                                 ad::sum_squares(ad::gather_rows(fp.user_base_leaf, base_rows))};
  if (!cfg.no_intent) reg_terms.push_back(ad::sum_squares(ad::gather_rows(fp.user_intent_leaf, intent_rows)));
  parts.reg = ad::weighted_sum(reg_terms, std::vector<double>(reg_terms.size(), 1.0));

  std::vector<ad::Var> terms{parts.bpr};
  std::vector<double> weights{1.0};
  if (cfg.effective_lambda1() > 0) {
    terms.push_back(parts.icl);
    weights.push_back(cfg.effective_lambda1());
  }
  if (cfg.effective_lambda2() > 0) {
    terms.push_back(parts.bcl);
    weights.push_back(cfg.effective_lambda2());
  }
  if (cfg.lambda3 > 0) {
    terms.push_back(parts.reg);
    weights.push_back(cfg.lambda3);
  }
  parts.total = terms.size() == 1 ? parts.bpr : ad::weighted_sum(terms, weights);
  return parts;
}

/// Adam moments for a fixed list of parameters.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::uint64_t step = 0;
  std::size_t nan_streak = 0;

  static AdamState for_params(std::span<const ad::ParamTensor* const> params) {
    AdamState s;
    for (const auto* p : params) {
      s.m.emplace_back(p->value.rows(), p->value.cols());
      s.v.emplace_back(p->value.rows(), p->value.cols());
    }
    return s;
  }
};

/// One bias-corrected Adam update from the accumulated gradients. A
/// non-finite gradient skips the step; three consecutive skips raise.
/// Returns whether the step was applied.
inline bool adam_step(std::span<ad::ParamTensor* const> params, AdamState& state, double lr) {
  if (state.m.size() != params.size()) throw ContractError("adam_step: state built for a different parameter list");
  for (const auto* p : params) {
    if (!p->grad.all_finite()) {
      ++state.nan_streak;
      log::warn("adam_step: non-finite gradient in '" + p->name + "', step skipped");
      if (state.nan_streak >= 3) throw NumericError("adam_step: non-finite gradients on 3 consecutive steps");
      return false;
    }
  }
  state.nan_streak = 0;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t), c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto* p = params[k];
    auto value = p->value.values();
    auto grad = p->grad.values();
    auto m = state.m[k].values();
    auto v = state.v[k].values();
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double g = grad[j];
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      value[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + state.eps);
    }
  }
  return true;
}

/// Uniform item with no target edge for u in `train`: up to 100 rejection
/// draws, then a scan of the eligible items.
inline std::size_t sample_negative(std::size_t u, const InteractionGraph& train, Rng& rng) {
  const std::size_t M = train.num_items();
  const Csr& target = train.target_adjacency();
  if (target.degree(u) >= M)
    throw ValidationError("user " + train.user_ids().raw(u) + " interacted with every item; no negative exists");
  for (int attempt = 0; attempt < 100; ++attempt) {
    const std::size_t i = rng.index(M);
    if (!target.contains(u, i)) return i;
  }
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < M; ++i)
    if (!target.contains(u, i)) eligible.push_back(i);
  return eligible[rng.index(eligible.size())];
}

struct EpochRecord {
  std::size_t epoch = 0;
  double total = 0;
  double bpr = 0;
  double icl = 0;
  double bcl = 0;
  std::optional<double> val_hr10;
  std::optional<double> val_ndcg10;
  bool operator==(const EpochRecord&) const = default;
};

inline void write_epoch_log_header(std::ostream& out) {
  out << "epoch\tL_total\tL_BPR\tL_ICL\tL_BCL\tval_HR@10\tval_NDCG@10\n";
}

inline void write_epoch_record(std::ostream& out, const EpochRecord& r) {
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string("NA"); };
  out << r.epoch << '\t' << format_double(r.total) << '\t' << format_double(r.bpr) << '\t' << format_double(r.icl)
      << '\t' << format_double(r.bcl) << '\t' << opt(r.val_hr10) << '\t' << opt(r.val_ndcg10) << '\n';
}

struct TrainCallbacks {
  std::function<void(const EpochRecord&)> on_epoch;
  /// Read-only view of the parameters after each epoch.
  std::function<void(const ModelParams&, std::size_t epoch)> on_snapshot;
};

struct FitResult {
  ModelParams params;
  AdamState adam;
  std::vector<EpochRecord> log;
  std::size_t epochs_run = 0;
  /// Epoch whose parameters were kept (last epoch without validation).
  std::size_t best_epoch = 0;
  bool early_stopped = false;
};

/// Carves one held-out target item from `fraction` of the eligible users of
/// `train` for early stopping.
inline DatasetSplit validation_split(const InteractionGraph& train, double fraction, std::uint64_t seed) {
  Rng rng(seed, /*stream=*/0x7a1d);
  std::vector<std::size_t> eligible;
  for (std::size_t u = 0; u < train.num_users(); ++u)
    if (train.target_adjacency().degree(u) >= 2) eligible.push_back(u);
  rng.shuffle(std::span<std::size_t>(eligible));
  const auto take = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(eligible.size())));
  eligible.resize(std::min(take, eligible.size()));
  std::sort(eligible.begin(), eligible.end());
  std::vector<std::pair<std::size_t, std::size_t>> held;
  for (auto u : eligible) {
    auto row = train.target_adjacency().row(u);
    held.emplace_back(u, row[rng.index(row.size())]);
  }
  return apply_split(train, held, seed);
}

/// Mini-batch training on `train` (test edges already removed).
inline FitResult fit(const TrainConfig& config, const InteractionGraph& train, const KnowledgeGraph& kg,
                     const TrainCallbacks& callbacks = {}) {
  config.validate();
  const bool validate = config.patience > 0 && config.val_fraction > 0;
  std::optional<DatasetSplit> val;
  if (validate) val = validation_split(train, config.val_fraction, config.seed);
  const InteractionGraph& fit_graph = val ? val->train : train;

  const ModelContext ctx = ModelContext::make(fit_graph, kg, config);
  FitResult result;
  result.params = ModelParams::init(ctx.shape(), config.init_std, config.seed);
  auto param_list = result.params.all();
  result.adam = AdamState::for_params(std::vector<const ad::ParamTensor*>(param_list.begin(), param_list.end()));

  std::optional<EvalCandidates> val_cands;
  if (val) {
    val_cands = build_candidates(*val, config.eval_seed, {config.eval_negatives, config.eval_exclude_auxiliary});
    if (val_cands->entries.empty()) {
      log::warn("fit: validation set is empty, early stopping disabled");
      val_cands.reset();
    }
  }

  std::vector<std::pair<std::size_t, std::size_t>> positives;
  const Csr& target = fit_graph.target_adjacency();
  for (std::size_t u = 0; u < fit_graph.num_users(); ++u)
    for (auto i : target.row(u)) positives.emplace_back(u, i);
  if (positives.empty() && config.epochs > 0) throw ValidationError("fit: no target-behavior training edges");

  Rng order_rng(config.seed, 0x0de5), neg_rng(config.seed, 0x4e6), cl_rng(config.seed, 0xc1);
  std::optional<ModelParams> best;
  double best_ndcg = -1.0;
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    order_rng.shuffle(std::span<std::pair<std::size_t, std::size_t>>(positives));
    EpochRecord rec;
    rec.epoch = epoch;
    double weight_total = 0.0;
    for (std::size_t start = 0; start < positives.size(); start += config.batch_size) {
      const std::size_t end = std::min(positives.size(), start + config.batch_size);
      TrainBatch batch;
      for (std::size_t k = start; k < end; ++k)
        for (std::size_t s = 0; s < config.negative_sampling; ++s)
          batch.push(positives[k].first, positives[k].second,
                     sample_negative(positives[k].first, fit_graph, neg_rng));
      ad::Tape tape;
      auto parts = total_loss(tape, result.params, ctx, batch, &cl_rng);
      result.params.zero_grad();
      tape.backward(parts.total);
      adam_step(param_list, result.adam, config.lr);
      const double w = static_cast<double>(end - start);
      rec.total += w * parts.total.value().item();
      rec.bpr += w * parts.bpr.value().item();
      rec.icl += w * parts.icl.value().item();
      rec.bcl += w * parts.bcl.value().item();
      weight_total += w;
    }
    if (weight_total > 0) {
      rec.total /= weight_total;
      rec.bpr /= weight_total;
      rec.icl /= weight_total;
      rec.bcl /= weight_total;
    }
    result.epochs_run = epoch;
    result.best_epoch = epoch;

    bool stop = false;
    if (val_cands) {
      const auto report = evaluate(compute_tables(result.params, ctx), *val_cands);
      rec.val_hr10 = report.hr(10);
      rec.val_ndcg10 = report.ndcg(10);
      if (*rec.val_ndcg10 > best_ndcg) {
        best_ndcg = *rec.val_ndcg10;
        best = result.params;
        since_best = 0;
      } else if (++since_best >= config.patience) {
        stop = true;
      }
    }
    result.log.push_back(rec);
    if (callbacks.on_epoch) callbacks.on_epoch(rec);
    if (callbacks.on_snapshot) callbacks.on_snapshot(result.params, epoch);
    log::debug("epoch " + std::to_string(epoch) + " loss " + format_double(rec.total));
    if (stop) {
      result.early_stopped = true;
      log::info("fit: early stop after epoch " + std::to_string(epoch));
      break;
    }
  }
  if (best) {
    // Restore the best validation parameters; the Adam state stays at the last step.
    result.params = std::move(*best);
    std::size_t best_epoch = 0;
    for (const auto& r : result.log)
      if (r.val_ndcg10 && *r.val_ndcg10 == best_ndcg) {
        best_epoch = r.epoch;
        break;
      }
    result.best_epoch = best_epoch;
  }
  return result;
}

/// Parameters, Adam moments, config and counters in one checkpoint.
inline Checkpoint make_checkpoint(const FitResult& fit, const TrainConfig& config) {
  Checkpoint ckpt;
  ckpt.meta["config_hash"] = config.hash();
  ckpt.meta["epoch"] = std::to_string(fit.best_epoch);
  ckpt.meta["epochs_run"] = std::to_string(fit.epochs_run);
  ckpt.meta["adam_step"] = std::to_string(fit.adam.step);
  for (const auto& e : config.to_kv()) ckpt.meta["config." + e.key] = e.value;
  ckpt.tensors = fit.params.to_tensors();
  const auto params = fit.params.all();
  for (std::size_t k = 0; k < params.size() && k < fit.adam.m.size(); ++k) {
    ckpt.tensors.push_back({"adam.m." + params[k]->name, fit.adam.m[k]});
    ckpt.tensors.push_back({"adam.v." + params[k]->name, fit.adam.v[k]});
  }
  return ckpt;
}

/// Rebuilds the training config stored in a checkpoint.
inline TrainConfig config_from_checkpoint(const Checkpoint& ckpt) {
  KvList entries;
  for (const auto& [k, v] : ckpt.meta)
    if (k.rfind("config.", 0) == 0) entries.push_back({k.substr(7), v, 0});
  if (entries.empty()) throw ValidationError("checkpoint carries no config");
  auto cfg = TrainConfig::from_kv(entries);
  if (auto it = ckpt.meta.find("config_hash"); it != ckpt.meta.end() && it->second != cfg.hash())
    throw ValidationError("checkpoint config hash mismatch");
  return cfg;
}

}  // namespace kamcl
