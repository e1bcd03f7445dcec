#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "kamcl/error.hpp"
#include "kamcl/kv.hpp"
#include "kamcl/text.hpp"

namespace kamcl {

/// Similarity s(a, b) used inside both contrastive losses.
enum class Similarity { cosine, dot };

/// Negative pool for the contrastive losses: the other batch members, or the
/// batch plus `count` extra uniformly drawn rows.
struct ClNegatives {
  enum class Kind { batch, sampled } kind = Kind::batch;
  std::size_t count = 0;
  bool operator==(const ClNegatives&) const = default;
};

struct TrainConfig {
  // model
  std::size_t dim = 64;
  std::size_t layers = 3;
  std::size_t intents = 4;
  Similarity similarity = Similarity::cosine;
  bool per_behavior_base = false;
  /// Replaces the intent gate with all-ones (intent-blind ablation).
  bool no_intent = false;
  double init_std = 0.1;

  // optimization
  double lr = 0.001;
  std::size_t batch_size = 128;
  std::size_t epochs = 50;
  std::uint64_t seed = 2024;
  std::size_t negative_sampling = 1;
  /// Early-stopping patience in epochs over validation NDCG@10; 0 disables validation.
  std::size_t patience = 0;
  double val_fraction = 0.05;
  /// Behavior weights; empty means uniform. Normalized to sum 1.
  std::vector<double> gamma;

  // loss
  double tau = 0.2;
  double lambda1 = 0.01;
  double lambda2 = 0.01;
  double lambda3 = 1e-4;
  bool disable_icl = false;
  bool disable_bcl = false;
  bool infonce_include_positive = false;
  ClNegatives cl_negatives;
  std::size_t cl_relation_pairs = 6;

  // evaluation
  std::size_t eval_negatives = 99;
  bool eval_exclude_auxiliary = false;
  std::uint64_t eval_seed = 7;

  // data preparation
  std::size_t min_entity_degree = 1;
  std::size_t min_relation_count = 10;
  std::uint64_t split_seed = 1;

  bool operator==(const TrainConfig&) const = default;

  double effective_lambda1() const { return disable_icl ? 0.0 : lambda1; }
  double effective_lambda2() const { return disable_bcl ? 0.0 : lambda2; }

  /// gamma normalized to B entries summing to 1.
  std::vector<double> behavior_weights(std::size_t num_behaviors) const {
    if (gamma.empty()) return std::vector<double>(num_behaviors, 1.0 / static_cast<double>(num_behaviors));
    if (gamma.size() != num_behaviors)
      throw ValidationError("train.gamma has " + std::to_string(gamma.size()) + " entries for " +
                            std::to_string(num_behaviors) + " behaviors");
    double total = 0.0;
    for (double g : gamma) total += g;
    std::vector<double> w = gamma;
    for (auto& g : w) g /= total;
    return w;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw ValidationError("config: " + m); };
    if (dim == 0) fail("model.dim must be > 0");
    if (layers < 1) fail("model.layers must be >= 1");
    if (intents < 1) fail("model.intents must be >= 1");
    if (!(init_std >= 0)) fail("model.init_std must be >= 0");
    if (!(lr > 0)) fail("train.lr must be > 0");
    if (batch_size == 0) fail("train.batch_size must be > 0");
    if (negative_sampling == 0) fail("train.negative_sampling must be > 0");
    if (!(val_fraction >= 0 && val_fraction < 1)) fail("train.val_fraction must be in [0, 1)");
    if (!(tau > 0)) fail("loss.tau must be > 0");
    if (!(lambda1 >= 0 && lambda2 >= 0 && lambda3 >= 0)) fail("loss.lambda* must be >= 0");
    if (cl_relation_pairs == 0) fail("loss.cl_relation_pairs must be > 0");
    if (eval_negatives == 0) fail("eval.negatives must be > 0");
    if (min_entity_degree < 1 || min_relation_count < 1) fail("data thresholds must be >= 1");
    double gsum = 0.0;
    for (double g : gamma) {
      if (!(g >= 0)) fail("train.gamma entries must be >= 0");
      gsum += g;
    }
    if (!gamma.empty() && !(gsum > 0)) fail("train.gamma must have a positive sum");
  }

  KvList to_kv() const;
  void set(const KvEntry& e);

  /// Applies `entries` on top of `base` (defaults when omitted) and validates.
  static TrainConfig from_kv(const KvList& entries, TrainConfig base);
  static TrainConfig from_kv(const KvList& entries);
  static TrainConfig from_file(const std::string& path, TrainConfig base);
  static TrainConfig from_file(const std::string& path);

  /// Hash of the canonical serialization.
  std::string hash() const { return hex64(fnv1a(to_kv_string(to_kv()))); }
};

namespace detail {

struct ConfigField {
  const char* key;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const KvEntry&)> set;
};

template <class T>
ConfigField size_field(const char* key, T TrainConfig::*m) {
  return {key, [m](const TrainConfig& c) { return std::to_string(c.*m); },
          [m](TrainConfig& c, const KvEntry& e) { c.*m = static_cast<T>(kv::to_uint(e)); }};
}
inline ConfigField double_field(const char* key, double TrainConfig::*m) {
  return {key, [m](const TrainConfig& c) { return kv::from_double(c.*m); },
          [m](TrainConfig& c, const KvEntry& e) { c.*m = kv::to_double(e); }};
}
inline ConfigField bool_field(const char* key, bool TrainConfig::*m) {
  return {key, [m](const TrainConfig& c) { return std::string(c.*m ? "true" : "false"); },
          [m](TrainConfig& c, const KvEntry& e) { c.*m = kv::to_bool(e); }};
}

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = {
      size_field("model.dim", &TrainConfig::dim),
      size_field("model.layers", &TrainConfig::layers),
      size_field("model.intents", &TrainConfig::intents),
      {"model.similarity",
       [](const TrainConfig& c) { return std::string(c.similarity == Similarity::cosine ? "cosine" : "dot"); },
       [](TrainConfig& c, const KvEntry& e) {
         if (e.value == "cosine")
           c.similarity = Similarity::cosine;
         else if (e.value == "dot")
           c.similarity = Similarity::dot;
         else
           throw ParseError("model.similarity must be cosine or dot", e.line);
       }},
      bool_field("model.per_behavior_base", &TrainConfig::per_behavior_base),
      bool_field("model.no_intent", &TrainConfig::no_intent),
      double_field("model.init_std", &TrainConfig::init_std),
      double_field("train.lr", &TrainConfig::lr),
      size_field("train.batch_size", &TrainConfig::batch_size),
      size_field("train.epochs", &TrainConfig::epochs),
      size_field("train.seed", &TrainConfig::seed),
      size_field("train.negative_sampling", &TrainConfig::negative_sampling),
      size_field("train.patience", &TrainConfig::patience),
      double_field("train.val_fraction", &TrainConfig::val_fraction),
      {"train.gamma", [](const TrainConfig& c) { return kv::from_doubles(c.gamma); },
       [](TrainConfig& c, const KvEntry& e) { c.gamma = kv::to_doubles(e); }},
      double_field("loss.tau", &TrainConfig::tau),
      double_field("loss.lambda1", &TrainConfig::lambda1),
      double_field("loss.lambda2", &TrainConfig::lambda2),
      double_field("loss.lambda3", &TrainConfig::lambda3),
      bool_field("loss.disable_icl", &TrainConfig::disable_icl),
      bool_field("loss.disable_bcl", &TrainConfig::disable_bcl),
      bool_field("loss.infonce_include_positive", &TrainConfig::infonce_include_positive),
      {"loss.cl_negatives",
       [](const TrainConfig& c) {
         return c.cl_negatives.kind == ClNegatives::Kind::batch ? std::string("batch")
                                                                : "sampled(" + std::to_string(c.cl_negatives.count) + ")";
       },
       [](TrainConfig& c, const KvEntry& e) {
         if (e.value == "batch") {
           c.cl_negatives = {};
           return;
         }
         const std::string prefix = "sampled(";
         if (e.value.rfind(prefix, 0) == 0 && e.value.back() == ')') {
           KvEntry inner{e.key, e.value.substr(prefix.size(), e.value.size() - prefix.size() - 1), e.line};
           c.cl_negatives = {ClNegatives::Kind::sampled, static_cast<std::size_t>(kv::to_uint(inner))};
           return;
         }
         throw ParseError("loss.cl_negatives must be 'batch' or 'sampled(k)'", e.line);
       }},
      size_field("loss.cl_relation_pairs", &TrainConfig::cl_relation_pairs),
      size_field("eval.negatives", &TrainConfig::eval_negatives),
      bool_field("eval.exclude_auxiliary", &TrainConfig::eval_exclude_auxiliary),
      size_field("eval.seed", &TrainConfig::eval_seed),
      size_field("data.min_entity_degree", &TrainConfig::min_entity_degree),
      size_field("data.min_relation_count", &TrainConfig::min_relation_count),
      size_field("data.split_seed", &TrainConfig::split_seed),
  };
  return fields;
}

}  // namespace detail

inline TrainConfig TrainConfig::from_kv(const KvList& entries, TrainConfig base) {
  for (const auto& e : entries) base.set(e);
  base.validate();
  return base;
}
inline TrainConfig TrainConfig::from_kv(const KvList& entries) { return from_kv(entries, TrainConfig{}); }
inline TrainConfig TrainConfig::from_file(const std::string& path, TrainConfig base) {
  auto in = open_input(path);
  return from_kv(parse_kv(in), std::move(base));
}
inline TrainConfig TrainConfig::from_file(const std::string& path) { return from_file(path, TrainConfig{}); }

inline KvList TrainConfig::to_kv() const {
  KvList out;
  for (const auto& f : detail::config_fields()) out.push_back({f.key, f.get(*this)});
  return out;
}

/// Applies one entry. Unknown keys are errors so a typo cannot silently fall back to a default.
inline void TrainConfig::set(const KvEntry& e) {
  for (const auto& f : detail::config_fields())
    if (e.key == f.key) return f.set(*this, e);
  throw ValidationError("unknown config key '" + e.key + "'" + (e.line ? " at line " + std::to_string(e.line) : ""));
}

}  // namespace kamcl
