#pragma once

// Finite-difference checks over every tape primitive and over the full
// objective on a micro-instance. Shared by the unit tests, the acceptance
// runner and `kamcl gradcheck`.

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "kamcl/gradcheck.hpp"
#include "kamcl/model.hpp"
#include "kamcl/ops.hpp"
#include "kamcl/rng.hpp"
#include "kamcl/trainer.hpp"

namespace kamcl::gradsuite {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double sd = 1.0) {
  Rng rng(seed, 99);
  Matrix m(rows, cols);
  for (auto& v : m.values()) v = rng.normal(0.0, sd);
  return m;
}

/// Reduces an op output to a scalar with fixed random weights, so no
/// coordinate has a structurally vanishing gradient.
inline ad::Var probe(ad::Tape& t, ad::Var out, std::uint64_t seed = 12345) {
  return ad::sum(ad::mul(out, t.constant(random_matrix(out.rows(), out.cols(), seed))));
}

using OpProgram = std::function<ad::Var(ad::Tape&, std::vector<ad::Var>&)>;

/// Max relative gradient error of `op` over the given parameters.
inline ad::GradCheckResult check_op(const OpProgram& op, std::vector<ad::ParamTensor>& params, double eps = 1e-5) {
  std::vector<ad::ParamTensor*> ptrs;
  for (auto& p : params) ptrs.push_back(&p);
  return ad::check_gradient(
      [&](ad::Tape& t) {
        std::vector<ad::Var> leaves;
        for (auto& p : params) leaves.push_back(t.leaf(p));
        return probe(t, op(t, leaves));
      },
      ptrs, eps);
}

struct PrimitiveCase {
  std::string name;
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  OpProgram op;
};

inline const std::vector<PrimitiveCase>& primitive_cases() {
  using V = std::vector<ad::Var>;
  static const std::vector<PrimitiveCase> cases{
      {"add", {{3, 4}, {3, 4}}, [](ad::Tape&, V& v) { return ad::add(v[0], v[1]); }},
      {"sub", {{3, 4}, {3, 4}}, [](ad::Tape&, V& v) { return ad::sub(v[0], v[1]); }},
      {"mul", {{3, 4}, {3, 4}}, [](ad::Tape&, V& v) { return ad::mul(v[0], v[1]); }},
      {"mul_row", {{5, 3}, {1, 3}}, [](ad::Tape&, V& v) { return ad::mul_row(v[0], v[1]); }},
      {"scale", {{2, 3}}, [](ad::Tape&, V& v) { return ad::scale(v[0], -1.7); }},
      {"scale_rows", {{3, 2}}, [](ad::Tape&, V& v) { return ad::scale_rows(v[0], {0.5, 0.0, 2.0}); }},
      {"weighted_sum", {{2, 3}, {2, 3}, {2, 3}},
       [](ad::Tape&, V& v) {
         const std::vector<double> w{0.2, -1.0, 3.0};
         return ad::weighted_sum(v, w);
       }},
      {"log_sigmoid", {{3, 3}}, [](ad::Tape&, V& v) { return ad::log_sigmoid(v[0]); }},
      {"gather_rows", {{4, 3}}, [](ad::Tape&, V& v) { return ad::gather_rows(v[0], {3, 0, 3, 1}); }},
      {"segment_mean", {{5, 3}},
       [](ad::Tape&, V& v) { return ad::segment_mean(v[0], Csr::from_lists({{0, 1}, {}, {2, 3, 4}, {4}})); }},
      {"concat_cols", {{3, 2}, {3, 1}, {3, 3}}, [](ad::Tape&, V& v) { return ad::concat_cols(v); }},
      {"diagonal", {{3, 5}}, [](ad::Tape&, V& v) { return ad::diagonal(v[0]); }},
      {"matmul", {{3, 4}, {4, 2}}, [](ad::Tape&, V& v) { return ad::matmul(v[0], v[1]); }},
      {"matmul_nt", {{3, 4}, {5, 4}}, [](ad::Tape&, V& v) { return ad::matmul_nt(v[0], v[1]); }},
      {"affine", {{4, 6}, {3, 6}, {1, 3}}, [](ad::Tape&, V& v) { return ad::affine(v[0], v[1], v[2]); }},
      {"row_dot", {{4, 3}, {4, 3}}, [](ad::Tape&, V& v) { return ad::row_dot(v[0], v[1]); }},
      {"relation_blocks", {{2, 3}, {3, 4}}, [](ad::Tape&, V& v) { return ad::relation_blocks(v[0], v[1]); }},
      {"softmax_rows", {{3, 4}}, [](ad::Tape&, V& v) { return ad::softmax_rows(v[0]); }},
      {"normalize_rows", {{3, 4}}, [](ad::Tape&, V& v) { return ad::normalize_rows(v[0]); }},
      {"logsumexp_rows", {{3, 4}}, [](ad::Tape&, V& v) { return ad::logsumexp_rows(v[0]); }},
      {"logsumexp_rows_offdiag", {{3, 5}}, [](ad::Tape&, V& v) { return ad::logsumexp_rows(v[0], true); }},
      {"sum", {{2, 3}}, [](ad::Tape&, V& v) { return ad::sum(v[0]); }},
      {"mean", {{2, 3}}, [](ad::Tape&, V& v) { return ad::mean(v[0]); }},
      {"sum_squares", {{2, 3}}, [](ad::Tape&, V& v) { return ad::sum_squares(v[0]); }},
      {"cosine_rows", {{4, 3}, {4, 3}}, [](ad::Tape&, V& v) { return ad::cosine_rows(v[0], v[1]); }},
      {"cosine_matrix", {{3, 4}, {5, 4}}, [](ad::Tape&, V& v) { return ad::cosine_matrix(v[0], v[1]); }},
  };
  return cases;
}

inline ad::GradCheckResult check_primitive(const PrimitiveCase& c, std::uint64_t seed = 100) {
  std::vector<ad::ParamTensor> params;
  for (std::size_t k = 0; k < c.shapes.size(); ++k)
    params.push_back({"p" + std::to_string(k), random_matrix(c.shapes[k].first, c.shapes[k].second, seed + k)});
  return check_op(c.op, params);
}

/// N=4, M=6, |E|=10, |R|=2, B=2, |P|=2, d=4, L=1.
struct MicroInstance {
  InteractionGraph graph;
  KnowledgeGraph kg;
  TrainConfig config;
  ModelContext ctx;  // points at `graph`; copies re-point it
  ModelParams params;
  TrainBatch batch;

  MicroInstance() = default;
  MicroInstance(const MicroInstance& o)
      : graph(o.graph), kg(o.kg), config(o.config), ctx(o.ctx), params(o.params), batch(o.batch) {
    ctx.train = &graph;
  }
  MicroInstance(MicroInstance&& o) noexcept
      : graph(std::move(o.graph)),
        kg(std::move(o.kg)),
        config(std::move(o.config)),
        ctx(std::move(o.ctx)),
        params(std::move(o.params)),
        batch(std::move(o.batch)) {
    ctx.train = &graph;
  }
  MicroInstance& operator=(MicroInstance o) noexcept {
    graph = std::move(o.graph);
    kg = std::move(o.kg);
    config = std::move(o.config);
    ctx = std::move(o.ctx);
    params = std::move(o.params);
    batch = std::move(o.batch);
    ctx.train = &graph;
    return *this;
  }
};

inline MicroInstance micro_instance(std::uint64_t seed = 3) {
  MicroInstance m;
  std::vector<Interaction> edges{{0, 0, 1}, {0, 2, 1}, {1, 1, 1}, {1, 3, 1}, {2, 4, 1}, {3, 5, 1}, {3, 0, 1},
                                 {0, 1, 0}, {0, 3, 0}, {1, 0, 0}, {2, 2, 0}, {2, 5, 0}, {3, 4, 0}};
  m.graph = InteractionGraph::build(4, 6, {"view", "buy"}, 1, edges);
  IdMap entities = IdMap::sequential(6, "i"), relations;
  for (int e = 6; e < 10; ++e) entities.intern("e" + std::to_string(e));
  relations.intern("r0");
  relations.intern("r1");
  std::vector<Triple> triples{{0, 0, 6}, {1, 0, 6}, {2, 0, 7}, {3, 0, 7}, {4, 0, 6}, {5, 0, 7},
                              {0, 1, 8}, {2, 1, 8}, {4, 1, 9}, {1, 1, 9}, {6, 1, 8}};
  m.kg = KnowledgeGraph::build(6, entities, relations, triples);
  m.config.dim = 4;
  m.config.layers = 1;
  m.config.intents = 2;
  m.config.lambda1 = 0.3;
  m.config.lambda2 = 0.2;
  m.config.lambda3 = 0.05;
  m.config.tau = 0.5;
  m.ctx = ModelContext::make(m.graph, m.kg, m.config);
  m.params = ModelParams::init(m.ctx.shape(), 0.5, seed);
  m.batch.push(0, 0, 5);
  m.batch.push(1, 1, 4);
  m.batch.push(2, 4, 3);
  m.batch.push(3, 5, 2);
  m.batch.push(0, 2, 4);
  return m;
}

/// Full objective on the micro-instance against central differences. With
/// `config`, its loss and architecture settings replace the built-in ones
/// (the width stays at d = 4).
inline ad::GradCheckResult check_micro_instance(std::uint64_t seed = 3, const TrainConfig* config = nullptr) {
  auto m = micro_instance(seed);
  if (config != nullptr) {
    m.config = *config;
    m.config.dim = 4;
    m.ctx = ModelContext::make(m.graph, m.kg, m.config);
    m.params = ModelParams::init(m.ctx.shape(), 0.5, seed);
  }
  return ad::check_gradient([&](ad::Tape& t) { return total_loss(t, m.params, m.ctx, m.batch).total; },
                            m.params.all());
}

struct SuiteReport {
  std::vector<std::pair<std::string, ad::GradCheckResult>> primitives;
  ad::GradCheckResult end_to_end;
  double max_primitive_error = 0.0;
};

inline SuiteReport run_suite(std::uint64_t seed = 3, const TrainConfig* config = nullptr) {
  SuiteReport r;
  for (const auto& c : primitive_cases()) {
    auto res = check_primitive(c, 100 + seed);
    r.max_primitive_error = std::max(r.max_primitive_error, res.max_rel_error);
    r.primitives.emplace_back(c.name, res);
  }
  r.end_to_end = check_micro_instance(seed, config);
  return r;
}

}  // namespace kamcl::gradsuite
