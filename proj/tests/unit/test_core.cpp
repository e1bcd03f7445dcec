#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "test_util.hpp"

using namespace kamcl;
using kamcl::testing::check_op;
using kamcl::testing::random_matrix;

namespace {

ad::ParamTensor param(const std::string& name, std::size_t r, std::size_t c, std::uint64_t seed) {
  return {name, random_matrix(r, c, seed)};
}

constexpr double kPrimitiveTol = 1e-6;

}  // namespace

// ---------------------------------------------------------------- matrix / rng

TEST(Matrix, ConstructionAndAccess) {
  Matrix m{{1, 2, 3}, {4, 5, 6}};
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 3u);
  EXPECT_EQ(m(1, 2), 6);
  EXPECT_EQ(m.row(1)[0], 4);
  EXPECT_THROW(Matrix(2, 2, std::vector<double>{1, 2, 3}), ContractError);
  EXPECT_THROW(m.item(), ContractError);
  EXPECT_EQ(Matrix::scalar(2.5).item(), 2.5);
}

TEST(Matrix, FiniteCheckAndMaxDiff) {
  Matrix a{{1, 2}}, b{{1, 2.5}};
  EXPECT_TRUE(a.all_finite());
  EXPECT_DOUBLE_EQ(max_abs_diff(a, b), 0.5);
  a(0, 0) = std::nan("");
  EXPECT_FALSE(a.all_finite());
}

TEST(Rng, SameSeedSameStream) {
  Rng a(5, 1), b(5, 1), c(5, 2);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next();
    EXPECT_EQ(x, b.next());
    differs = differs || x != c.next();
  }
  EXPECT_TRUE(differs);
}

TEST(Rng, IndexIsUniform) {
  Rng rng(11);
  std::vector<int> counts(7, 0);
  const int draws = 70000;
  for (int i = 0; i < draws; ++i) ++counts[rng.index(7)];
  for (int c : counts) EXPECT_NEAR(c / static_cast<double>(draws), 1.0 / 7.0, 0.01);
}

TEST(Rng, NormalMoments) {
  Rng rng(3);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal(1.0, 2.0);
    s += x;
    s2 += x * x;
  }
  const double mean = s / n, var = s2 / n - mean * mean;
  EXPECT_NEAR(mean, 1.0, 0.02);
  EXPECT_NEAR(var, 4.0, 0.05);
}

// ---------------------------------------------------------------- forward values

TEST(Ops, SoftmaxOfZerosIsUniform) {
  ad::Tape t;
  auto s = ad::softmax_rows(t.constant(Matrix{{0, 0, 0}}));
  for (double v : s.value().values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Ops, SoftmaxRowsSumToOneAndPositive) {
  ad::Tape t;
  auto s = ad::softmax_rows(t.constant(random_matrix(20, 7, 4, 10.0)));
  for (std::size_t r = 0; r < 20; ++r) {
    double total = 0;
    for (double v : s.value().row(r)) {
      EXPECT_GT(v, 0.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Ops, SegmentMeanHandArithmetic) {
  ad::Tape t;
  auto out = ad::segment_mean(t.constant(Matrix{{1, 2}, {3, 4}}), Csr::from_lists({{0, 1}}));
  EXPECT_EQ(out.value(), (Matrix{{2, 3}}));
}

TEST(Ops, SegmentMeanOfIdenticalRowsIsExact) {
  ad::Tape t;
  Matrix rows(5, 3);
  for (std::size_t r = 0; r < 5; ++r) {
    rows(r, 0) = 0.1;
    rows(r, 1) = 1.0 / 3.0;
    rows(r, 2) = -7.7;
  }
  auto out = ad::segment_mean(t.constant(rows), Csr::from_lists({{0, 1, 2, 3, 4}, {}}));
  EXPECT_EQ(out.value()(0, 0), 0.1);
  EXPECT_EQ(out.value()(0, 1), 1.0 / 3.0);
  EXPECT_EQ(out.value()(0, 2), -7.7);
  EXPECT_EQ(out.value()(1, 0), 0.0);
}

TEST(Ops, LogSigmoidValues) {
  ad::Tape t;
  auto out = ad::log_sigmoid(t.constant(Matrix{{0.0, 40.0, -40.0}}));
  EXPECT_NEAR(out.value()(0, 0), -std::log(2.0), 1e-15);
  EXPECT_NEAR(out.value()(0, 1), 0.0, 1e-15);
  EXPECT_NEAR(out.value()(0, 2), -40.0, 1e-12);
}

TEST(Ops, ShapeMismatchNamesOp) {
  ad::Tape t;
  auto a = t.constant(Matrix(2, 3)), b = t.constant(Matrix(3, 2));
  try {
    ad::add(a, b);
    FAIL() << "expected ContractError";
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("add"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("2x3"), std::string::npos);
  }
  EXPECT_THROW(ad::matmul(a, a), ContractError);
  EXPECT_THROW(ad::concat_cols(std::vector<ad::Var>{a, b}), ContractError);
}

TEST(Ops, CosineGuardsZeroVectors) {
  ad::Tape t;
  auto c = ad::cosine_rows(t.constant(Matrix{{0, 0}}), t.constant(Matrix{{1, 0}}));
  EXPECT_EQ(c.value().item(), 0.0);
}

TEST(Ops, NonFiniteValuesTrip) {
  ad::ParamTensor p{"p", Matrix{{1.0, std::nan("")}}};
  ad::Tape t;
  EXPECT_THROW(t.leaf(p), NumericError);
  auto big = t.constant(Matrix{{1e308}});
  EXPECT_THROW(ad::scale(big, 10.0), NumericError);
}

// ---------------------------------------------------------------- backward

TEST(Backward, QuadraticDerivative) {
  ad::ParamTensor x{"x", Matrix{{1, 2}}};
  ad::Tape t;
  auto v = t.leaf(x);
  t.backward(ad::row_dot(v, v));
  EXPECT_EQ(x.grad, (Matrix{{2, 4}}));
}

TEST(Backward, SoftmaxPickFirst) {
  ad::ParamTensor x{"x", Matrix{{0, 0}}};
  ad::Tape t;
  auto s = ad::softmax_rows(t.leaf(x));
  t.backward(ad::gather_rows(ad::matmul(s, t.constant(Matrix{{1}, {0}})), {0}));
  EXPECT_NEAR(x.grad(0, 0), 0.25, 1e-15);
  EXPECT_NEAR(x.grad(0, 1), -0.25, 1e-15);
}

TEST(Backward, UnusedParameterGetsZero) {
  ad::ParamTensor x{"x", Matrix{{1, 2}}}, unused{"u", Matrix{{3, 4}}};
  ad::Tape t;
  auto v = t.leaf(x);
  t.leaf(unused);
  t.backward(ad::sum(v));
  EXPECT_EQ(unused.grad, Matrix(1, 2));
}

TEST(Backward, NonScalarLossRejected) {
  ad::Tape t;
  auto v = t.constant(Matrix(2, 2));
  EXPECT_THROW(t.backward(v), ContractError);
}

TEST(Backward, ReuseAccumulatesBothPaths) {
  ad::ParamTensor x{"x", random_matrix(3, 2, 8)};
  std::vector<ad::ParamTensor> ps{x};
  auto r = kamcl::testing::check_op(
      [](ad::Tape&, std::vector<ad::Var>& v) { return ad::add(ad::mul(v[0], v[0]), ad::scale(v[0], 3.0)); }, ps);
  EXPECT_LE(r.max_rel_error, kPrimitiveTol);
  ad::Tape t;
  auto v = t.leaf(x);
  t.backward(ad::sum(ad::add(ad::mul(v, v), ad::scale(v, 3.0))));
  for (std::size_t i = 0; i < x.value.size(); ++i) EXPECT_NEAR(x.grad[i], 2 * x.value[i] + 3.0, 1e-14);
}

TEST(Backward, Linearity) {
  ad::ParamTensor x{"x", random_matrix(4, 3, 21)};
  auto grad_of = [&](double a, double b) {
    x.zero_grad();
    ad::Tape t;
    auto v = t.leaf(x);
    auto l1 = ad::sum(ad::softmax_rows(ad::mul(v, v)));
    auto l2 = ad::sum_squares(ad::normalize_rows(v));
    auto l1w = kamcl::testing::probe(t, ad::log_sigmoid(v), 1);
    const std::vector<ad::Var> terms{l1w, l2, l1};
    const std::vector<double> w{a, b, 0.5};
    t.backward(ad::weighted_sum(terms, w));
    return x.grad;
  };
  const Matrix g1 = grad_of(1, 0), g2 = grad_of(0, 1), g0 = grad_of(0, 0), mix = grad_of(2.5, -1.5);
  for (std::size_t i = 0; i < mix.size(); ++i)
    EXPECT_NEAR(mix[i], 2.5 * (g1[i] - g0[i]) - 1.5 * (g2[i] - g0[i]) + g0[i], 1e-10);
}

TEST(GradCheck, ConstantLossHasZeroError) {
  ad::ParamTensor x{"x", random_matrix(2, 2, 1)};
  std::vector<ad::ParamTensor*> ps{&x};
  auto r = ad::check_gradient([](ad::Tape& t) { return t.constant(Matrix::scalar(3.0)); }, ps);
  EXPECT_EQ(r.max_rel_error, 0.0);
}

TEST(GradCheck, RestoresParameterValues) {
  ad::ParamTensor x{"x", random_matrix(2, 3, 2)};
  const Matrix before = x.value;
  std::vector<ad::ParamTensor*> ps{&x};
  ad::check_gradient([&](ad::Tape& t) { return ad::sum_squares(t.leaf(x)); }, ps);
  EXPECT_EQ(x.value, before);
}

TEST(GradCheck, DetectsWrongGradient) {
  ad::ParamTensor x{"x", random_matrix(2, 2, 3)};
  std::vector<ad::ParamTensor*> ps{&x};
  auto r = ad::check_gradient(
      [&](ad::Tape& t) {
        auto v = t.leaf(x);
        Matrix out = Matrix::scalar(v.value()[0] * v.value()[0]);
        return t.record("wrong", out, [v](ad::Tape& tape, const Matrix& g) { tape.grad_slot(v)[0] += g.item(); });
      },
      ps);
  EXPECT_GT(r.max_rel_error, 0.1);
}

// One finite-difference check per primitive.
class PrimitiveGradient : public ::testing::TestWithParam<gradsuite::PrimitiveCase> {};

TEST_P(PrimitiveGradient, MatchesFiniteDifferences) {
  const auto r = gradsuite::check_primitive(GetParam());
  EXPECT_LE(r.max_rel_error, kPrimitiveTol) << GetParam().name << " worst " << r.worst_param << "[" << r.worst_index
                                            << "]";
  EXPECT_GT(r.coordinates, 0u);
}

INSTANTIATE_TEST_SUITE_P(Diffcore, PrimitiveGradient, ::testing::ValuesIn(gradsuite::primitive_cases()),
                         [](const ::testing::TestParamInfo<gradsuite::PrimitiveCase>& info) { return info.param.name; });

TEST(PrimitiveGradient, SuiteCoversEveryCaseAcrossSeeds) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto rep = gradsuite::run_suite(seed);
    EXPECT_EQ(rep.primitives.size(), gradsuite::primitive_cases().size());
    EXPECT_LE(rep.max_primitive_error, kPrimitiveTol);
    EXPECT_LE(rep.end_to_end.max_rel_error, 1e-4) << "seed " << seed << " " << rep.end_to_end.worst_param;
  }
}

// ---------------------------------------------------------------- csr

TEST(Csr, FromPairsSortsAndDedups) {
  auto c = Csr::from_pairs(3, {{2, 1}, {0, 5}, {0, 2}, {0, 5}});
  EXPECT_EQ(c.num_entries(), 3u);
  EXPECT_EQ(c.degree(0), 2u);
  EXPECT_EQ(c.row(0)[0], 2u);
  EXPECT_TRUE(c.contains(2, 1));
  EXPECT_FALSE(c.contains(1, 1));
  EXPECT_THROW(Csr::from_pairs(2, {{2, 0}}), ContractError);
}

TEST(Csr, TransposeRoundTrip) {
  auto c = Csr::from_pairs(3, {{0, 1}, {0, 3}, {2, 0}, {1, 3}});
  auto t = c.transpose(4);
  EXPECT_EQ(t.num_entries(), c.num_entries());
  EXPECT_TRUE(t.contains(3, 0));
  EXPECT_TRUE(t.contains(3, 1));
  EXPECT_EQ(t.transpose(3), c);
}

TEST(Csr, SelectRows) {
  auto c = Csr::from_lists({{1}, {2, 3}, {}});
  auto s = c.select_rows(std::vector<std::size_t>{2, 1, 1});
  EXPECT_EQ(s.num_rows(), 3u);
  EXPECT_EQ(s.degree(0), 0u);
  EXPECT_EQ(s.degree(2), 2u);
}

// ---------------------------------------------------------------- checkpoint / kv / config

TEST(Checkpoint, ExactRoundTrip) {
  Checkpoint c;
  c.meta["epoch"] = "3";
  c.meta["note"] = "has spaces inside";
  c.tensors.push_back({"a", random_matrix(3, 4, 1)});
  c.tensors.push_back({"b", Matrix{{0.1, 1e-300, -0.0, 123456789.125}}});
  std::stringstream ss;
  write_checkpoint(ss, c);
  const auto back = read_checkpoint(ss);
  EXPECT_EQ(back, c);
  std::stringstream again;
  write_checkpoint(again, back);
  std::stringstream first;
  write_checkpoint(first, c);
  EXPECT_EQ(again.str(), first.str());
}

TEST(Checkpoint, ParseErrorsCarryLine) {
  std::stringstream bad("kamcl-checkpoint 1\ntensor a 1 2\n1 x\nend\n");
  try {
    read_checkpoint(bad);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  std::stringstream wrong_version("kamcl-checkpoint 9\nend\n");
  EXPECT_THROW(read_checkpoint(wrong_version), ParseError);
  std::stringstream truncated("kamcl-checkpoint 1\ntensor a 2 1\n1\n");
  EXPECT_THROW(read_checkpoint(truncated), ParseError);
}

TEST(Kv, SectionsAndComments) {
  auto kv = parse_kv_string("model.layers = 2\n# c\n[model]\ndim = 8\n\n[loss]\n  tau=0.5  \n");
  ASSERT_EQ(kv.size(), 3u);
  EXPECT_EQ(kv[0].key, "model.layers");
  EXPECT_EQ(kv[1].key, "model.dim");
  EXPECT_EQ(kv[1].line, 4u);
  EXPECT_EQ(kv[2].key, "loss.tau");
  EXPECT_EQ(kv[2].value, "0.5");
  EXPECT_THROW(parse_kv_string("novalue\n"), ParseError);
}

TEST(Config, DefaultsMatchPublishedSettings) {
  TrainConfig c;
  EXPECT_EQ(c.dim, 64u);
  EXPECT_EQ(c.batch_size, 128u);
  EXPECT_DOUBLE_EQ(c.lr, 0.001);
  EXPECT_EQ(c.negative_sampling, 1u);
  EXPECT_DOUBLE_EQ(c.init_std, 0.1);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, RoundTripAndHash) {
  TrainConfig c;
  c.dim = 16;
  c.gamma = {1, 2, 1};
  c.cl_negatives = {ClNegatives::Kind::sampled, 5};
  c.similarity = Similarity::dot;
  const auto back = TrainConfig::from_kv(parse_kv_string(to_kv_string(c.to_kv())));
  EXPECT_EQ(back, c);
  EXPECT_EQ(back.hash(), c.hash());
  TrainConfig d = c;
  d.lambda1 = 0.05;
  EXPECT_NE(d.hash(), c.hash());
}

TEST(Config, UnknownKeyIsHardError) {
  EXPECT_THROW(TrainConfig::from_kv(parse_kv_string("loss.lambda_1 = 0.1\n")), ValidationError);
  EXPECT_THROW(TrainConfig::from_kv(parse_kv_string("model.dim = 0\n")), ValidationError);
  EXPECT_THROW(TrainConfig::from_kv(parse_kv_string("train.lr = -1\n")), ValidationError);
  EXPECT_THROW(TrainConfig::from_kv(parse_kv_string("model.dim = abc\n")), ParseError);
}

TEST(Config, BehaviorWeightsNormalize) {
  TrainConfig c;
  auto w = c.behavior_weights(4);
  for (double x : w) EXPECT_DOUBLE_EQ(x, 0.25);
  c.gamma = {1, 3};
  w = c.behavior_weights(2);
  EXPECT_DOUBLE_EQ(w[0], 0.25);
  EXPECT_DOUBLE_EQ(w[1], 0.75);
  EXPECT_THROW(c.behavior_weights(3), ValidationError);
}

TEST(Text, FormatParseDoubleRoundTrip) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double x = rng.normal() * std::pow(10.0, static_cast<double>(rng.index(40)) - 20.0);
    EXPECT_EQ(parse_double(format_double(x)), x);
  }
  EXPECT_EQ(format_double(0.001), "0.001");
}

TEST(Log, CaptureAndLevels) {
  log::Capture cap(log::Level::info);
  log::debug("hidden");
  log::info("shown");
  EXPECT_FALSE(cap.contains("hidden"));
  EXPECT_TRUE(cap.contains("shown"));
}
