#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <set>

#include "mdgr/autodiff.hpp"
#include "mdgr/gradcheck.hpp"
#include "mdgr/optim.hpp"
#include "mdgr/rng.hpp"

namespace mdgr {
namespace {

using TensorD = Tensor<double>;

TEST(Graph, SoftmaxOfEqualLogitsIsUniform) {
  Graph<double> g(false);
  const Var x = g.constant(TensorD::matrix(1, 3, {0, 0, 0}));
  const auto& p = g.value(g.softmax(x));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(p[i], 1.0 / 3.0, 1e-15);
}

TEST(Graph, SoftmaxRowsSumToOne) {
  Graph<double> g(false);
  const Var x = g.constant(TensorD::matrix(2, 3, {1, -2, 3, 400, 0, -400}));
  const auto& p = g.value(g.softmax(x));
  for (int r = 0; r < 2; ++r) {
    double s = 0.0;
    for (double v : p.row(r)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Graph, MatmulByIdentity) {
  Graph<double> g(false);
  const auto a = TensorD::matrix(2, 2, {1.5, -2, 3, 4.25});
  const Var out = g.matmul(g.constant(TensorD::matrix(2, 2, {1, 0, 0, 1})), g.constant(a));
  EXPECT_EQ(g.value(out), a);
}

TEST(Graph, LinearAddsBias) {
  Graph<double> g(false);
  const Var x = g.constant(TensorD::matrix(2, 2, {1, 2, 3, 4}));
  const Var w = g.constant(TensorD::matrix(2, 1, {1, -1}));
  const Var b = g.constant(TensorD::vector({10}));
  const auto& y = g.value(g.linear(x, w, b));
  EXPECT_DOUBLE_EQ(y[0], 9.0);
  EXPECT_DOUBLE_EQ(y[1], 9.0);
}

TEST(Graph, CrossEntropyDecreasesWithMargin) {
  double previous = std::numeric_limits<double>::infinity();
  for (double margin : {1.0, 5.0, 10.0}) {
    Graph<double> g(false);
    const Var logits = g.constant(TensorD::matrix(1, 2, {margin, 0.0}));
    const std::array<int, 1> target{0};
    const double loss = g.value(g.cross_entropy(logits, target))[0];
    EXPECT_NEAR(loss, std::log1p(std::exp(-margin)), 1e-12);
    EXPECT_LT(loss, previous);
    previous = loss;
  }
  EXPECT_LT(previous, 1e-3);
}

TEST(Graph, CrossEntropySkipsNegativeTargets) {
  Graph<double> g(false);
  const Var logits = g.constant(TensorD::matrix(2, 2, {0, 0, 5, 0}));
  const std::array<int, 2> targets{0, -1};
  EXPECT_NEAR(g.value(g.cross_entropy(logits, targets))[0], std::log(2.0), 1e-12);
}

TEST(Graph, ShapeMismatchNamesOperationAndShapes) {
  Graph<double> g(false);
  const Var a = g.constant(TensorD({2, 3}));
  const Var b = g.constant(TensorD({2, 3}));
  try {
    g.matmul(a, b);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kShapeMismatch);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
  }
}

TEST(Graph, NonFiniteResultIsAnError) {
  Graph<float> g(false);
  const Var a = g.constant(Tensor<float>::vector({1e30f}));
  try {
    g.scale(a, 1e30);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNumericOverflow);
  }
}

TEST(Graph, LayerNormNormalizesRows) {
  Graph<double> g(false);
  const Var x = g.constant(TensorD::matrix(2, 4, {1, 2, 3, 4, -10, 0, 7, 100}));
  const Var gain = g.constant(TensorD({4}, 1.0));
  const Var bias = g.constant(TensorD({4}, 0.0));
  const auto& y = g.value(g.layer_norm(x, gain, bias, 1e-12));
  for (int r = 0; r < 2; ++r) {
    double mean = 0.0, var = 0.0;
    for (double v : y.row(r)) mean += v / 4;
    for (double v : y.row(r)) var += (v - mean) * (v - mean) / 4;
    EXPECT_NEAR(mean, 0.0, 1e-9);
    EXPECT_NEAR(var, 1.0, 1e-6);
  }
}

TEST(Backward, SumHasUnitGradient) {
  TensorD w = TensorD::vector({0.5, -1, 2});
  TensorD dw({3});
  Graph<double> g;
  g.backward(g.sum(g.param(w, &dw)));
  EXPECT_EQ(dw, TensorD::vector({1, 1, 1}));
}

TEST(Backward, DotWithItself) {
  TensorD w = TensorD::vector({1, 2});
  TensorD dw({2});
  Graph<double> g;
  const Var v = g.param(w, &dw);
  g.backward(g.sum(g.mul(v, v)));
  EXPECT_EQ(dw, TensorD::vector({2, 4}));
}

TEST(Backward, UnusedLeafKeepsZeroGradient) {
  TensorD w = TensorD::vector({1, 2});
  TensorD u = TensorD::vector({3});
  TensorD dw({2}), du({1});
  Graph<double> g;
  const Var v = g.param(w, &dw);
  g.param(u, &du);
  g.backward(g.sum(v));
  EXPECT_EQ(du, TensorD({1}));
}

TEST(Backward, NonScalarLossIsAnError) {
  TensorD w = TensorD::vector({1, 2});
  TensorD dw({2});
  Graph<double> g;
  const Var v = g.param(w, &dw);
  EXPECT_THROW(g.backward(v), Error);
}

TEST(Backward, ForwardOnlyGraphRejectsBackward) {
  Graph<double> g(false);
  const Var v = g.constant(TensorD::vector({1}));
  try {
    g.backward(v);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kState);
  }
}

// loss = sum((gelu(x W1 + b1) W2 + b2)^2) with x fixed.
double perceptron_loss(const ParameterSet<double>& p, ParameterSet<double>* grads) {
  Graph<double> g(grads != nullptr);
  auto bind = [&](const char* name) {
    return g.param(p[name], grads != nullptr ? &(*grads)[name] : nullptr);
  };
  const Var x = g.constant(TensorD::matrix(2, 3, {0.3, -1.2, 0.8, 1.1, 0.4, -0.5}));
  const Var h = g.gelu(g.linear(x, bind("w1"), bind("b1")));
  const Var y = g.linear(h, bind("w2"), bind("b2"));
  const Var loss = g.sum(g.mul(y, y));
  if (grads != nullptr) g.backward(loss);
  return g.value(loss)[0];
}

ParameterSet<double> perceptron_params(std::uint64_t seed) {
  Rng rng(seed);
  auto random = [&](Shape shape) {
    TensorD t(std::move(shape));
    for (auto& v : t.storage()) v = rng.normal();
    return t;
  };
  ParameterSet<double> p;
  p.add("w1", random({3, 4}));
  p.add("b1", random({4}));
  p.add("w2", random({4, 2}));
  p.add("b2", random({2}));
  return p;
}

TEST(Backward, PerceptronMatchesFiniteDifferences) {
  for (std::uint64_t seed : {1, 2, 3}) {
    auto params = perceptron_params(seed);
    const auto report = grad_check(perceptron_loss, params, 1e-3, 1e-4);
    EXPECT_TRUE(report.passed) << "seed " << seed << " max error " << report.max_relative_error();
    EXPECT_EQ(report.coordinates_checked, params.scalar_count());
  }
}

TEST(GradCheck, SquareFunctionPasses) {
  ParameterSet<double> p;
  p.add("w", TensorD::vector({1.0}));
  const LossFunction square = [](const ParameterSet<double>& params, ParameterSet<double>* grads) {
    const double w = params["w"][0];
    if (grads != nullptr) (*grads)["w"][0] += 2 * w;
    return w * w;
  };
  const auto report = grad_check(square, p, 1e-4, 1e-4);
  ASSERT_TRUE(report.passed);
  EXPECT_NEAR(report.entries[0].analytic_at_worst, 2.0, 1e-12);
  EXPECT_NEAR(report.entries[0].numeric_at_worst, 2.0, 1e-7);
  EXPECT_EQ(p["w"][0], 1.0);
}

TEST(GradCheck, AbsoluteValueAtZeroIsFlagged) {
  TensorD w = TensorD::vector({0.0});
  ParameterSet<double> p;
  p.add("w", w);
  const LossFunction absolute = [](const ParameterSet<double>& params,
                                   ParameterSet<double>* grads) {
    Graph<double> g(grads != nullptr);
    const Var v = g.param(params["w"], grads != nullptr ? &(*grads)["w"] : nullptr);
    const Var loss = g.sum(g.abs(v));
    if (grads != nullptr) g.backward(loss);
    return g.value(loss)[0];
  };
  const auto report = grad_check(absolute, p, 1e-4, 1e-4);
  EXPECT_FALSE(report.passed);
  EXPECT_EQ(report.entries[0].kinks, std::vector<std::size_t>{0});
}

TEST(GradCheck, NonFiniteLossNamesCoordinate) {
  ParameterSet<double> p;
  p.add("w", TensorD::vector({0.0, 1.0}));
  const LossFunction log_loss = [](const ParameterSet<double>& params, ParameterSet<double>*) {
    const double w = params["w"][1];
    return w > 1.0 ? std::numeric_limits<double>::infinity() : w;
  };
  try {
    grad_check(log_loss, p, 1e-3, 1e-4);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNumericOverflow);
    EXPECT_NE(std::string(e.what()).find("w"), std::string::npos);
  }
}

ParameterSet<double> single(std::initializer_list<double> values) {
  ParameterSet<double> p;
  p.add("w", TensorD::vector(values));
  return p;
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  auto params = single({1.0, -2.0});
  const auto before = params;
  auto state = AdamState<double>::for_params(params);
  adam_step(params, params.zeros_like(), state, AdamConfig{});
  EXPECT_EQ(params, before);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  auto params = single({1.0, -2.0, 0.5});
  auto grads = single({0.3, -4.0, 1e-3});
  auto state = AdamState<double>::for_params(params);
  AdamConfig cfg;
  cfg.lr = 0.01;
  adam_step(params, grads, state, cfg);
  // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
  const std::array<double, 3> start{1.0, -2.0, 0.5};
  for (std::size_t i = 0; i < 3; ++i) {
    const double g = grads["w"][i];
    EXPECT_NEAR(params["w"][i], start[i] - cfg.lr * g / (std::abs(g) + cfg.eps), 1e-12);
    EXPECT_NEAR(std::abs(params["w"][i] - start[i]), cfg.lr, 1e-7);
  }
}

TEST(Adam, IsDeterministic) {
  auto a = single({1.0, 2.0});
  auto b = a;
  const auto grads = single({0.5, -0.25});
  auto sa = AdamState<double>::for_params(a);
  auto sb = sa;
  for (int i = 0; i < 3; ++i) {
    adam_step(a, grads, sa, AdamConfig{});
    adam_step(b, grads, sb, AdamConfig{});
  }
  EXPECT_EQ(a, b);
  EXPECT_EQ(sa, sb);
}

TEST(Adam, LayoutMismatchIsAnError) {
  auto params = single({1.0, 2.0});
  auto state = AdamState<double>::for_params(params);
  EXPECT_THROW(adam_step(params, single({1.0}), state, AdamConfig{}), Error);
}

// Reference xoshiro256** seeded through splitmix64.
struct ReferenceXoshiro {
  std::array<std::uint64_t, 4> s;
  explicit ReferenceXoshiro(std::uint64_t seed) {
    for (auto& w : s) {
      seed += 0x9e3779b97f4a7c15ULL;
      std::uint64_t z = seed;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      w = z ^ (z >> 31);
    }
  }
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t next() {
    const std::uint64_t result = rotl(s[1] * 5, 7) * 9;
    const std::uint64_t t = s[1] << 17;
    s[2] ^= s[0];
    s[3] ^= s[1];
    s[1] ^= s[2];
    s[0] ^= s[3];
    s[2] ^= t;
    s[3] = rotl(s[3], 45);
    return result;
  }
};

TEST(Rng, MatchesReferenceGenerator) {
  for (std::uint64_t seed : {0ULL, 42ULL, 0xdeadbeefULL}) {
    Rng rng(seed);
    ReferenceXoshiro ref(seed);
    for (int i = 0; i < 100; ++i) ASSERT_EQ(rng.next_u64(), ref.next());
  }
}

TEST(Rng, DerivedStreamsIgnoreParentDraws) {
  Rng a(7);
  Rng b(7);
  for (int i = 0; i < 5; ++i) b.next_u64();
  EXPECT_EQ(a.derive("x").next_u64(), b.derive("x").next_u64());
  EXPECT_NE(a.derive("x").next_u64(), a.derive("y").next_u64());
  EXPECT_NE(a.derive(1).next_u64(), a.derive(2).next_u64());
}

TEST(Rng, CategoricalDegenerate) {
  Rng rng(1);
  const std::array<double, 3> probs{1, 0, 0};
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(rng.categorical(probs), 0u);
}

TEST(Rng, CategoricalFairCoin) {
  Rng rng(2);
  const std::array<double, 2> probs{0.5, 0.5};
  int zeros = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) zeros += rng.categorical(probs) == 0 ? 1 : 0;
  const double freq = static_cast<double>(zeros) / n;
  EXPECT_GE(freq, 0.49);
  EXPECT_LE(freq, 0.51);
}

TEST(Rng, CategoricalReproducible) {
  Rng a(3), b(3);
  const std::array<double, 4> probs{0.1, 0.2, 0.3, 0.4};
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a.categorical(probs), b.categorical(probs));
}

TEST(Rng, CategoricalRejectsBadInput) {
  Rng rng(0);
  const std::array<double, 2> zero{0, 0};
  const std::array<double, 2> negative{-1, 2};
  const std::array<double, 2> nan{std::nan(""), 1};
  EXPECT_THROW(rng.categorical(zero), Error);
  EXPECT_THROW(rng.categorical(negative), Error);
  EXPECT_THROW(rng.categorical(nan), Error);
}

TEST(Rng, SampleWithoutReplacementExhaustive) {
  Rng rng(4);
  const std::vector<double> probs(8, 1.0 / 8);
  const auto draw = rng.sample_without_replacement(probs, 8);
  EXPECT_EQ(std::set<std::size_t>(draw.begin(), draw.end()),
            (std::set<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7}));
}

TEST(Rng, SampleWithoutReplacementDegenerate) {
  Rng rng(5);
  const std::array<double, 4> probs{1, 0, 0, 0};
  EXPECT_EQ(rng.sample_without_replacement(probs, 1), std::vector<std::size_t>{0});
}

TEST(Rng, SampleWithoutReplacementPairProbability) {
  Rng rng(6);
  const std::array<double, 3> probs{0.7, 0.2, 0.1};
  const double expected = 0.7 * (0.2 / 0.3) + 0.2 * (0.7 / 0.8);
  const int n = 100000;
  int hits = 0;
  for (int i = 0; i < n; ++i) {
    const auto d = rng.sample_without_replacement(probs, 2);
    hits += std::set<std::size_t>(d.begin(), d.end()) == std::set<std::size_t>{0, 1} ? 1 : 0;
  }
  EXPECT_NEAR(static_cast<double>(hits) / n, expected, 0.01);
}

TEST(Rng, SampleWithoutReplacementBeyondSupport) {
  Rng rng(7);
  const std::array<double, 3> probs{0.5, 0.5, 0};
  EXPECT_THROW(rng.sample_without_replacement(probs, 3), Error);
}

}  // namespace
}  // namespace mdgr
