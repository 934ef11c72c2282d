#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "hmexpr/errors.hpp"
#include "hmexpr/graph.hpp"
#include "hmexpr/optimizer.hpp"
#include "support.hpp"

using namespace hmexpr;
using hmexpr::testing::random_tensor;

namespace {

Tensor run_unary(NodeId (Graph::*op)(NodeId), const Tensor& in) {
  Graph g;
  const NodeId x = g.input("x");
  const NodeId y = (g.*op)(x);
  g.forward({}, {{"x", in}});
  return g.value(y);
}

}  // namespace

TEST(Forward, Relu) {
  const Tensor out = run_unary(&Graph::relu, Tensor({1, 2}, std::vector<double>{-1, 2}));
  EXPECT_EQ(out.storage(), (std::vector<double>{0, 2}));
}

TEST(Forward, SoftmaxOfZerosIsUniform) {
  const Tensor out = run_unary(&Graph::softmax, Tensor({1, 2}, 0.0));
  EXPECT_DOUBLE_EQ(out[0], 0.5);
  EXPECT_DOUBLE_EQ(out[1], 0.5);
}

TEST(Forward, AvgPoolWindowMeans) {
  Graph g;
  const NodeId x = g.input("x");
  const NodeId y = g.avg_pool(x, 5, 5);
  g.forward({}, {{"x", Tensor({1, 1, 10}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10})}});
  EXPECT_EQ(g.value(y).shape(), (Shape{1, 1, 2}));
  EXPECT_DOUBLE_EQ(g.value(y)[0], 3.0);
  EXPECT_DOUBLE_EQ(g.value(y)[1], 8.0);
}

TEST(Forward, SoftmaxRowsSumToOne) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor out = run_unary(&Graph::softmax, random_tensor({4, 7}, rng, -30, 30));
    for (std::size_t r = 0; r < 4; ++r) {
      double sum = 0;
      for (std::size_t c = 0; c < 7; ++c) {
        EXPECT_GE(out[r * 7 + c], 0.0);
        EXPECT_LE(out[r * 7 + c], 1.0);
        sum += out[r * 7 + c];
      }
      EXPECT_NEAR(sum, 1.0, 1e-9);
    }
  }
}

TEST(Forward, DropoutOffIsIdentity) {
  std::mt19937_64 rng(5);
  const Tensor in = random_tensor({3, 4, 9}, rng);
  Graph g;
  const NodeId x = g.input("x");
  const NodeId y = g.dropout(x, 0.5);
  g.forward({}, {{"x", in}});
  EXPECT_EQ(g.value(y), in);
}

TEST(Forward, DropoutTrainingIsInverted) {
  Graph g;
  const NodeId x = g.input("x");
  const NodeId y = g.dropout(x, 0.25);
  g.set_training(true);
  g.forward({}, {{"x", Tensor({1, 4000}, 1.0)}});
  double sum = 0;
  for (double v : g.value(y).data()) {
    EXPECT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-12);
    sum += v;
  }
  EXPECT_NEAR(sum / 4000.0, 1.0, 0.05);
}

TEST(Forward, MaxPoolDominatesAvgPool) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const Tensor in = random_tensor({2, 3, 20}, rng, -5, 5);
    Graph g;
    const NodeId x = g.input("x");
    const NodeId mx = g.max_pool(x, 4, 3);
    const NodeId av = g.avg_pool(x, 4, 3);
    g.forward({}, {{"x", in}});
    for (std::size_t i = 0; i < g.value(mx).size(); ++i) EXPECT_GE(g.value(mx)[i], g.value(av)[i]);
  }
}

TEST(Forward, ShapeMismatchNamesNode) {
  Graph g;
  const NodeId x = g.input("x");
  const NodeId w = g.parameter("w");
  const NodeId b = g.parameter("b");
  g.affine(x, w, b);
  ParamSet p;
  p.add("w", Tensor({2, 3}));
  p.add("b", Tensor({2}));
  try {
    g.forward(p, {{"x", Tensor({1, 4})}});
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("node 3"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("affine"), std::string::npos) << e.what();
  }
}

TEST(Forward, NonFiniteIsRejected) {
  Graph g;
  const NodeId x = g.input("x");
  g.scale(x, 1e308);
  EXPECT_THROW(g.forward({}, {{"x", Tensor({1}, 10.0)}}), NumericError);
}

TEST(Forward, UnboundInputIsRejected) {
  Graph g;
  g.relu(g.input("x"));
  EXPECT_THROW(g.forward({}, {}), ShapeError);
}

TEST(Backward, SquareAtThree) {
  // x used as both operands of a 1x1 affine map gives x^2.
  Graph g;
  const NodeId x = g.parameter("x");
  const NodeId loss = g.affine(x, x, g.parameter("b"));
  ParamSet p;
  p.add("x", Tensor({1, 1}, 3.0));
  p.add("b", Tensor({1}, 0.0));
  g.forward(p, {});
  EXPECT_DOUBLE_EQ(g.value(loss)[0], 9.0);
  g.backward(loss);
  EXPECT_DOUBLE_EQ(g.grad(x)[0], 6.0);
}

TEST(Backward, SoftmaxCrossEntropyIsPMinusY) {
  Graph g;
  const NodeId z = g.input("z");
  const NodeId y = g.input("y");
  const NodeId loss = g.cross_entropy(g.softmax(z), y);
  g.forward({}, {{"z", Tensor({1, 2}, 0.0)}, {"y", Tensor({1}, 1.0)}});
  g.backward(loss);
  EXPECT_DOUBLE_EQ(g.grad(z)[0], 0.5);
  EXPECT_DOUBLE_EQ(g.grad(z)[1], -0.5);
}

TEST(Backward, BeforeForwardIsRejected) {
  Graph g;
  const NodeId loss = g.scale(g.input("x"), 2.0);
  EXPECT_THROW(g.backward(loss), ConfigError);
}

TEST(Backward, UnreachableNodesGetZeroGradient) {
  Graph g;
  const NodeId x = g.input("x");
  const NodeId dead = g.relu(x);
  const NodeId loss = g.scale(x, 2.0);
  g.forward({}, {{"x", Tensor({1}, 1.0)}});
  g.backward(loss);
  EXPECT_EQ(g.grad(dead), Tensor({1}, 0.0));
  EXPECT_DOUBLE_EQ(g.grad(x)[0], 2.0);
}

TEST(Backward, MaxPoolTieRoutesToLowestIndex) {
  Graph g;
  const NodeId x = g.input("x");
  const NodeId p = g.max_pool(x, 3, 3);
  const NodeId loss = g.bce(g.sigmoid(p), g.input("t"));
  g.forward({}, {{"x", Tensor({1, 1, 3}, std::vector<double>{2, 2, 1})}, {"t", Tensor({1, 1, 1}, 1.0)}});
  g.backward(loss);
  EXPECT_NE(g.grad(x)[0], 0.0);
  EXPECT_EQ(g.grad(x)[1], 0.0);
  EXPECT_EQ(g.grad(x)[2], 0.0);
}

TEST(Backward, DeterministicUnderSeed) {
  auto run = [] {
    auto r = hmexpr::testing::make_random_graph(42);
    r.graph.forward(r.params, r.feed);
    r.graph.backward(r.loss);
    return r.graph.parameter_grads();
  };
  EXPECT_EQ(run(), run());
}

TEST(GradCheck, LinearIsExact) {
  Graph g;
  const NodeId x = g.input("x");
  const NodeId loss = g.affine(x, g.parameter("w"), g.parameter("b"));
  ParamSet p;
  p.add("w", Tensor({1, 3}, std::vector<double>{0.3, -0.2, 0.5}));
  p.add("b", Tensor({1}, 0.1));
  g.forward(p, {{"x", Tensor({1, 3}, std::vector<double>{1, 2, 3})}});
  EXPECT_LT(check_gradients(g, loss), 1e-8);
}

TEST(GradCheck, MaxPoolAwayFromTies) {
  Graph g;
  const NodeId x = g.input("x");
  const NodeId conv = g.conv1d(x, g.parameter("w"), g.parameter("b"));
  const NodeId loss = g.bce(g.sigmoid(g.affine(g.flatten(g.max_pool(conv, 2, 2)), g.parameter("v"), g.parameter("c"))),
                            g.input("t"));
  ParamSet p;
  p.add("w", Tensor({1, 1, 1}, 1.0));
  p.add("b", Tensor({1}, 0.0));
  p.add("v", Tensor({1, 2}, std::vector<double>{0.7, -0.4}));
  p.add("c", Tensor({1}, 0.05));
  g.forward(p, {{"x", Tensor({1, 1, 4}, std::vector<double>{0.1, 0.9, 0.6, 0.2})}, {"t", Tensor({1, 1}, 1.0)}});
  EXPECT_LT(check_gradients(g, loss), 1e-6);
}

TEST(GradCheck, RandomGraphsOverFullOpSet) {
  std::set<OpKind> seen;
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto r = hmexpr::testing::make_random_graph(seed);
    r.graph.forward(r.params, r.feed);
    const double err = check_gradients(r.graph, r.loss);
    EXPECT_LT(err, 1e-4) << "seed " << seed;
    worst = std::max(worst, err);
    seen.insert(r.ops.begin(), r.ops.end());
  }
  for (OpKind k : {OpKind::Affine, OpKind::Conv1d, OpKind::MaxPool, OpKind::AvgPool, OpKind::Relu, OpKind::Sigmoid,
                   OpKind::Softplus, OpKind::Softmax, OpKind::Dropout, OpKind::Flatten, OpKind::TemporalMean,
                   OpKind::Add, OpKind::Scale, OpKind::L2Distance, OpKind::CrossEntropyLoss, OpKind::BceLoss})
    EXPECT_TRUE(seen.contains(k)) << op_name(k) << " never exercised";
  RecordProperty("worst_error", std::to_string(worst));
}

TEST(GradCheck, InputGradientMatchesFiniteDifference) {
  auto r = hmexpr::testing::make_random_graph(7);
  r.graph.forward(r.params, r.feed);
  r.graph.backward(r.loss);
  const NodeId x = *r.graph.find("x");
  const Tensor analytic = r.graph.grad(x);
  const double eps = 1e-5;
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    Feed f = r.feed;
    f.at("x")[k] += eps;
    Graph& g = r.graph;
    g.set_seed(7);
    g.forward(r.params, f);
    const double up = g.value(r.loss)[0];
    f.at("x")[k] -= 2 * eps;
    g.set_seed(7);
    g.forward(r.params, f);
    const double down = g.value(r.loss)[0];
    EXPECT_NEAR(analytic[k], (up - down) / (2 * eps), 1e-6 * std::max(1.0, std::abs(analytic[k])));
  }
}

TEST(Optimizer, SgdStep) {
  ParamSet p, g;
  p.add("w", Tensor({1}, 1.0));
  g.add("w", Tensor({1}, 2.0));
  OptimizerState s = make_optimizer(OptimizerKind::Sgd, 0.1);
  apply_update(p, g, s);
  EXPECT_DOUBLE_EQ(p.at("w")[0], 0.8);
  EXPECT_EQ(s.step, 1u);
}

TEST(Optimizer, ZeroGradientIsFixedPoint) {
  for (auto kind : {OptimizerKind::Sgd, OptimizerKind::Adam}) {
    ParamSet p, g;
    p.add("w", Tensor({3}, std::vector<double>{1, -2, 3}));
    g.add("w", Tensor({3}, 0.0));
    const ParamSet before = p;
    OptimizerState s = make_optimizer(kind, 0.01);
    apply_update(p, g, s);
    EXPECT_EQ(p, before);
  }
}

TEST(Optimizer, FirstAdamStep) {
  ParamSet p, g;
  p.add("w", Tensor({4}, 0.5));
  g.add("w", Tensor({4}, 1.0));
  OptimizerState s = make_optimizer(OptimizerKind::Adam, 0.001);
  apply_update(p, g, s);
  // m_hat = 1, v_hat = 1 -> step = lr / (1 + eps).
  for (double v : p.at("w").data()) EXPECT_NEAR(0.5 - v, 0.001 / (1 + 1e-8), 1e-15);
}

TEST(Optimizer, RejectsNaNAndMismatch) {
  ParamSet p, g;
  p.add("w", Tensor({1}, 0.0));
  g.add("w", Tensor({1}, std::numeric_limits<double>::quiet_NaN()));
  OptimizerState s = make_optimizer(OptimizerKind::Sgd, 0.1);
  EXPECT_THROW(apply_update(p, g, s), NumericError);
  ParamSet bad;
  bad.add("w", Tensor({2}, 0.0));
  EXPECT_THROW(apply_update(p, bad, s), ShapeError);
}
