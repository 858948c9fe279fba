#include "gradlens/autodiff.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "test_support.hpp"

namespace gradlens::autodiff {
namespace {

using testing::central_difference;
using testing::max_relative_error;
using testing::random_tensor;

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

double evaluate(const std::vector<Tensor>& leaves, const Builder& build) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& t : leaves) vars.push_back(tape.input(t));
  return tape.value(build(tape, vars))[0];
}

// Compares reverse-mode gradients for every leaf against central differences.
void expect_matches_central_difference(const std::vector<Tensor>& leaves,
                                       const Builder& build, double h = 1e-4,
                                       double tol = 1e-5) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& t : leaves) vars.push_back(tape.input(t));
  const auto grads = tape.backward(build(tape, vars));
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    auto f = [&](const Tensor& t) {
      auto perturbed = leaves;
      perturbed[i] = t;
      return evaluate(perturbed, build);
    };
    const Tensor fd = central_difference(f, leaves[i], h);
    const Tensor& g = grads.at(vars[i]);
    ASSERT_EQ(g.shape(), leaves[i].shape()) << "leaf " << i;
    EXPECT_LT(max_relative_error(g.data(), fd.data()), tol) << "leaf " << i;
  }
}

TEST(Dense, AffineExample) {
  Tape tape;
  auto x = tape.input(Tensor::vector({3.0, 4.0}));
  auto w = tape.input(Tensor::matrix(2, 1, {2.0, -1.0}));
  auto b = tape.input(Tensor::vector({0.0}));
  EXPECT_EQ(tape.value(tape.dense(x, w, b))[0], 2.0);
}

TEST(Dense, ShapeMismatchNamesOperatorAndShapes) {
  Tape tape;
  auto x = tape.input(Tensor::vector({1.0, 2.0, 3.0}));
  auto w = tape.input(Tensor({2, 4}));
  auto b = tape.input(Tensor({4}));
  try {
    tape.dense(x, w, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("dense"), std::string::npos);
    EXPECT_NE(msg.find("[3]"), std::string::npos);
    EXPECT_NE(msg.find("[2x4]"), std::string::npos);
  }
}

TEST(Dense, BatchedGradientsMatchFiniteDifferences) {
  std::mt19937_64 gen(1);
  expect_matches_central_difference(
      {random_tensor({3, 4}, gen), random_tensor({4, 2}, gen), random_tensor({2}, gen)},
      [](Tape& t, const std::vector<Var>& v) {
        return t.sum(t.tanh(t.dense(v[0], v[1], v[2])));
      });
}

TEST(LinearModel, InputGradientIsTheWeightVectorExactly) {
  const std::vector<double> beta{2.0, -1.0, 0.5};
  const Tensor weights = Tensor::matrix(3, 1, beta);
  std::mt19937_64 gen(2);
  for (int trial = 0; trial < 20; ++trial) {
    Tape tape;
    auto x = tape.input(random_tensor({3}, gen, -10.0, 10.0));
    auto w = tape.parameter(weights);
    auto b = tape.constant(Tensor::vector({0.25}));
    const auto grads = tape.backward(tape.dense(x, w, b));
    EXPECT_EQ(grads.at(x).values(), beta);
  }
}

TEST(Sigmoid, ValueAndDerivativeAtZero) {
  Tape tape;
  auto x = tape.input(Tensor::vector({0.0}));
  auto y = tape.sigmoid(x);
  EXPECT_EQ(tape.value(y)[0], 0.5);
  EXPECT_EQ(tape.backward(y).at(x)[0], 0.25);
}

TEST(Elementwise, GradientsMatchFiniteDifferences) {
  std::mt19937_64 gen(3);
  Tensor x = random_tensor({2, 5}, gen, -3.0, 3.0);
  for (double& v : x.data()) {
    if (std::abs(v) < 0.01) v = 0.5;  // keep ReLU away from its kink
  }
  expect_matches_central_difference({x}, [](Tape& t, const std::vector<Var>& v) {
    return t.sum(t.sigmoid(t.relu(v[0])));
  });
  expect_matches_central_difference({x}, [](Tape& t, const std::vector<Var>& v) {
    return t.sum(t.tanh(v[0]));
  });
  expect_matches_central_difference({x}, [](Tape& t, const std::vector<Var>& v) {
    return t.sum(t.sigmoid(v[0]));
  });
}

TEST(Relu, SubgradientAtZeroIsZero) {
  Tape tape;
  auto x = tape.input(Tensor::vector({0.0, 1.0, -1.0}));
  const auto g = tape.backward(tape.sum(tape.relu(x))).at(x);
  EXPECT_EQ(g.values(), (std::vector<double>{0.0, 1.0, 0.0}));
}

TEST(Conv1d, ValidOutputLength) {
  Tape tape;
  auto x = tape.input(Tensor({5, 2}, 1.0));
  auto k = tape.input(Tensor({3, 2, 4}, 1.0));
  auto b = tape.input(Tensor({4}));
  const Tensor& y = tape.value(tape.conv1d(x, k, b));
  EXPECT_EQ(y.shape(), (Shape{3, 4}));
  EXPECT_EQ(y.at(0, 0), 6.0);
}

TEST(Conv1d, WindowReadsConsecutiveRows) {
  // Single channel, kernel picks the last row of each window.
  Tape tape;
  auto x = tape.input(Tensor::matrix(4, 1, {1.0, 2.0, 3.0, 4.0}));
  auto k = tape.input(Tensor({3, 1, 1}, std::vector<double>{0.0, 0.0, 1.0}));
  auto b = tape.input(Tensor::vector({0.0}));
  EXPECT_EQ(tape.value(tape.conv1d(x, k, b)).values(), (std::vector<double>{3.0, 4.0}));
}

TEST(Conv1d, GradientsMatchFiniteDifferences) {
  std::mt19937_64 gen(4);
  expect_matches_central_difference(
      {random_tensor({6, 3}, gen), random_tensor({3, 3, 4}, gen), random_tensor({4}, gen)},
      [](Tape& t, const std::vector<Var>& v) {
        return t.sum(t.tanh(t.conv1d(v[0], v[1], v[2])));
      });
}

TEST(Conv1d, KernelWiderThanInputIsAShapeError) {
  Tape tape;
  auto x = tape.input(Tensor({2, 3}));
  auto k = tape.input(Tensor({3, 3, 1}));
  auto b = tape.input(Tensor({1}));
  EXPECT_THROW(tape.conv1d(x, k, b), ShapeError);
}

TEST(Gather, SelectsRows) {
  Tape tape;
  auto table = tape.input(Tensor::matrix(3, 2, {0, 1, 10, 11, 20, 21}));
  const std::vector<std::size_t> idx{2, 0};
  EXPECT_EQ(tape.value(tape.gather(table, idx)).values(),
            (std::vector<double>{20, 21, 0, 1}));
}

TEST(Gather, RepeatedIndexAccumulatesIntoTableRow) {
  Tape tape;
  auto table = tape.input(Tensor({3, 2}));
  const std::vector<std::size_t> idx{1, 1};
  auto out = tape.gather(table, idx);
  auto w = tape.constant(Tensor::matrix(2, 1, {1.0, 2.0}));
  auto b = tape.constant(Tensor::vector({0.0}));
  // Score = sum over gathered rows of (row . (1, 2)).
  auto s = tape.sum(tape.dense(out, w, b));
  EXPECT_EQ(tape.backward(s).at(table).values(),
            (std::vector<double>{0, 0, 2, 4, 0, 0}));
}

TEST(Gather, OutOfRangeIndex) {
  Tape tape;
  auto table = tape.input(Tensor({3, 2}));
  const std::vector<std::size_t> idx{0, 3};
  EXPECT_THROW(tape.gather(table, idx), IndexError);
}

TEST(Gather, WatchedOutputGradientMatchesFiniteDifferencesOnGatheredValues) {
  std::mt19937_64 gen(5);
  const Tensor table = random_tensor({5, 3}, gen);
  const Tensor w = random_tensor({3, 2}, gen);
  const std::vector<std::size_t> idx{4, 0, 4, 2};
  auto head = [&](Tape& t, Var z) {
    auto wv = t.constant(w);
    auto bv = t.constant(Tensor({2}));
    return t.sum(t.tanh(t.dense(z, wv, bv)));
  };

  Tape tape;
  auto tv = tape.input(table);
  auto z = tape.gather(tv, idx);
  tape.watch(z);
  const auto grads = tape.backward(head(tape, z));
  ASSERT_TRUE(grads.contains(z));
  const Tensor gathered = tape.value(z);

  auto f = [&](const Tensor& values) {
    Tape t;
    return t.value(head(t, t.constant(values)))[0];
  };
  const Tensor fd = central_difference(f, gathered, 1e-4);
  EXPECT_LT(max_relative_error(grads.at(z).data(), fd.data()), 1e-5);

  expect_matches_central_difference({table}, [&](Tape& t, const std::vector<Var>& v) {
    return head(t, t.gather(v[0], idx));
  });
}

TEST(MaxPoolTime, RoutesGradientToArgmax) {
  Tape tape;
  auto x = tape.input(Tensor::matrix(3, 1, {1.0, 5.0, 3.0}));
  auto y = tape.max_pool_time(x);
  EXPECT_EQ(tape.value(y)[0], 5.0);
  auto w = tape.constant(Tensor::matrix(1, 1, {7.0}));
  auto b = tape.constant(Tensor::vector({0.0}));
  const auto g = tape.backward(tape.dense(y, w, b)).at(x);
  EXPECT_EQ(g.values(), (std::vector<double>{0.0, 7.0, 0.0}));
}

TEST(MaxPoolTime, TiesRouteToFirstIndex) {
  Tape tape;
  auto x = tape.input(Tensor::matrix(3, 1, {2.0, 2.0, 2.0}));
  auto y = tape.max_pool_time(x);
  EXPECT_EQ(tape.value(y)[0], 2.0);
  EXPECT_EQ(tape.backward(tape.sum(y)).at(x).values(), (std::vector<double>{1.0, 0.0, 0.0}));
}

TEST(MaxPoolTime, EmptyTimeAxis) {
  Tape tape;
  auto x = tape.input(Tensor());
  EXPECT_THROW(tape.max_pool_time(x), ShapeError);
}

TEST(MaxPoolTime, GradientsMatchFiniteDifferencesAwayFromTies) {
  std::mt19937_64 gen(6);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = random_tensor({8, 4}, gen);
    bool separated = true;
    for (std::size_t c = 0; c < 4; ++c) {
      std::vector<double> col;
      for (std::size_t t = 0; t < 8; ++t) col.push_back(x.at(t, c));
      std::sort(col.rbegin(), col.rend());
      separated = separated && col[0] - col[1] > 1e-3;
    }
    if (!separated) continue;
    expect_matches_central_difference({x}, [](Tape& t, const std::vector<Var>& v) {
      return t.sum(t.tanh(t.max_pool_time(v[0])));
    });
  }
}

TEST(BinaryCrossEntropy, GradientsMatchFiniteDifferences) {
  std::mt19937_64 gen(7);
  const std::vector<double> targets{1, 0, 1, 1, 0};
  expect_matches_central_difference({random_tensor({5}, gen, -4.0, 4.0)},
                                    [&](Tape& t, const std::vector<Var>& v) {
                                      return t.binary_cross_entropy(v[0], targets);
                                    });
}

TEST(BinaryCrossEntropy, StableForLargeLogits) {
  Tape tape;
  auto z = tape.input(Tensor::vector({800.0, -800.0}));
  const std::vector<double> targets{1.0, 0.0};
  auto loss = tape.binary_cross_entropy(z, targets);
  EXPECT_TRUE(std::isfinite(tape.value(loss)[0]));
  EXPECT_TRUE(tape.backward(loss).at(z).all_finite());
}

TEST(Concat, GradientsMatchFiniteDifferences) {
  std::mt19937_64 gen(8);
  expect_matches_central_difference(
      {random_tensor({2}, gen), random_tensor({3}, gen)},
      [](Tape& t, const std::vector<Var>& v) {
        const std::vector<Var> parts{v[0], v[1], v[0]};
        return t.sum(t.tanh(t.concat(parts)));
      });
}

TEST(TwoLayerReluNet, GradientsMatchFiniteDifferencesAtSmoothPoints) {
  std::mt19937_64 gen(9);
  const double h = 1e-4;
  int checked = 0;
  while (checked < 10) {
    std::vector<Tensor> leaves{random_tensor({6}, gen), random_tensor({6, 8}, gen),
                               random_tensor({8}, gen), random_tensor({8, 1}, gen),
                               random_tensor({1}, gen)};
    // Largest change one perturbation of x, W1, or b1 can cause in any
    // hidden pre-activation; resample when a kink is that close.
    double reach = 1.0;
    for (double v : leaves[0].data()) reach += std::abs(v);
    double col_max = 0.0;
    for (std::size_t j = 0; j < 8; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < 6; ++i) s += std::abs(leaves[1].at(i, j));
      col_max = std::max(col_max, s);
    }
    reach = h * (reach + col_max);
    Tape probe;
    std::vector<Var> pv;
    for (const auto& t : leaves) pv.push_back(probe.input(t));
    const Tensor& pre = probe.value(probe.dense(pv[0], pv[1], pv[2]));
    bool smooth = true;
    for (double v : pre.data()) smooth = smooth && std::abs(v) > std::max(reach, 1e-6);
    if (!smooth) continue;
    ++checked;
    expect_matches_central_difference(leaves, [](Tape& t, const std::vector<Var>& v) {
      return t.dense(t.relu(t.dense(v[0], v[1], v[2])), v[3], v[4]);
    }, h, 1e-5);
  }
}

TEST(Backward, BeforeForwardIsAnError) {
  Tape tape;
  EXPECT_THROW(tape.backward(Var{}), BackwardError);
}

TEST(Backward, NonScalarOutputIsAnError) {
  Tape tape;
  auto x = tape.input(Tensor::vector({1.0, 2.0}));
  EXPECT_THROW(tape.backward(tape.tanh(x)), BackwardError);
}

TEST(Backward, EveryGradientLeafHasOneEntryOfItsShape) {
  Tape tape;
  auto x = tape.input(Tensor({2, 3}, 0.5));
  auto unused = tape.input(Tensor({4}, 1.0));
  auto frozen = tape.constant(Tensor({3}, 1.0));
  auto out = tape.sum(tape.tanh(x));
  auto late = tape.input(Tensor({5}));
  const auto grads = tape.backward(out);
  EXPECT_EQ(grads.size(), 3u);
  EXPECT_EQ(grads.at(x).shape(), (Shape{2, 3}));
  EXPECT_EQ(grads.at(unused), Tensor({4}, 0.0));
  EXPECT_EQ(grads.at(late), Tensor({5}, 0.0));
  EXPECT_FALSE(grads.contains(frozen));
}

TEST(Backward, IsBitwiseDeterministic) {
  std::mt19937_64 gen(10);
  const Tensor x = random_tensor({4, 3}, gen);
  const Tensor k = random_tensor({2, 3, 5}, gen);
  const Tensor b = random_tensor({5}, gen);
  auto run = [&] {
    Tape tape;
    auto xv = tape.input(x);
    auto kv = tape.input(k);
    auto bv = tape.input(b);
    return tape.backward(tape.sum(tape.sigmoid(tape.max_pool_time(tape.conv1d(xv, kv, bv)))));
  };
  EXPECT_EQ(run(), run());
}

TEST(Backward, BatchLossGradientIsSumOfPerExampleGradients) {
  std::mt19937_64 gen(11);
  const Tensor w = random_tensor({4, 1}, gen);
  const Tensor b = random_tensor({1}, gen);
  const Tensor x = random_tensor({6, 4}, gen);
  const std::vector<double> y{1, 0, 0, 1, 1, 0};

  Tape batch;
  auto wv = batch.input(w);
  auto bv = batch.input(b);
  auto xb = batch.constant(x);
  // Mean loss times batch size is the sum of per-example losses.
  auto mean = batch.binary_cross_entropy(batch.dense(xb, wv, bv), y);
  const auto gb = batch.backward(mean);

  std::vector<double> summed(4, 0.0);
  for (std::size_t r = 0; r < 6; ++r) {
    Tape one;
    auto w1 = one.input(w);
    auto b1 = one.input(b);
    auto xr = one.constant(Tensor::vector(std::vector<double>(x.row(r).begin(), x.row(r).end())));
    const std::vector<double> target{y[r]};
    const auto g = one.backward(one.binary_cross_entropy(one.dense(xr, w1, b1), target));
    for (std::size_t i = 0; i < 4; ++i) summed[i] += g.at(w1)[i];
  }
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(gb.at(wv)[i] * 6.0, summed[i], 1e-12);
  }
}

TEST(Apply, DispatchesByName) {
  Tape tape;
  auto x = tape.input(Tensor::vector({0.0}));
  const std::vector<Var> in{x};
  EXPECT_EQ(tape.value(tape.apply("sigmoid", in))[0], 0.5);
  EXPECT_EQ(tape.kind(tape.apply("relu", in)), OpKind::kRelu);
}

TEST(Apply, UnsupportedOperator) {
  Tape tape;
  auto x = tape.input(Tensor::vector({1.0}));
  const std::vector<Var> in{x};
  EXPECT_THROW(tape.apply("softmax", in), UnsupportedOperatorError);
}

TEST(Values, StayFiniteOnFiniteInputs) {
  std::mt19937_64 gen(12);
  Tape tape;
  auto x = tape.input(random_tensor({10, 4}, gen, -50.0, 50.0));
  auto k = tape.input(random_tensor({3, 4, 6}, gen, -5.0, 5.0));
  auto b = tape.input(random_tensor({6}, gen));
  auto pooled = tape.max_pool_time(tape.conv1d(x, k, b));
  const std::vector<double> t(6, 1.0);
  auto loss = tape.binary_cross_entropy(pooled, t);
  const auto grads = tape.backward(loss);
  for (Var v : {x, k, b}) EXPECT_TRUE(grads.at(v).all_finite());
  EXPECT_TRUE(tape.value(loss).all_finite());
}

}  // namespace
}  // namespace gradlens::autodiff
