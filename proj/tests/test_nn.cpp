#include "kanvis/errors.hpp"
#include "kanvis/nn.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace kanvis;

TEST(Linear, ForwardAndInit) {
  LinearLayer layer(2, 3);
  layer.w() = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  layer.b() = Tensor::vector({0.5, 0, -0.5});
  EXPECT_EQ(linear_forward(layer, Tensor::matrix({{1, 1}})), Tensor::matrix({{5.5, 7, 8.5}}));

  LinearLayer big(400, 300);
  Rng rng(1);
  big.initialize(rng);
  double ss = 0.0;
  for (double v : big.w().data()) ss += v * v;
  EXPECT_NEAR(ss / big.w().size(), 1.0 / 400, 0.1 / 400);
  for (double v : big.b().data()) EXPECT_EQ(v, 0.0);
}

TEST(Linear, GradientsMatchFiniteDifferences) {
  for (bool bias : {true, false}) {
    LinearLayer layer(4, 3, bias);
    Rng rng(2);
    layer.initialize(rng);
    if (bias) layer.b() = oracle::random_tensor({3}, rng);
    Tensor x = oracle::random_tensor({5, 4}, rng);
    const Tensor r = oracle::random_tensor({5, 3}, rng);
    auto loss = [&] { return oracle::weighted_sum(linear_forward(layer, x), r); };
    const auto g = linear_backward(layer, x, r);
    EXPECT_LT(oracle::rel_error(g.dw, oracle::numeric_gradient(layer.w(), loss)), 1e-8);
    EXPECT_LT(oracle::rel_error(g.dx, oracle::numeric_gradient(x, loss)), 1e-8);
    if (bias) EXPECT_LT(oracle::rel_error(g.db, oracle::numeric_gradient(layer.b(), loss)), 1e-8);
    if (!bias) {
      for (double v : g.db.data()) EXPECT_EQ(v, 0.0);
    }
  }
}

TEST(Relu, ForwardBackward) {
  const Tensor x = Tensor::vector({-1, 0, 2});
  EXPECT_EQ(relu_forward(x), Tensor::vector({0, 0, 2}));
  EXPECT_EQ(relu_backward(x, Tensor::vector({5, 5, 5})), Tensor::vector({0, 0, 5}));
}

TEST(MaxPool, PicksWindowMaximumAndRoutesGradient) {
  Tensor x({1, 1, 3, 4}, std::vector<double>{1, 3, 2, 2,  //
                                             4, 0, 2, 1,  //
                                             9, 9, 9, 9});
  const auto out = maxpool2x2_forward(x);
  EXPECT_EQ(out.y.shape(), (Shape{1, 1, 1, 2}));
  EXPECT_EQ(out.y, Tensor({1, 1, 1, 2}, std::vector<double>{4, 2}));
  // Tie in the second window goes to the first element in row-major order.
  EXPECT_EQ(out.argmax, (std::vector<std::size_t>{4, 2}));
  const Tensor dx = maxpool2x2_backward(out, Tensor({1, 1, 1, 2}, std::vector<double>{7, 8}));
  EXPECT_EQ(dx.shape(), x.shape());
  EXPECT_EQ(dx[4], 7.0);
  EXPECT_EQ(dx[2], 8.0);
  EXPECT_EQ(reduce_sum(dx), 15.0);
}

TEST(CrossEntropy, UniformLogitsGiveLogClasses) {
  const Tensor logits({2, 10});
  const std::vector<int> labels{3, 7};
  const auto r = softmax_cross_entropy(logits, labels);
  EXPECT_NEAR(r.loss, std::log(10.0), 1e-12);
  EXPECT_NEAR(r.loss, 2.302585, 1e-6);
}

TEST(CrossEntropy, StableForLargeLogits) {
  const Tensor logits = Tensor::matrix({{1000, 0, 0}, {0, 1000, -1000}});
  const std::vector<int> labels{0, 0};
  const auto r = softmax_cross_entropy(logits, labels);
  EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_NEAR(r.loss, 500.0, 1e-9);
  EXPECT_TRUE(r.grad.all_finite());
}

TEST(CrossEntropy, GradientRowsSumToZeroAndMatchFiniteDifferences) {
  Rng rng(3);
  Tensor logits = oracle::random_tensor({4, 5}, rng, -3, 3);
  const std::vector<int> labels{0, 4, 2, 2};
  const auto r = softmax_cross_entropy(logits, labels);
  for (std::size_t i = 0; i < 4; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 5; ++j) s += r.grad[i * 5 + j];
    EXPECT_NEAR(s, 0.0, 1e-15);
  }
  const Tensor numeric = oracle::numeric_gradient(logits, [&] { return softmax_cross_entropy(logits, labels).loss; });
  EXPECT_LT(oracle::rel_error(r.grad, numeric), 1e-7);
  const std::vector<int> bad{0, 5, 0, 0};
  EXPECT_THROW(softmax_cross_entropy(logits, bad), std::out_of_range);
}

TEST(Mse, ValueAndGradient) {
  Tensor pred = Tensor::matrix({{1, 2}, {3, 4}});
  const Tensor target = Tensor::matrix({{0, 2}, {3, 6}});
  const auto r = mse_loss(pred, target);
  EXPECT_NEAR(r.loss, (1.0 + 4.0) / 2.0, 1e-15);
  const Tensor numeric = oracle::numeric_gradient(pred, [&] { return mse_loss(pred, target).loss; });
  EXPECT_LT(oracle::rel_error(r.grad, numeric), 1e-8);
}

TEST(Argmax, LowestIndexWinsTies) {
  EXPECT_EQ(argmax_rows(Tensor::matrix({{1, 3, 3}, {5, 0, 5}})), (std::vector<int>{1, 0}));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor theta = Tensor::vector({1.0, -2.0, 0.5});
  Tensor grad = Tensor::vector({0.3, -7.0, 1e-3});
  AdamState adam;
  Tensor* p[] = {&theta};
  const Tensor* g[] = {&grad};
  adam.step(p, g);
  // Bias correction makes m_hat / sqrt(v_hat) = sign(g) on the first step.
  EXPECT_NEAR(theta[0], 1.0 - 0.001, 1e-9);
  EXPECT_NEAR(theta[1], -2.0 + 0.001, 1e-9);
  EXPECT_NEAR(theta[2], 0.5 - 0.001, 1e-7);
  EXPECT_EQ(adam.steps(), 1u);
}

TEST(Adam, ConvergesOnQuadratic) {
  Tensor theta = Tensor::vector({1.0});
  Tensor grad({1});
  AdamState adam({.lr = 0.01});
  Tensor* p[] = {&theta};
  const Tensor* g[] = {&grad};
  for (int i = 0; i < 2000; ++i) {
    grad[0] = 2.0 * theta[0];
    adam.step(p, g);
  }
  EXPECT_LT(std::abs(theta[0]), 1e-3);
}

TEST(Adam, ZeroGradientIsFixedPoint) {
  Tensor theta = Tensor::vector({0.25, -4.0});
  const Tensor before = theta;
  Tensor grad({2});
  AdamState adam;
  Tensor* p[] = {&theta};
  const Tensor* g[] = {&grad};
  for (int i = 0; i < 10; ++i) adam.step(p, g);
  EXPECT_EQ(theta, before);
}

TEST(Adam, ShapeChangeIsRejected) {
  Tensor theta({2});
  Tensor grad({2});
  AdamState adam;
  Tensor* p[] = {&theta};
  const Tensor* g[] = {&grad};
  adam.step(p, g);
  Tensor other({3});
  Tensor* p2[] = {&other};
  const Tensor* g2[] = {&other};
  EXPECT_THROW(adam.step(p2, g2), ShapeError);
}
