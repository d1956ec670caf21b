#include "kanvis/kan.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace kanvis;

namespace {

// Edge-by-edge reference forward built from the scalar spline helpers.
Tensor reference_forward(const KanLayer& layer, const Tensor& x, const DeactivationMask& mask) {
  const auto& b = layer.basis();
  const std::size_t n = x.dim(0), nb = b.n_basis();
  Tensor y({n, layer.d_out()});
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t j = 0; j < layer.d_out(); ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < layer.d_in(); ++i) {
        const double t = x[s * layer.d_in() + i];
        std::span<const double> c(layer.c().raw() + (i * layer.d_out() + j) * nb, nb);
        double spline = spline_eval(b, c, t);
        if (mask(i, j)) {
          const Chord ch = chord_line(b, c);
          spline = ch.slope * b.clamp(t) + ch.intercept;
        }
        const std::size_t e = i * layer.d_out() + j;
        acc += layer.w_b()[e] * silu(t) + layer.w_s()[e] * spline;
      }
      y[s * layer.d_out() + j] = acc;
    }
  }
  return y;
}

KanLayer random_layer(std::size_t d_in, std::size_t d_out, std::uint64_t seed) {
  KanLayer layer(d_in, d_out);
  Rng rng(seed);
  layer.initialize(rng);
  // Move away from w = 1 so the weight gradients are not degenerate.
  for (auto& v : layer.w_b().data()) v = rng.normal();
  for (auto& v : layer.w_s().data()) v = rng.normal();
  for (auto& v : layer.c().data()) v = rng.normal();
  return layer;
}

}  // namespace

TEST(Silu, KnownValues) {
  EXPECT_NEAR(silu(0.0), 0.0, 1e-15);
  EXPECT_NEAR(silu(1.0), 0.7310585786300049, 1e-12);
  EXPECT_NEAR(silu(-50.0), 0.0, 1e-18);
  EXPECT_NEAR(silu(50.0), 50.0, 1e-12);
  EXPECT_TRUE(std::isfinite(silu(-1000.0)));
  const double h = 1e-6;
  for (double x : {-3.0, -0.4, 0.0, 0.9, 4.0}) {
    EXPECT_NEAR(silu_grad(x), (silu(x + h) - silu(x - h)) / (2 * h), 1e-8);
  }
}

TEST(KanLayer, InitializationFollowsRecipe) {
  KanLayer layer(10, 20);
  Rng rng(1);
  layer.initialize(rng);
  EXPECT_EQ(layer.c().shape(), (Shape{10, 20, 8}));
  for (double v : layer.w_b().data()) EXPECT_EQ(v, 1.0);
  for (double v : layer.w_s().data()) EXPECT_EQ(v, 1.0);
  double ss = 0.0;
  for (double v : layer.c().data()) ss += v * v;
  const double sd = std::sqrt(ss / layer.c().size());
  EXPECT_NEAR(sd, 0.1 / std::sqrt(8.0), 0.004);
  EXPECT_EQ(layer.parameter_count(), 10u * 20u * 10u);
}

TEST(KanLayer, ForwardMatchesEdgeReference) {
  KanLayer layer = random_layer(3, 4, 5);
  Rng rng(6);
  Tensor x = oracle::random_tensor({7, 3}, rng, -1.5, 1.5);
  const auto out = kan_forward(layer, x, Mode::inference);
  EXPECT_EQ(out.y.shape(), (Shape{7, 4}));
  EXPECT_LT(oracle::max_abs_diff(out.y, reference_forward(layer, x, DeactivationMask::none(3, 4))), 1e-12);

  Rng mrng(7);
  const auto mask = DeactivationMask::draw(3, 4, 0.5, mrng);
  const auto masked = kan_forward(layer, x, Mode::training, nullptr, &mask);
  EXPECT_LT(oracle::max_abs_diff(masked.y, reference_forward(layer, x, mask)), 1e-12);
}

TEST(KanLayer, ZeroDeactivationTrainingEqualsInference) {
  KanLayer layer = random_layer(4, 3, 8);
  Rng rng(9);
  Tensor x = oracle::random_tensor({6, 4}, rng);
  Rng mask_rng(10);
  const auto train = kan_forward(layer, x, Mode::training, &mask_rng);
  const auto infer = kan_forward(layer, x, Mode::inference);
  EXPECT_EQ(train.y, infer.y);
  EXPECT_EQ(train.cache.mask.count(), 0u);
}

TEST(KanLayer, FullDeactivationIsChordEverywhere) {
  KanLayer layer = random_layer(2, 2, 11);
  layer.set_deactivation_p(1.0);
  Rng rng(12);
  Tensor x = oracle::random_tensor({5, 2}, rng, -2.0, 2.0);
  Rng mask_rng(13);
  const auto out = kan_forward(layer, x, Mode::training, &mask_rng);
  EXPECT_EQ(out.cache.mask.count(), 4u);
  EXPECT_LT(oracle::max_abs_diff(out.y, reference_forward(layer, x, DeactivationMask::all(2, 2))), 1e-12);
}

TEST(KanLayer, AffineSplinesAreFixedPointsOfDeactivation) {
  KanLayer layer = random_layer(3, 2, 14);
  const auto g = layer.basis().greville();
  const std::size_t nb = layer.basis().n_basis();
  for (std::size_t e = 0; e < 6; ++e) {
    const double a = 0.3 * e - 0.5, b = 0.1 * e;
    for (std::size_t k = 0; k < nb; ++k) layer.c()[e * nb + k] = a * g[k] + b;
  }
  Rng rng(15);
  Tensor x = oracle::random_tensor({9, 3}, rng);
  const auto active = kan_forward(layer, x, Mode::inference);
  const auto mask = DeactivationMask::all(3, 2);
  const auto chord = kan_forward(layer, x, Mode::training, nullptr, &mask);
  EXPECT_LT(oracle::max_abs_diff(active.y, chord.y), 1e-10);
}

TEST(KanLayer, InferenceNeverDrawsRandomness) {
  KanLayer layer = random_layer(2, 2, 16);
  layer.set_deactivation_p(0.5);
  Rng rng(17);
  Tensor x = oracle::random_tensor({3, 2}, rng);
  Rng untouched(18);
  kan_forward(layer, x, Mode::inference, &untouched);
  EXPECT_EQ(untouched.draws(), 0u);
  EXPECT_THROW(kan_forward(layer, x, Mode::training), std::invalid_argument);
}

TEST(KanLayer, MaskRateMatchesProbability) {
  Rng rng(19);
  const auto mask = DeactivationMask::draw(200, 100, 0.25, rng);
  EXPECT_NEAR(mask.count() / 20000.0, 0.25, 5.0 * std::sqrt(0.25 * 0.75 / 20000.0));
}

class KanGradient : public ::testing::TestWithParam<bool> {};

TEST_P(KanGradient, MatchesFiniteDifferences) {
  const bool deactivated = GetParam();
  KanLayer layer = random_layer(3, 4, 20);
  Rng rng(21);
  // Keep a few inputs outside the domain to exercise the clamp.
  Tensor x = oracle::random_tensor({5, 3}, rng, -1.3, 1.3);
  const Tensor r = oracle::random_tensor({5, 4}, rng);
  const auto mask = deactivated ? DeactivationMask::all(3, 4) : DeactivationMask::none(3, 4);

  auto loss = [&] { return oracle::weighted_sum(kan_forward(layer, x, Mode::training, nullptr, &mask).y, r); };
  const auto out = kan_forward(layer, x, Mode::training, nullptr, &mask);
  const auto g = kan_backward(layer, out.cache, r);

  EXPECT_LT(oracle::rel_error(g.dc, oracle::numeric_gradient(layer.c(), loss)), 1e-6);
  EXPECT_LT(oracle::rel_error(g.dw_b, oracle::numeric_gradient(layer.w_b(), loss)), 1e-6);
  EXPECT_LT(oracle::rel_error(g.dw_s, oracle::numeric_gradient(layer.w_s(), loss)), 1e-6);
  EXPECT_LT(oracle::rel_error(g.dx, oracle::numeric_gradient(x, loss)), 1e-6);
}

INSTANTIATE_TEST_SUITE_P(Masks, KanGradient, ::testing::Values(false, true),
                         [](const auto& info) { return info.param ? "AllDeactivated" : "AllActive"; });

TEST(KanLayer, BackwardRejectsForeignCache) {
  KanLayer a = random_layer(2, 2, 22);
  KanLayer b = random_layer(2, 2, 23);
  Rng rng(24);
  Tensor x = oracle::random_tensor({3, 2}, rng);
  const auto out = kan_forward(a, x, Mode::inference);
  EXPECT_THROW(kan_backward(b, out.cache, Tensor({3, 2})), std::invalid_argument);
}

TEST(KanPenalty, L1CountsEveryParameter) {
  KanLayer layer(2, 5);  // 2 * 5 * (8 + 2) = 100 parameters
  for (auto* t : {&layer.c(), &layer.w_b(), &layer.w_s()}) t->fill(-1.0);
  const auto all = l1_penalty(layer, 0.001);
  EXPECT_NEAR(all.value, 0.1, 1e-14);
  for (double v : all.dw_b.data()) EXPECT_EQ(v, -0.001);
  const auto splines = l1_penalty(layer, 0.001, true);
  EXPECT_NEAR(splines.value, 0.08, 1e-14);
  for (double v : splines.dw_s.data()) EXPECT_EQ(v, 0.0);
}

TEST(KanPenalty, SmoothnessSumsEdges) {
  KanLayer layer = random_layer(2, 3, 25);
  const auto pen = smoothness_penalty(layer, 0.2);
  const std::size_t nb = layer.basis().n_basis();
  double expect = 0.0;
  for (std::size_t e = 0; e < 6; ++e) {
    expect += layer.gram().quadratic(std::span<const double>(layer.c().raw() + e * nb, nb));
  }
  EXPECT_NEAR(pen.value, 0.2 * expect, 1e-12);
  const Tensor numeric = oracle::numeric_gradient(layer.c(), [&] { return smoothness_penalty(layer, 0.2).value; });
  EXPECT_LT(oracle::rel_error(pen.dc, numeric), 1e-7);
}

TEST(KaTheorem, HiddenWidthIsTwoDPlusOne) {
  const auto one = ka_theorem_network(1);
  EXPECT_EQ(one.inner.d_out(), 3u);
  EXPECT_EQ(one.outer.d_in(), 3u);
  EXPECT_EQ(one.outer.d_out(), 1u);
  const auto four = ka_theorem_network(4);
  EXPECT_EQ(four.inner.d_in(), 4u);
  EXPECT_EQ(four.inner.d_out(), 9u);
  EXPECT_EQ(four.outer.d_out(), 1u);
}

TEST(KanLayer, ZeroSplineWeightIsSiluWeightedSum) {
  KanLayer layer = random_layer(5, 3, 26);
  layer.w_s().fill(0.0);
  Rng rng(27);
  const Tensor x = oracle::random_tensor({7, 5}, rng, -2, 2);
  const Tensor expect = matmul(elementwise_apply(x, silu), layer.w_b());
  EXPECT_LT(oracle::max_abs_diff(kan_forward(layer, x, Mode::inference).y, expect), 1e-12);
}
