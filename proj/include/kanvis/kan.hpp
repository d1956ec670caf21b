#pragma once

#include "kanvis/rng.hpp"
#include "kanvis/spline.hpp"
#include "kanvis/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

namespace kanvis {

enum class Mode { training, inference };

/// 1 / (1 + e^-x) without overflow for large |x|.
inline double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// x / (1 + e^-x)
inline double silu(double x) noexcept { return x * sigmoid(x); }

inline double silu_grad(double x) noexcept {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

/// One bit per (row, col) spline; a set bit swaps that spline for its chord
/// line in the forward pass.
struct DeactivationMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> bits;

  static DeactivationMask none(std::size_t rows, std::size_t cols);
  static DeactivationMask all(std::size_t rows, std::size_t cols);
  /// One Bernoulli(p) draw per bit, row-major.
  static DeactivationMask draw(std::size_t rows, std::size_t cols, double p, Rng& rng);

  bool operator()(std::size_t r, std::size_t c) const noexcept { return bits[r * cols + c] != 0; }
  std::size_t count() const noexcept;
};

/// A layer of d_in x d_out learnable edges. Edge (i, j) computes
///   phi(t) = w_b[i,j] * silu(t) + w_s[i,j] * S_ij(t),   S_ij(t) = sum_k c[i,j,k] B_k(t)
/// and output j sums phi over the inputs.
class KanLayer {
 public:
  KanLayer(std::size_t d_in, std::size_t d_out, SplineBasis basis = SplineBasis{}, double deactivation_p = 0.0);

  /// w_b = w_s = 1, c ~ Normal(0, 0.1 / sqrt(n_basis)).
  void initialize(Rng& rng);

  std::size_t d_in() const noexcept { return d_in_; }
  std::size_t d_out() const noexcept { return d_out_; }
  const SplineBasis& basis() const noexcept { return basis_; }
  const SmoothnessGram& gram() const noexcept { return *gram_; }
  std::size_t parameter_count() const noexcept { return d_in_ * d_out_ * (basis_.n_basis() + 2); }

  double deactivation_p() const noexcept { return p_; }
  void set_deactivation_p(double p);

  /// [d_in, d_out, n_basis]
  Tensor& c() noexcept { return c_; }
  const Tensor& c() const noexcept { return c_; }
  /// [d_in, d_out]
  Tensor& w_b() noexcept { return w_b_; }
  const Tensor& w_b() const noexcept { return w_b_; }
  Tensor& w_s() noexcept { return w_s_; }
  const Tensor& w_s() const noexcept { return w_s_; }

  /// Identifies the layer instance that produced a forward cache.
  std::uint64_t id() const noexcept { return id_; }

 private:
  std::size_t d_in_;
  std::size_t d_out_;
  SplineBasis basis_;
  std::shared_ptr<const SmoothnessGram> gram_;
  double p_;
  Tensor c_;
  Tensor w_b_;
  Tensor w_s_;
  std::uint64_t id_;
};

struct KanCache {
  std::uint64_t layer_id = 0;
  std::size_t batch = 0;
  Tensor silu;        // [batch, d_in]
  Tensor silu_grad;   // [batch, d_in]
  Tensor basis;       // [batch, d_in * n_basis]
  Tensor basis_d1;    // [batch, d_in * n_basis]
  Tensor inside;      // [batch, d_in], 1 where the clamp passes gradient
  Tensor position;    // [batch, d_in], (clamp(x) - x_min) / (x_max - x_min)
  DeactivationMask mask;
};

struct KanForward {
  Tensor y;
  KanCache cache;
};

/// Forward pass over x [batch, d_in]. Training mode draws a fresh mask from
/// `rng` (required) unless `pinned` is given; inference never touches `rng`
/// and leaves every spline active.
KanForward kan_forward(const KanLayer& layer, const Tensor& x, Mode mode, Rng* rng = nullptr,
                       const DeactivationMask* pinned = nullptr);

struct KanGrads {
  Tensor dc;
  Tensor dw_b;
  Tensor dw_s;
  Tensor dx;
};

KanGrads kan_backward(const KanLayer& layer, const KanCache& cache, const Tensor& dy);

struct KanPenalty {
  double value = 0.0;
  Tensor dc;
  Tensor dw_b;
  Tensor dw_s;
};

/// lambda * sum |theta| over c, w_b and w_s (c only when `splines_only`).
/// The subgradient at exactly zero is zero.
KanPenalty l1_penalty(const KanLayer& layer, double lambda, bool splines_only = false);
/// lambda * sum over edges of c_ij^T M c_ij.
KanPenalty smoothness_penalty(const KanLayer& layer, double lambda);

/// Two stacked layers d -> 2d+1 -> 1.
struct KaTheoremNetwork {
  KanLayer inner;
  KanLayer outer;
};
KaTheoremNetwork ka_theorem_network(std::size_t d, const SplineBasis& basis = SplineBasis{});

}  // namespace kanvis
