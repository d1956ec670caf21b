#pragma once

#include "kanvis/tensor.hpp"

#include <array>
#include <span>
#include <vector>

namespace kanvis {

/// Uniform B-spline basis on [x_min, x_max] with `grid_size` intervals and
/// polynomial degree `order`. The knot vector continues the uniform spacing
/// for `order` extra knots on each side, so there are grid_size + order basis
/// functions and they sum to one everywhere on the domain.
///
/// Inputs outside the domain are clamped before evaluation.
class SplineBasis {
 public:
  static constexpr int kMaxOrder = 5;

  SplineBasis(int grid_size = 5, int order = 3, double x_min = -1.0, double x_max = 1.0);

  int grid_size() const noexcept { return grid_size_; }
  int order() const noexcept { return order_; }
  std::size_t n_basis() const noexcept { return static_cast<std::size_t>(grid_size_ + order_); }
  double x_min() const noexcept { return x_min_; }
  double x_max() const noexcept { return x_max_; }
  double spacing() const noexcept { return h_; }
  const std::vector<double>& knots() const noexcept { return knots_; }

  double clamp(double x) const noexcept;

  /// The order + 1 possibly-nonzero basis functions at a point, and their
  /// derivatives. values[d][r] is the d-th derivative of basis `first + r`.
  struct Local {
    std::size_t first = 0;
    std::array<std::array<double, kMaxOrder + 1>, kMaxOrder + 1> values{};
  };
  /// `max_derivative` may exceed the order; higher derivatives are zero.
  Local eval_local(double x, int max_derivative = 0) const;

  /// Fast path for the hot loops: writes the order + 1 nonzero values at
  /// clamp(x) (and their first derivatives when `d1` is given) and returns the
  /// index of the first one.
  std::size_t eval_nonzero(double x, double* values, double* d1 = nullptr) const noexcept;

  /// Dense basis values (or their `derivative`-th derivative) at clamp(x).
  void eval(double x, std::span<double> out, int derivative = 0) const;
  std::vector<double> eval(double x, int derivative = 0) const;

  /// Greville abscissae: coefficients that make the spline reproduce f(x) = x.
  std::vector<double> greville() const;

  friend bool operator==(const SplineBasis& a, const SplineBasis& b) {
    return a.grid_size_ == b.grid_size_ && a.order_ == b.order_ && a.x_min_ == b.x_min_ && a.x_max_ == b.x_max_;
  }

 private:
  int grid_size_;
  int order_;
  double x_min_;
  double x_max_;
  double h_;
  std::vector<double> knots_;
};

double spline_eval(const SplineBasis& basis, std::span<const double> c, double x);
double spline_d1(const SplineBasis& basis, std::span<const double> c, double x);
double spline_d2(const SplineBasis& basis, std::span<const double> c, double x);

/// Straight line through (x_min, S(x_min)) and (x_max, S(x_max)).
struct Chord {
  double slope = 0.0;
  double intercept = 0.0;
};
Chord chord_line(const SplineBasis& basis, std::span<const double> c);

/// M[i][j] = integral over the domain of B_i''(x) B_j''(x) dx.
class SmoothnessGram {
 public:
  explicit SmoothnessGram(const SplineBasis& basis);

  std::size_t size() const noexcept { return n_; }
  const Tensor& matrix() const noexcept { return m_; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return m_[i * n_ + j]; }

  /// c^T M c
  double quadratic(std::span<const double> c) const;
  /// grad += scale * M c
  void accumulate_product(std::span<const double> c, double scale, std::span<double> grad) const;

 private:
  std::size_t n_;
  Tensor m_;
};

SmoothnessGram smoothness_gram(const SplineBasis& basis);

struct SmoothnessPenalty {
  double value = 0.0;
  std::vector<double> gradient;
};
/// lambda * c^T M c and its gradient 2 lambda M c.
SmoothnessPenalty smoothness_penalty(const SmoothnessGram& gram, std::span<const double> c, double lambda);
SmoothnessPenalty smoothness_penalty(const SplineBasis& basis, std::span<const double> c, double lambda);

/// n-point Gauss-Legendre rule on [-1, 1].
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};
QuadratureRule gauss_legendre(int n);

}  // namespace kanvis
