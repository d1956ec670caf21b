#include "kanvis/spline.hpp"

#include "kanvis/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace kanvis {

SplineBasis::SplineBasis(int grid_size, int order, double x_min, double x_max)
    : grid_size_(grid_size), order_(order), x_min_(x_min), x_max_(x_max) {
  if (grid_size < 1) throw std::invalid_argument("spline grid size must be positive, got " + std::to_string(grid_size));
  if (order < 1 || order > kMaxOrder) {
    throw std::invalid_argument("spline order must lie in [1," + std::to_string(kMaxOrder) + "], got " +
                                std::to_string(order));
  }
  if (!(x_max > x_min) || !std::isfinite(x_min) || !std::isfinite(x_max)) {
    throw std::invalid_argument("spline domain must be a finite interval with x_min < x_max");
  }
  h_ = (x_max - x_min) / grid_size;
  knots_.resize(static_cast<std::size_t>(grid_size + 2 * order + 1));
  for (std::size_t j = 0; j < knots_.size(); ++j) {
    knots_[j] = x_min + (static_cast<double>(j) - order) * h_;
  }
}

double SplineBasis::clamp(double x) const noexcept { return std::clamp(x, x_min_, x_max_); }

std::size_t SplineBasis::eval_nonzero(double x, double* values, double* d1) const noexcept {
  const int p = order_;
  const double s = (clamp(x) - x_min_) / h_;
  const int cell = std::clamp(static_cast<int>(std::floor(s)), 0, grid_size_ - 1);
  const double t = s - cell;
  if (p == 3) {
    const double w = 1.0 - t;
    const double t2 = t * t;
    values[0] = w * w * w / 6.0;
    values[1] = (3.0 * t2 * t - 6.0 * t2 + 4.0) / 6.0;
    values[2] = (-3.0 * t2 * t + 3.0 * t2 + 3.0 * t + 1.0) / 6.0;
    values[3] = t2 * t / 6.0;
    if (d1) {
      const double inv_h = 1.0 / h_;
      d1[0] = -0.5 * w * w * inv_h;
      d1[1] = (1.5 * t2 - 2.0 * t) * inv_h;
      d1[2] = (-1.5 * t2 + t + 0.5) * inv_h;
      d1[3] = 0.5 * t2 * inv_h;
    }
    return static_cast<std::size_t>(cell);
  }
  // Cox-de Boor on uniform knots: every denominator is the current degree.
  static constexpr double inv[] = {0.0, 1.0, 1.0 / 2, 1.0 / 3, 1.0 / 4, 1.0 / 5};
  static_assert(std::size(inv) == kMaxOrder + 1);
  double n[kMaxOrder + 1];
  double prev[kMaxOrder + 1];
  n[0] = 1.0;
  for (int j = 1; j <= p; ++j) {
    if (j == p && d1) std::copy_n(n, p, prev);
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double temp = n[r] * inv[j];
      n[r] = saved + (r + 1 - t) * temp;
      saved = (t + j - r - 1) * temp;
    }
    n[j] = saved;
  }
  std::copy_n(n, p + 1, values);
  if (d1) {
    // p / (t_{i+p} - t_i) = 1 / h on uniform knots.
    const double scale = 1.0 / h_;
    for (int r = 0; r <= p; ++r) d1[r] = scale * ((r > 0 ? prev[r - 1] : 0.0) - (r < p ? prev[r] : 0.0));
  }
  return static_cast<std::size_t>(cell);
}

SplineBasis::Local SplineBasis::eval_local(double x, int max_derivative) const {
  const int p = order_;
  const double u = clamp(x);
  int span = p + static_cast<int>(std::floor((u - x_min_) / h_));
  span = std::clamp(span, p, grid_size_ + p - 1);

  // Piegl & Tiller, The NURBS Book, algorithm A2.3.
  const auto& U = knots_;
  std::array<std::array<double, kMaxOrder + 1>, kMaxOrder + 1> ndu{};
  std::array<double, kMaxOrder + 1> left{};
  std::array<double, kMaxOrder + 1> right{};
  ndu[0][0] = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = u - U[span + 1 - j];
    right[j] = U[span + j] - u;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      ndu[j][r] = right[r + 1] + left[j - r];
      const double temp = ndu[r][j - 1] / ndu[j][r];
      ndu[r][j] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    ndu[j][j] = saved;
  }

  Local out;
  out.first = static_cast<std::size_t>(span - p);
  for (int j = 0; j <= p; ++j) out.values[0][j] = ndu[j][p];

  const int n = std::min(max_derivative, p);
  std::array<std::array<double, kMaxOrder + 1>, 2> a{};
  for (int r = 0; r <= p; ++r) {
    int s1 = 0;
    int s2 = 1;
    a[0][0] = 1.0;
    for (int k = 1; k <= n; ++k) {
      double d = 0.0;
      const int rk = r - k;
      const int pk = p - k;
      if (r >= k) {
        a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
        d = a[s2][0] * ndu[rk][pk];
      }
      const int j1 = rk >= -1 ? 1 : -rk;
      const int j2 = (r - 1 <= pk) ? k - 1 : p - r;
      for (int j = j1; j <= j2; ++j) {
        a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][rk + j];
        d += a[s2][j] * ndu[rk + j][pk];
      }
      if (r <= pk) {
        a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
        d += a[s2][k] * ndu[r][pk];
      }
      out.values[k][r] = d;
      std::swap(s1, s2);
    }
  }
  double factor = p;
  for (int k = 1; k <= n; ++k) {
    for (int j = 0; j <= p; ++j) out.values[k][j] *= factor;
    factor *= (p - k);
  }
  return out;
}

void SplineBasis::eval(double x, std::span<double> out, int derivative) const {
  if (out.size() != n_basis()) {
    throw ShapeError("basis output buffer has " + std::to_string(out.size()) + " slots, need " +
                     std::to_string(n_basis()));
  }
  std::fill(out.begin(), out.end(), 0.0);
  if (derivative > order_) return;
  const auto local = eval_local(x, derivative);
  for (int r = 0; r <= order_; ++r) out[local.first + r] = local.values[derivative][r];
}

std::vector<double> SplineBasis::eval(double x, int derivative) const {
  std::vector<double> out(n_basis());
  eval(x, out, derivative);
  return out;
}

std::vector<double> SplineBasis::greville() const {
  std::vector<double> g(n_basis());
  for (std::size_t i = 0; i < g.size(); ++i) {
    double s = 0.0;
    for (int j = 1; j <= order_; ++j) s += knots_[i + j];
    g[i] = s / order_;
  }
  return g;
}

namespace {

double spline_derivative(const SplineBasis& basis, std::span<const double> c, double x, int derivative) {
  if (c.size() != basis.n_basis()) {
    throw ShapeError("spline has " + std::to_string(c.size()) + " coefficients, basis expects " +
                     std::to_string(basis.n_basis()));
  }
  if (derivative > basis.order()) return 0.0;
  const auto local = basis.eval_local(x, derivative);
  double s = 0.0;
  for (int r = 0; r <= basis.order(); ++r) s += c[local.first + r] * local.values[derivative][r];
  return s;
}

}  // namespace

double spline_eval(const SplineBasis& basis, std::span<const double> c, double x) {
  return spline_derivative(basis, c, x, 0);
}
double spline_d1(const SplineBasis& basis, std::span<const double> c, double x) {
  return spline_derivative(basis, c, x, 1);
}
double spline_d2(const SplineBasis& basis, std::span<const double> c, double x) {
  return spline_derivative(basis, c, x, 2);
}

Chord chord_line(const SplineBasis& basis, std::span<const double> c) {
  const double lo = spline_eval(basis, c, basis.x_min());
  const double hi = spline_eval(basis, c, basis.x_max());
  Chord chord;
  chord.slope = (hi - lo) / (basis.x_max() - basis.x_min());
  chord.intercept = lo - chord.slope * basis.x_min();
  return chord;
}

QuadratureRule gauss_legendre(int n) {
  if (n < 1) throw std::invalid_argument("quadrature needs at least one node");
  QuadratureRule rule;
  rule.nodes.resize(static_cast<std::size_t>(n));
  rule.weights.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0;
      double p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = pk;
      }
      if (n == 1) p0 = 1.0;
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    rule.nodes[static_cast<std::size_t>(i)] = x;
    rule.weights[static_cast<std::size_t>(i)] = 2.0 / ((1.0 - x * x) * dp * dp);
  }
  return rule;
}

SmoothnessGram::SmoothnessGram(const SplineBasis& basis) : n_(basis.n_basis()), m_({basis.n_basis(), basis.n_basis()}) {
  const int p = basis.order();
  if (p < 2) return;
  // B'' is a degree p-2 polynomial on each knot interval; p-1 nodes integrate
  // the degree 2(p-2) products exactly.
  const auto rule = gauss_legendre(p - 1);
  const double half = 0.5 * basis.spacing();
  for (int interval = 0; interval < basis.grid_size(); ++interval) {
    const double mid = basis.x_min() + (interval + 0.5) * basis.spacing();
    for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
      const auto local = basis.eval_local(mid + half * rule.nodes[q], 2);
      const double w = half * rule.weights[q];
      for (int r = 0; r <= p; ++r) {
        for (int s = 0; s <= p; ++s) {
          m_[(local.first + r) * n_ + local.first + s] += w * local.values[2][r] * local.values[2][s];
        }
      }
    }
  }
}

double SmoothnessGram::quadratic(std::span<const double> c) const {
  if (c.size() != n_) throw ShapeError("smoothness form expects " + std::to_string(n_) + " coefficients");
  double total = 0.0;
  for (std::size_t i = 0; i < n_; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n_; ++j) row += m_[i * n_ + j] * c[j];
    total += c[i] * row;
  }
  return total;
}

void SmoothnessGram::accumulate_product(std::span<const double> c, double scale, std::span<double> grad) const {
  if (c.size() != n_ || grad.size() != n_) {
    throw ShapeError("smoothness form expects " + std::to_string(n_) + " coefficients");
  }
  for (std::size_t i = 0; i < n_; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n_; ++j) row += m_[i * n_ + j] * c[j];
    grad[i] += scale * row;
  }
}

SmoothnessGram smoothness_gram(const SplineBasis& basis) { return SmoothnessGram(basis); }

SmoothnessPenalty smoothness_penalty(const SmoothnessGram& gram, std::span<const double> c, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("smoothness strength must be non-negative");
  SmoothnessPenalty out;
  out.gradient.assign(c.size(), 0.0);
  if (lambda == 0.0) {
    if (c.size() != gram.size()) throw ShapeError("smoothness form expects " + std::to_string(gram.size()) + " coefficients");
    return out;
  }
  out.value = lambda * gram.quadratic(c);
  gram.accumulate_product(c, 2.0 * lambda, out.gradient);
  return out;
}

SmoothnessPenalty smoothness_penalty(const SplineBasis& basis, std::span<const double> c, double lambda) {
  return smoothness_penalty(SmoothnessGram(basis), c, lambda);
}

}  // namespace kanvis
