#pragma once

#include "kanvis/rng.hpp"
#include "kanvis/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace kanvis::oracle {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = lo + (hi - lo) * rng.uniform();
  return t;
}

/// Triple-loop reference product, deliberately independent of gemm().
inline Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  }
  return c;
}

inline Tensor naive_transpose(const Tensor& a) {
  Tensor t({a.dim(1), a.dim(0)});
  for (std::size_t i = 0; i < a.dim(0); ++i) {
    for (std::size_t j = 0; j < a.dim(1); ++j) t[j * a.dim(0) + i] = a[i * a.dim(1) + j];
  }
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Central-difference gradient of a scalar function of `x`, perturbing x in place.
inline Tensor numeric_gradient(Tensor& x, const std::function<double()>& f, double h = 1e-5) {
  Tensor g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f();
    x[i] = saved - h;
    const double down = f();
    x[i] = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// max |a - n| / max(|a|, |n|, floor)
inline double rel_error(const Tensor& analytic, const Tensor& numeric, double floor = 1e-4) {
  double m = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double d = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    m = std::max(m, std::abs(analytic[i] - numeric[i]) / d);
  }
  return m;
}

/// sum(r * y): a scalar loss whose gradient w.r.t. y is r.
inline double weighted_sum(const Tensor& y, const Tensor& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

}  // namespace kanvis::oracle
