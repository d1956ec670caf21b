#include "kanvis/penalty.hpp"

#include "kanvis/errors.hpp"

#include <cmath>
#include <stdexcept>

namespace kanvis {

double l1_term(const Tensor& param, double lambda, Tensor* grad) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("L1 strength must be non-negative");
  if (grad && grad->shape() != param.shape()) throw ShapeError("L1 gradient buffer shape mismatch");
  if (lambda == 0.0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double v = param[i];
    s += std::abs(v);
    if (grad) (*grad)[i] += v > 0.0 ? lambda : (v < 0.0 ? -lambda : 0.0);
  }
  return lambda * s;
}

double smoothness_term(const SmoothnessGram& gram, const Tensor& coeffs, double lambda, Tensor* grad) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("smoothness strength must be non-negative");
  const std::size_t n = gram.size();
  if (coeffs.size() % n != 0) {
    throw ShapeError("coefficient tensor " + shape_str(coeffs.shape()) + " is not a stack of " + std::to_string(n) +
                     "-coefficient splines");
  }
  if (grad && grad->shape() != coeffs.shape()) throw ShapeError("smoothness gradient buffer shape mismatch");
  if (lambda == 0.0) return 0.0;
  double total = 0.0;
  for (std::size_t off = 0; off < coeffs.size(); off += n) {
    std::span<const double> c(coeffs.raw() + off, n);
    total += gram.quadratic(c);
    if (grad) gram.accumulate_product(c, 2.0 * lambda, std::span<double>(grad->raw() + off, n));
  }
  return lambda * total;
}

}  // namespace kanvis
