#pragma once

#include "kanvis/spline.hpp"
#include "kanvis/tensor.hpp"

namespace kanvis {

/// lambda * sum |theta|. When `grad` is given, adds lambda * sign(theta)
/// (zero at exactly zero).
double l1_term(const Tensor& param, double lambda, Tensor* grad = nullptr);

/// lambda * sum over rows r of c_r^T M c_r, where `coeffs` holds consecutive
/// rows of gram.size() spline coefficients. When `grad` is given, adds
/// 2 lambda M c_r row by row.
double smoothness_term(const SmoothnessGram& gram, const Tensor& coeffs, double lambda, Tensor* grad = nullptr);

}  // namespace kanvis
