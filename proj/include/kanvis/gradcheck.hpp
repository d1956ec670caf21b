#pragma once

#include "kanvis/model.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace kanvis {

struct GradcheckOptions {
  double tolerance = 1e-5;
  double step = 1e-5;
  /// Relative errors use max(|analytic|, |numeric|, floor) as denominator so
  /// gradients at rounding-noise scale do not dominate.
  double floor = 1e-4;
  std::size_t batch = 4;
  std::uint64_t seed = 7;
  /// Pinned deactivation masks: false keeps every spline, true replaces every
  /// spline by its chord. nullopt draws masks with p = 0.
  std::optional<bool> all_deactivated = false;
  double lambda_smooth = 0.0;
  double lambda_l1 = 0.0;
};

struct GradcheckGroup {
  std::string name;
  std::size_t size = 0;
  double max_rel_error = 0.0;
};

struct GradcheckReport {
  std::string model;
  double tolerance = 0.0;
  std::vector<GradcheckGroup> groups;

  bool passed() const noexcept;
};

/// Compares every parameter gradient and the input gradient of `spec` with
/// central finite differences of the training loss on a fixed random batch.
GradcheckReport gradcheck(const ModelSpec& spec, const GradcheckOptions& options = {});

/// max over i of |a_i - n_i| / max(|a_i|, |n_i|, floor)
double max_relative_error(std::span<const double> analytic, std::span<const double> numeric, double floor);

}  // namespace kanvis
