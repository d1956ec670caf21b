#include "kanvis/gradcheck.hpp"

#include "kanvis/nn.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace kanvis {

bool GradcheckReport::passed() const noexcept {
  return std::all_of(groups.begin(), groups.end(), [&](const auto& g) { return g.max_rel_error < tolerance; });
}

double max_relative_error(std::span<const double> analytic, std::span<const double> numeric, double floor) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

GradcheckReport gradcheck(const ModelSpec& spec, const GradcheckOptions& options) {
  Model model(spec);
  model.initialize(options.seed);
  model.pin_masks(options.all_deactivated);

  Rng rng = derive_stream(options.seed, "gradcheck", "batch");
  Shape shape = spec.input_shape();
  shape.insert(shape.begin(), options.batch);
  Tensor x(shape);
  const bool regression = is_regression(spec.arch);
  for (auto& v : x.data()) {
    v = regression ? spec.domain_min + (spec.domain_max - spec.domain_min) * rng.uniform() : rng.uniform();
  }
  std::vector<int> labels(options.batch);
  Tensor targets({options.batch, 1});
  for (std::size_t i = 0; i < options.batch; ++i) {
    labels[i] = static_cast<int>(rng.below(spec.classes));
    targets[i] = rng.normal();
  }

  auto loss_of = [&](const Tensor& out) {
    return regression ? mse_loss(out, targets) : softmax_cross_entropy(out, labels);
  };
  // Regularizer values do not depend on gradients, so a throwaway pass works.
  auto total_loss = [&](const Tensor& input) {
    double l = loss_of(model.forward(input, Mode::training)).loss;
    const auto r = model.regularize(options.lambda_smooth, options.lambda_l1, false);
    return l + r.smooth + r.l1;
  };

  model.zero_grad();
  const Tensor out = model.forward(x, Mode::training);
  const Tensor dx = model.backward(loss_of(out).grad);
  model.regularize(options.lambda_smooth, options.lambda_l1, false);

  GradcheckReport report{to_string(spec.arch), options.tolerance, {}};
  const double h = options.step;
  auto check = [&](const std::string& name, Tensor& value, const Tensor& analytic) {
    std::vector<double> numeric(value.size());
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      value[i] = saved + h;
      const double up = total_loss(x);
      value[i] = saved - h;
      const double down = total_loss(x);
      value[i] = saved;
      numeric[i] = (up - down) / (2.0 * h);
    }
    report.groups.push_back({name, value.size(), max_relative_error(analytic.data(), numeric, options.floor)});
  };

  // Snapshot first: regularize() in the probes keeps adding into the grads.
  auto params = model.parameters();
  std::vector<Tensor> analytic;
  for (const auto& p : params) analytic.push_back(*p.grad);
  for (std::size_t i = 0; i < params.size(); ++i) check(params[i].name, *params[i].value, analytic[i]);
  check("input", x, dx);
  return report;
}

}  // namespace kanvis
