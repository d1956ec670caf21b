#pragma once

#include "kanvis/rng.hpp"
#include "kanvis/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace kanvis {

/// y = x W + b with W [d_in, d_out].
class LinearLayer {
 public:
  LinearLayer(std::size_t d_in, std::size_t d_out, bool bias = true);

  /// W ~ Normal(0, 1/d_in), b = 0.
  void initialize(Rng& rng);

  std::size_t d_in() const noexcept { return w_.dim(0); }
  std::size_t d_out() const noexcept { return w_.dim(1); }
  bool has_bias() const noexcept { return has_bias_; }
  Tensor& w() noexcept { return w_; }
  const Tensor& w() const noexcept { return w_; }
  Tensor& b() noexcept { return b_; }
  const Tensor& b() const noexcept { return b_; }

 private:
  Tensor w_;
  Tensor b_;
  bool has_bias_;
};

struct LinearGrads {
  Tensor dw;
  Tensor db;  // zeros when the layer has no bias
  Tensor dx;
};

Tensor linear_forward(const LinearLayer& layer, const Tensor& x);
LinearGrads linear_backward(const LinearLayer& layer, const Tensor& x, const Tensor& dy);

Tensor relu_forward(const Tensor& x);
/// Passes gradient where x > 0.
Tensor relu_backward(const Tensor& x, const Tensor& dy);

struct MaxPoolForward {
  Tensor y;
  Shape x_shape;
  std::vector<std::size_t> argmax;  // flat input offset of each output element
};

/// 2x2 window, stride 2 over [batch, ch, H, W]; odd trailing rows/columns are
/// dropped. Ties go to the first maximal element in row-major window order.
MaxPoolForward maxpool2x2_forward(const Tensor& x);
Tensor maxpool2x2_backward(const MaxPoolForward& cache, const Tensor& dy);

struct LossResult {
  double loss = 0.0;
  Tensor grad;
};

/// Mean over the batch of -log softmax(logits)[label].
LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);
/// Mean over the batch of the summed squared error.
LossResult mse_loss(const Tensor& prediction, const Tensor& target);

/// Index of the largest logit per row; ties resolve to the lowest index.
std::vector<int> argmax_rows(const Tensor& logits);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  bool operator==(const AdamConfig&) const = default;
};

/// Bias-corrected Adam. Moments are allocated on the first step and bound to
/// the parameter shapes seen then.
class AdamState {
 public:
  explicit AdamState(AdamConfig config = {});

  void step(std::span<Tensor* const> params, std::span<const Tensor* const> grads);

  std::uint64_t steps() const noexcept { return t_; }
  const AdamConfig& config() const noexcept { return config_; }
  const std::vector<Tensor>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor>& second_moments() const noexcept { return v_; }

 private:
  AdamConfig config_;
  std::uint64_t t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace kanvis
