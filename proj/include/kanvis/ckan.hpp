#pragma once

#include "kanvis/kan.hpp"
#include "kanvis/rng.hpp"
#include "kanvis/spline.hpp"
#include "kanvis/tensor.hpp"

#include <cstdint>
#include <memory>

namespace kanvis {

/// floor((in + 2 padding - kernel) / stride) + 1; throws when the kernel
/// does not fit the padded input.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding);

struct Conv2dCache {
  Shape x_shape;
  Tensor cols;  // [batch, in_ch * kh * kw, out_h * out_w]
  std::size_t stride = 1;
  std::size_t padding = 0;
};

struct Conv2dForward {
  Tensor y;
  Conv2dCache cache;
};

/// Cross-correlation of x [batch, in_ch, H, W] with w [out_ch, in_ch, kh, kw]
/// plus bias [out_ch], lowered to one GEMM per sample.
Conv2dForward conv2d_forward(const Tensor& w, const Tensor& bias, const Tensor& x, std::size_t stride = 1,
                             std::size_t padding = 0);

struct Conv2dGrads {
  Tensor dw;
  Tensor db;
  Tensor dx;
};

Conv2dGrads conv2d_backward(const Tensor& w, const Conv2dCache& cache, const Tensor& dy);

/// Convolution followed by a learnable per-channel activation
///   z_o = sum_k w_k[o,k] * phi_ok(y_o),
///   phi_ok(t) = w_b_act[o,k] * silu(t) + sum_n c_act[o,k,n] B_n(t),
/// applied elementwise to every position of output channel o.
class CkanLayer {
 public:
  struct Options {
    std::size_t functions = 1;  ///< K activations per output channel
    std::size_t stride = 1;
    std::size_t padding = 0;
    double deactivation_p = 0.0;
    bool silu_path = true;  ///< false gives the spline-only activation
  };

  CkanLayer(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, SplineBasis basis,
            Options options);
  CkanLayer(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, SplineBasis basis = SplineBasis{})
      : CkanLayer(in_channels, out_channels, kernel, basis, Options{}) {}

  /// He-normal kernels, zero bias, c_act ~ Normal(0, 0.1 / sqrt(n_basis)),
  /// w_b_act = 1, w_k = 1 / K.
  void initialize(Rng& rng);

  std::size_t in_channels() const noexcept { return in_channels_; }
  std::size_t out_channels() const noexcept { return out_channels_; }
  std::size_t kernel() const noexcept { return kernel_; }
  std::size_t functions() const noexcept { return options_.functions; }
  std::size_t stride() const noexcept { return options_.stride; }
  std::size_t padding() const noexcept { return options_.padding; }
  bool silu_path() const noexcept { return options_.silu_path; }
  double deactivation_p() const noexcept { return options_.deactivation_p; }
  void set_deactivation_p(double p);
  const SplineBasis& basis() const noexcept { return basis_; }
  const SmoothnessGram& gram() const noexcept { return *gram_; }
  std::uint64_t id() const noexcept { return id_; }

  Tensor& w() noexcept { return w_; }
  const Tensor& w() const noexcept { return w_; }
  Tensor& b() noexcept { return b_; }
  const Tensor& b() const noexcept { return b_; }
  Tensor& c_act() noexcept { return c_act_; }
  const Tensor& c_act() const noexcept { return c_act_; }
  Tensor& w_b_act() noexcept { return w_b_act_; }
  const Tensor& w_b_act() const noexcept { return w_b_act_; }
  Tensor& w_k() noexcept { return w_k_; }
  const Tensor& w_k() const noexcept { return w_k_; }

 private:
  std::size_t in_channels_;
  std::size_t out_channels_;
  std::size_t kernel_;
  Options options_;
  SplineBasis basis_;
  std::shared_ptr<const SmoothnessGram> gram_;
  Tensor w_;
  Tensor b_;
  Tensor c_act_;    // [out_ch, K, n_basis]
  Tensor w_b_act_;  // [out_ch, K]
  Tensor w_k_;      // [out_ch, K]
  std::uint64_t id_;
};

struct CkanActivationCache {
  std::uint64_t layer_id = 0;
  Tensor y;
  DeactivationMask mask;  // [out_ch, K]
};

struct CkanActivationForward {
  Tensor z;
  CkanActivationCache cache;
};

CkanActivationForward ckan_activation_forward(const CkanLayer& layer, Tensor y, Mode mode, Rng* rng = nullptr,
                                              const DeactivationMask* pinned = nullptr);

struct CkanActivationGrads {
  Tensor dc_act;
  Tensor dw_b_act;
  Tensor dw_k;
  Tensor dy;
};

CkanActivationGrads ckan_activation_backward(const CkanLayer& layer, const CkanActivationCache& cache,
                                             const Tensor& dz);

struct CkanCache {
  Conv2dCache conv;
  CkanActivationCache act;
};

struct CkanForward {
  Tensor z;
  CkanCache cache;
};

CkanForward ckan_forward(const CkanLayer& layer, const Tensor& x, Mode mode, Rng* rng = nullptr,
                         const DeactivationMask* pinned = nullptr);

struct CkanGrads {
  Tensor dw;
  Tensor db;
  Tensor dc_act;
  Tensor dw_b_act;
  Tensor dw_k;
  Tensor dx;
};

CkanGrads ckan_backward(const CkanLayer& layer, const CkanCache& cache, const Tensor& dz);

}  // namespace kanvis
