#pragma once

#include "kanvis/ckan.hpp"
#include "kanvis/kan.hpp"
#include "kanvis/nn.hpp"
#include "kanvis/rng.hpp"
#include "kanvis/tensor.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace kanvis {

/// A trainable tensor and its gradient accumulator. `gram` is set for spline
/// coefficient tensors laid out as consecutive rows of gram->size().
struct ParamRef {
  std::string name;
  Tensor* value = nullptr;
  Tensor* grad = nullptr;
  const SmoothnessGram* gram = nullptr;
};

class Module {
 public:
  explicit Module(std::string name) : name_(std::move(name)) {}
  virtual ~Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  const std::string& name() const noexcept { return name_; }

  virtual Tensor forward(const Tensor& x, Mode mode) = 0;
  /// Gradient w.r.t. the input of the last forward; parameter gradients are
  /// added to the accumulators.
  virtual Tensor backward(const Tensor& dy) = 0;
  virtual std::vector<ParamRef> parameters() { return {}; }
  /// Draws parameters from the (seed, name, "init") stream and resets any
  /// mask stream to (seed, name, "mask").
  virtual void initialize(std::uint64_t /*seed*/) {}

  /// Spline modules only.
  virtual void set_deactivation_p(double /*p*/) {}
  virtual void pin_mask(std::optional<bool> /*all_deactivated*/) {}
  virtual std::uint64_t rng_draws() const noexcept { return 0; }

 private:
  std::string name_;
};

class ConvModule final : public Module {
 public:
  ConvModule(std::string name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride,
             std::size_t padding);
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<ParamRef> parameters() override;
  void initialize(std::uint64_t seed) override;

  Tensor& w() noexcept { return w_; }
  Tensor& b() noexcept { return b_; }

 private:
  std::size_t stride_;
  std::size_t padding_;
  Tensor w_, b_, dw_, db_;
  std::optional<Conv2dCache> cache_;
};

class ReluModule final : public Module {
 public:
  using Module::Module;
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& dy) override;

 private:
  Tensor x_;
};

class MaxPoolModule final : public Module {
 public:
  using Module::Module;
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& dy) override;

 private:
  std::optional<MaxPoolForward> cache_;
};

class FlattenModule final : public Module {
 public:
  using Module::Module;
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& dy) override;

 private:
  Shape shape_;
};

class LinearModule final : public Module {
 public:
  LinearModule(std::string name, std::size_t d_in, std::size_t d_out, bool bias);
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<ParamRef> parameters() override;
  void initialize(std::uint64_t seed) override;

  LinearLayer& layer() noexcept { return layer_; }

 private:
  LinearLayer layer_;
  Tensor dw_, db_, x_;
};

class KanModule final : public Module {
 public:
  KanModule(std::string name, std::size_t d_in, std::size_t d_out, const SplineBasis& basis);
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<ParamRef> parameters() override;
  void initialize(std::uint64_t seed) override;
  void set_deactivation_p(double p) override { layer_.set_deactivation_p(p); }
  void pin_mask(std::optional<bool> all_deactivated) override;
  std::uint64_t rng_draws() const noexcept override { return rng_.draws(); }

  KanLayer& layer() noexcept { return layer_; }

 private:
  KanLayer layer_;
  Tensor dc_, dw_b_, dw_s_;
  Rng rng_;
  std::optional<DeactivationMask> pinned_;
  std::optional<KanCache> cache_;
};

class CkanModule final : public Module {
 public:
  CkanModule(std::string name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel, const SplineBasis& basis,
             CkanLayer::Options options);
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<ParamRef> parameters() override;
  void initialize(std::uint64_t seed) override;
  void set_deactivation_p(double p) override { layer_.set_deactivation_p(p); }
  void pin_mask(std::optional<bool> all_deactivated) override;
  std::uint64_t rng_draws() const noexcept override { return rng_.draws(); }

  CkanLayer& layer() noexcept { return layer_; }

 private:
  CkanLayer layer_;
  Tensor dw_, db_, dc_act_, dw_b_act_, dw_k_;
  Rng rng_;
  std::optional<DeactivationMask> pinned_;
  std::optional<CkanCache> cache_;
};

enum class Architecture { cnn_mlp, ckan_cnn_mlp, cnn_kan, edge_kan, edge_linear, ka_theorem };

std::string to_string(Architecture arch);
/// Throws std::invalid_argument for unknown tags.
Architecture parse_architecture(const std::string& tag);
/// True for the three CIFAR image models.
bool is_image_model(Architecture arch) noexcept;
bool is_regression(Architecture arch) noexcept;

struct ModelSpec {
  Architecture arch = Architecture::cnn_mlp;
  std::size_t in_channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t classes = 10;
  std::size_t conv1_channels = 32;
  std::size_t conv2_channels = 64;
  std::size_t kernel = 3;
  std::size_t hidden = 0;  ///< optional hidden width before the classifier head
  std::size_t grid = 5;
  std::size_t order = 3;
  double domain_min = -1.0;
  double domain_max = 1.0;
  std::size_t ckan_functions = 1;
  bool ckan_silu = true;
  std::size_t ka_dim = 1;

  SplineBasis basis() const { return SplineBasis(grid, order, domain_min, domain_max); }
  /// Throws ConfigError naming the offending field.
  void validate() const;
  /// Shape of one input item, without the batch extent.
  Shape input_shape() const;

  bool operator==(const ModelSpec&) const = default;
};

/// Reduced widths for finite-difference checks: 3x8x8 input, 2 and 3
/// channels, 3 classes.
ModelSpec tiny_spec(Architecture arch);

struct Regularization {
  double smooth = 0.0;
  double l1 = 0.0;
};

class Model {
 public:
  explicit Model(ModelSpec spec);

  const ModelSpec& spec() const noexcept { return spec_; }

  void initialize(std::uint64_t seed);
  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& dy);
  void zero_grad();
  std::vector<ParamRef> parameters();
  std::size_t parameter_count();

  /// Adds lambda_smooth * sum c^T M c over every spline and lambda_l1 * sum
  /// |theta| (spline coefficients only when `l1_splines_only`) to the loss,
  /// accumulating their gradients.
  Regularization regularize(double lambda_smooth, double lambda_l1, bool l1_splines_only);

  void set_deactivation_p(double p);
  /// nullopt restores random masks; true/false pins all/none deactivated.
  void pin_masks(std::optional<bool> all_deactivated);
  /// Total randomness consumed by mask streams.
  std::uint64_t rng_draws() const noexcept;

  std::vector<std::unique_ptr<Module>>& modules() noexcept { return modules_; }

 private:
  ModelSpec spec_;
  std::vector<std::unique_ptr<Module>> modules_;
};

}  // namespace kanvis
