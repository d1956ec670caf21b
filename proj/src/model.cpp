#include "kanvis/model.hpp"

#include "kanvis/errors.hpp"
#include "kanvis/penalty.hpp"

#include <cmath>
#include <stdexcept>

namespace kanvis {
namespace {

void add_into(Tensor& acc, const Tensor& g) {
  auto a = acc.data();
  auto b = g.data();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

template <typename T>
const T& require(const std::optional<T>& cache, const std::string& name) {
  if (!cache) throw std::logic_error(name + ": backward called before forward");
  return *cache;
}

}  // namespace

ConvModule::ConvModule(std::string name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                       std::size_t stride, std::size_t padding)
    : Module(std::move(name)),
      stride_(stride),
      padding_(padding),
      w_({out_ch, in_ch, kernel, kernel}),
      b_({out_ch}),
      dw_(w_.shape()),
      db_(b_.shape()) {}

Tensor ConvModule::forward(const Tensor& x, Mode) {
  auto out = conv2d_forward(w_, b_, x, stride_, padding_);
  cache_ = std::move(out.cache);
  return std::move(out.y);
}

Tensor ConvModule::backward(const Tensor& dy) {
  auto g = conv2d_backward(w_, require(cache_, name()), dy);
  add_into(dw_, g.dw);
  add_into(db_, g.db);
  return std::move(g.dx);
}

std::vector<ParamRef> ConvModule::parameters() {
  return {{name() + ".W", &w_, &dw_, nullptr}, {name() + ".b", &b_, &db_, nullptr}};
}

void ConvModule::initialize(std::uint64_t seed) {
  Rng rng = derive_stream(seed, name(), "init");
  const double fan_in = static_cast<double>(w_.dim(1) * w_.dim(2) * w_.dim(3));
  const double sd = std::sqrt(2.0 / fan_in);
  for (auto& v : w_.data()) v = rng.normal(0.0, sd);
  b_.fill(0.0);
}

Tensor ReluModule::forward(const Tensor& x, Mode) {
  x_ = x;
  return relu_forward(x);
}

Tensor ReluModule::backward(const Tensor& dy) { return relu_backward(x_, dy); }

Tensor MaxPoolModule::forward(const Tensor& x, Mode) {
  auto out = maxpool2x2_forward(x);
  Tensor y = out.y;
  cache_ = std::move(out);
  return y;
}

Tensor MaxPoolModule::backward(const Tensor& dy) { return maxpool2x2_backward(require(cache_, name()), dy); }

Tensor FlattenModule::forward(const Tensor& x, Mode) {
  if (x.rank() < 2) throw ShapeError("flatten expects a batch extent, got " + shape_str(x.shape()));
  shape_ = x.shape();
  return x.reshaped({x.dim(0), x.size() / x.dim(0)});
}

Tensor FlattenModule::backward(const Tensor& dy) { return dy.reshaped(shape_); }

LinearModule::LinearModule(std::string name, std::size_t d_in, std::size_t d_out, bool bias)
    : Module(std::move(name)), layer_(d_in, d_out, bias), dw_(layer_.w().shape()), db_(layer_.b().shape()) {}

Tensor LinearModule::forward(const Tensor& x, Mode) {
  x_ = x;
  return linear_forward(layer_, x);
}

Tensor LinearModule::backward(const Tensor& dy) {
  auto g = linear_backward(layer_, x_, dy);
  add_into(dw_, g.dw);
  if (layer_.has_bias()) add_into(db_, g.db);
  return std::move(g.dx);
}

std::vector<ParamRef> LinearModule::parameters() {
  std::vector<ParamRef> out{{name() + ".W", &layer_.w(), &dw_, nullptr}};
  if (layer_.has_bias()) out.push_back({name() + ".b", &layer_.b(), &db_, nullptr});
  return out;
}

void LinearModule::initialize(std::uint64_t seed) {
  Rng rng = derive_stream(seed, name(), "init");
  layer_.initialize(rng);
}

KanModule::KanModule(std::string name, std::size_t d_in, std::size_t d_out, const SplineBasis& basis)
    : Module(std::move(name)),
      layer_(d_in, d_out, basis),
      dc_(layer_.c().shape()),
      dw_b_(layer_.w_b().shape()),
      dw_s_(layer_.w_s().shape()) {}

Tensor KanModule::forward(const Tensor& x, Mode mode) {
  auto out = kan_forward(layer_, x, mode, &rng_, pinned_ ? &*pinned_ : nullptr);
  cache_ = std::move(out.cache);
  return std::move(out.y);
}

Tensor KanModule::backward(const Tensor& dy) {
  auto g = kan_backward(layer_, require(cache_, name()), dy);
  add_into(dc_, g.dc);
  add_into(dw_b_, g.dw_b);
  add_into(dw_s_, g.dw_s);
  return std::move(g.dx);
}

std::vector<ParamRef> KanModule::parameters() {
  return {{name() + ".c", &layer_.c(), &dc_, &layer_.gram()},
          {name() + ".w_b", &layer_.w_b(), &dw_b_, nullptr},
          {name() + ".w_s", &layer_.w_s(), &dw_s_, nullptr}};
}

void KanModule::initialize(std::uint64_t seed) {
  Rng rng = derive_stream(seed, name(), "init");
  layer_.initialize(rng);
  rng_ = derive_stream(seed, name(), "mask");
}

void KanModule::pin_mask(std::optional<bool> all_deactivated) {
  if (!all_deactivated) {
    pinned_.reset();
    return;
  }
  pinned_ = *all_deactivated ? DeactivationMask::all(layer_.d_in(), layer_.d_out())
                             : DeactivationMask::none(layer_.d_in(), layer_.d_out());
}

CkanModule::CkanModule(std::string name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                       const SplineBasis& basis, CkanLayer::Options options)
    : Module(std::move(name)),
      layer_(in_ch, out_ch, kernel, basis, options),
      dw_(layer_.w().shape()),
      db_(layer_.b().shape()),
      dc_act_(layer_.c_act().shape()),
      dw_b_act_(layer_.w_b_act().shape()),
      dw_k_(layer_.w_k().shape()) {}

Tensor CkanModule::forward(const Tensor& x, Mode mode) {
  auto out = ckan_forward(layer_, x, mode, &rng_, pinned_ ? &*pinned_ : nullptr);
  cache_ = std::move(out.cache);
  return std::move(out.z);
}

Tensor CkanModule::backward(const Tensor& dy) {
  auto g = ckan_backward(layer_, require(cache_, name()), dy);
  add_into(dw_, g.dw);
  add_into(db_, g.db);
  add_into(dc_act_, g.dc_act);
  add_into(dw_b_act_, g.dw_b_act);
  add_into(dw_k_, g.dw_k);
  return std::move(g.dx);
}

std::vector<ParamRef> CkanModule::parameters() {
  std::vector<ParamRef> out{{name() + ".W", &layer_.w(), &dw_, nullptr},
                            {name() + ".b", &layer_.b(), &db_, nullptr},
                            {name() + ".c_act", &layer_.c_act(), &dc_act_, &layer_.gram()}};
  if (layer_.silu_path()) out.push_back({name() + ".w_b_act", &layer_.w_b_act(), &dw_b_act_, nullptr});
  out.push_back({name() + ".w_k", &layer_.w_k(), &dw_k_, nullptr});
  return out;
}

void CkanModule::initialize(std::uint64_t seed) {
  Rng rng = derive_stream(seed, name(), "init");
  layer_.initialize(rng);
  rng_ = derive_stream(seed, name(), "mask");
}

void CkanModule::pin_mask(std::optional<bool> all_deactivated) {
  if (!all_deactivated) {
    pinned_.reset();
    return;
  }
  const auto rows = layer_.out_channels();
  const auto cols = layer_.functions();
  pinned_ = *all_deactivated ? DeactivationMask::all(rows, cols) : DeactivationMask::none(rows, cols);
}

std::string to_string(Architecture arch) {
  switch (arch) {
    case Architecture::cnn_mlp: return "cnn_mlp";
    case Architecture::ckan_cnn_mlp: return "ckan_cnn_mlp";
    case Architecture::cnn_kan: return "cnn_kan";
    case Architecture::edge_kan: return "edge_kan";
    case Architecture::edge_linear: return "edge_linear";
    case Architecture::ka_theorem: return "ka_theorem";
  }
  return "unknown";
}

Architecture parse_architecture(const std::string& tag) {
  for (auto a : {Architecture::cnn_mlp, Architecture::ckan_cnn_mlp, Architecture::cnn_kan, Architecture::edge_kan,
                 Architecture::edge_linear, Architecture::ka_theorem}) {
    if (to_string(a) == tag) return a;
  }
  throw std::invalid_argument("unknown architecture '" + tag + "'");
}

bool is_image_model(Architecture arch) noexcept {
  return arch == Architecture::cnn_mlp || arch == Architecture::ckan_cnn_mlp || arch == Architecture::cnn_kan;
}

bool is_regression(Architecture arch) noexcept { return arch == Architecture::ka_theorem; }

void ModelSpec::validate() const {
  auto positive = [](std::size_t v, const char* path) {
    if (v == 0) throw ConfigError(path, "must be positive");
  };
  if (is_image_model(arch)) {
    positive(in_channels, "model.in_channels");
    positive(height, "model.height");
    positive(width, "model.width");
    positive(conv1_channels, "model.conv1_channels");
    positive(conv2_channels, "model.conv2_channels");
    if (kernel == 0 || kernel % 2 == 0) throw ConfigError("model.kernel", "must be odd");
    if (height < 4 || width < 4) throw ConfigError("model.height", "two 2x2 poolings need at least 4x4 input");
    positive(ckan_functions, "model.ckan_functions");
  }
  if (arch == Architecture::ka_theorem) positive(ka_dim, "model.ka_dim");
  if (!is_regression(arch) && classes < 2) throw ConfigError("model.classes", "need at least 2 classes");
  if (grid == 0) throw ConfigError("model.grid", "must be positive");
  if (order == 0 || order > SplineBasis::kMaxOrder) {
    throw ConfigError("model.order", "must lie in [1, " + std::to_string(SplineBasis::kMaxOrder) + "]");
  }
  if (!(domain_min < domain_max) || !std::isfinite(domain_min) || !std::isfinite(domain_max)) {
    throw ConfigError("model.domain_min", "domain must be finite with min < max");
  }
}

Shape ModelSpec::input_shape() const {
  switch (arch) {
    case Architecture::edge_kan:
    case Architecture::edge_linear: return {1, 1, 4};
    case Architecture::ka_theorem: return {ka_dim};
    default: return {in_channels, height, width};
  }
}

ModelSpec tiny_spec(Architecture arch) {
  ModelSpec s;
  s.arch = arch;
  s.height = 8;
  s.width = 8;
  s.conv1_channels = 2;
  s.conv2_channels = 3;
  s.classes = is_regression(arch) ? 1 : (is_image_model(arch) ? 3 : 2);
  s.ka_dim = 2;
  return s;
}

Model::Model(ModelSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  const SplineBasis basis = spec_.basis();
  const auto pad = spec_.kernel / 2;
  auto add = [&](std::unique_ptr<Module> m) { modules_.push_back(std::move(m)); };

  auto head_linear = [&](std::size_t features) {
    if (spec_.hidden > 0) {
      add(std::make_unique<LinearModule>("fc1", features, spec_.hidden, true));
      add(std::make_unique<ReluModule>("relu_fc"));
      add(std::make_unique<LinearModule>("fc2", spec_.hidden, spec_.classes, true));
    } else {
      add(std::make_unique<LinearModule>("fc", features, spec_.classes, true));
    }
  };
  auto head_kan = [&](std::size_t features) {
    if (spec_.hidden > 0) {
      add(std::make_unique<KanModule>("kan1", features, spec_.hidden, basis));
      add(std::make_unique<KanModule>("kan2", spec_.hidden, spec_.classes, basis));
    } else {
      add(std::make_unique<KanModule>("kan", features, spec_.classes, basis));
    }
  };

  switch (spec_.arch) {
    case Architecture::cnn_mlp:
    case Architecture::ckan_cnn_mlp:
    case Architecture::cnn_kan: {
      if (spec_.arch == Architecture::ckan_cnn_mlp) {
        CkanLayer::Options opt;
        opt.functions = spec_.ckan_functions;
        opt.padding = pad;
        opt.silu_path = spec_.ckan_silu;
        add(std::make_unique<CkanModule>("ckan1", spec_.in_channels, spec_.conv1_channels, spec_.kernel, basis, opt));
      } else {
        add(std::make_unique<ConvModule>("conv1", spec_.in_channels, spec_.conv1_channels, spec_.kernel, 1, pad));
        add(std::make_unique<ReluModule>("relu1"));
      }
      add(std::make_unique<MaxPoolModule>("pool1"));
      add(std::make_unique<ConvModule>("conv2", spec_.conv1_channels, spec_.conv2_channels, spec_.kernel, 1, pad));
      add(std::make_unique<ReluModule>("relu2"));
      add(std::make_unique<MaxPoolModule>("pool2"));
      add(std::make_unique<FlattenModule>("flatten"));
      const std::size_t features = spec_.conv2_channels * (spec_.height / 4) * (spec_.width / 4);
      if (spec_.arch == Architecture::cnn_kan) {
        head_kan(features);
      } else {
        head_linear(features);
      }
      break;
    }
    case Architecture::edge_kan:
      add(std::make_unique<FlattenModule>("flatten"));
      add(std::make_unique<KanModule>("kan", 4, 2, basis));
      break;
    case Architecture::edge_linear:
      add(std::make_unique<FlattenModule>("flatten"));
      add(std::make_unique<LinearModule>("fc", 4, 2, false));
      break;
    case Architecture::ka_theorem: {
      const std::size_t d = spec_.ka_dim;
      add(std::make_unique<KanModule>("inner", d, 2 * d + 1, basis));
      add(std::make_unique<KanModule>("outer", 2 * d + 1, 1, basis));
      break;
    }
  }
}

void Model::initialize(std::uint64_t seed) {
  for (auto& m : modules_) m->initialize(seed);
  zero_grad();
}

Tensor Model::forward(const Tensor& x, Mode mode) {
  Tensor h = x;
  for (auto& m : modules_) h = m->forward(h, mode);
  return h;
}

Tensor Model::backward(const Tensor& dy) {
  Tensor g = dy;
  for (auto it = modules_.rbegin(); it != modules_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

void Model::zero_grad() {
  for (auto& p : parameters()) p.grad->fill(0.0);
}

std::vector<ParamRef> Model::parameters() {
  std::vector<ParamRef> out;
  for (auto& m : modules_) {
    for (auto& p : m->parameters()) out.push_back(std::move(p));
  }
  return out;
}

std::size_t Model::parameter_count() {
  std::size_t n = 0;
  for (auto& p : parameters()) n += p.value->size();
  return n;
}

Regularization Model::regularize(double lambda_smooth, double lambda_l1, bool l1_splines_only) {
  if (lambda_smooth < 0.0 || lambda_l1 < 0.0) throw std::invalid_argument("regularization weights must be >= 0");
  Regularization r;
  for (auto& p : parameters()) {
    if (p.gram && lambda_smooth > 0.0) r.smooth += smoothness_term(*p.gram, *p.value, lambda_smooth, p.grad);
    if (lambda_l1 > 0.0 && (!l1_splines_only || p.gram)) r.l1 += l1_term(*p.value, lambda_l1, p.grad);
  }
  return r;
}

void Model::set_deactivation_p(double p) {
  for (auto& m : modules_) m->set_deactivation_p(p);
}

void Model::pin_masks(std::optional<bool> all_deactivated) {
  for (auto& m : modules_) m->pin_mask(all_deactivated);
}

std::uint64_t Model::rng_draws() const noexcept {
  std::uint64_t n = 0;
  for (const auto& m : modules_) n += m->rng_draws();
  return n;
}

}  // namespace kanvis
