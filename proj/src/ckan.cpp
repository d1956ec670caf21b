#include "kanvis/ckan.hpp"

#include "kanvis/errors.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace kanvis {

namespace {

std::uint64_t next_layer_id() {
  // Disjoint from the KAN layer ids.
  static std::atomic<std::uint64_t> counter{1ULL << 62};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

void check_image(const Tensor& x, std::size_t channels, const char* what) {
  if (x.rank() != 4 || x.dim(1) != channels) {
    throw ShapeError(std::string(what) + " expects [batch," + std::to_string(channels) + ",H,W], got " +
                     shape_str(x.shape()));
  }
}

}  // namespace

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (stride == 0) throw std::invalid_argument("convolution stride must be positive");
  if (kernel == 0 || kernel > in + 2 * padding) {
    throw ShapeError("kernel " + std::to_string(kernel) + " does not fit input extent " + std::to_string(in) +
                     " with padding " + std::to_string(padding));
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

Conv2dForward conv2d_forward(const Tensor& w, const Tensor& bias, const Tensor& x, std::size_t stride,
                             std::size_t padding) {
  if (w.rank() != 4) throw ShapeError("conv kernel must be [out,in,kh,kw], got " + shape_str(w.shape()));
  const std::size_t out_ch = w.dim(0);
  const std::size_t in_ch = w.dim(1);
  const std::size_t kh = w.dim(2);
  const std::size_t kw = w.dim(3);
  check_image(x, in_ch, "conv2d");
  if (bias.size() != out_ch) throw ShapeError("conv bias must have " + std::to_string(out_ch) + " entries");
  const std::size_t batch = x.dim(0);
  const std::size_t H = x.dim(2);
  const std::size_t W = x.dim(3);
  const std::size_t oh = conv_output_extent(H, kh, stride, padding);
  const std::size_t ow = conv_output_extent(W, kw, stride, padding);
  const std::size_t patch = in_ch * kh * kw;
  const std::size_t pixels = oh * ow;

  Conv2dForward out;
  out.cache.x_shape = x.shape();
  out.cache.stride = stride;
  out.cache.padding = padding;
  out.cache.cols = Tensor({batch, patch, pixels});
  out.y = Tensor({batch, out_ch, oh, ow});

  const auto pad = static_cast<std::ptrdiff_t>(padding);
  for (std::size_t b = 0; b < batch; ++b) {
    double* cols = out.cache.cols.raw() + b * patch * pixels;
    const double* img = x.raw() + b * in_ch * H * W;
    for (std::size_t c = 0; c < in_ch; ++c) {
      for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx) {
          double* row = cols + ((c * kh + ky) * kw + kx) * pixels;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - pad;
              const bool valid = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(H) &&
                                 ix < static_cast<std::ptrdiff_t>(W);
              row[oy * ow + ox] = valid ? img[(c * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)] : 0.0;
            }
          }
        }
      }
    }
    double* y = out.y.raw() + b * out_ch * pixels;
    for (std::size_t o = 0; o < out_ch; ++o) {
      for (std::size_t q = 0; q < pixels; ++q) y[o * pixels + q] = bias[o];
    }
    gemm(Transpose::no, Transpose::no, out_ch, pixels, patch, 1.0, w.raw(), cols, 1.0, y);
  }
  return out;
}

Conv2dGrads conv2d_backward(const Tensor& w, const Conv2dCache& cache, const Tensor& dy) {
  const std::size_t out_ch = w.dim(0);
  const std::size_t in_ch = w.dim(1);
  const std::size_t kh = w.dim(2);
  const std::size_t kw = w.dim(3);
  if (cache.x_shape.size() != 4 || cache.x_shape[1] != in_ch) throw std::invalid_argument("conv cache does not match kernel");
  const std::size_t batch = cache.x_shape[0];
  const std::size_t H = cache.x_shape[2];
  const std::size_t W = cache.x_shape[3];
  const std::size_t oh = conv_output_extent(H, kh, cache.stride, cache.padding);
  const std::size_t ow = conv_output_extent(W, kw, cache.stride, cache.padding);
  const std::size_t patch = in_ch * kh * kw;
  const std::size_t pixels = oh * ow;
  if (dy.shape() != Shape{batch, out_ch, oh, ow}) {
    throw ShapeError("conv upstream gradient must be " + shape_str({batch, out_ch, oh, ow}) + ", got " +
                     shape_str(dy.shape()));
  }

  Conv2dGrads g{Tensor(w.shape()), Tensor({out_ch}), Tensor(cache.x_shape)};
  std::vector<double> dcols(patch * pixels);
  const auto pad = static_cast<std::ptrdiff_t>(cache.padding);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* dyb = dy.raw() + b * out_ch * pixels;
    const double* cols = cache.cols.raw() + b * patch * pixels;
    for (std::size_t o = 0; o < out_ch; ++o) {
      double s = 0.0;
      for (std::size_t q = 0; q < pixels; ++q) s += dyb[o * pixels + q];
      g.db[o] += s;
    }
    gemm(Transpose::no, Transpose::yes, out_ch, patch, pixels, 1.0, dyb, cols, 1.0, g.dw.raw());
    gemm(Transpose::yes, Transpose::no, patch, pixels, out_ch, 1.0, w.raw(), dyb, 0.0, dcols.data());
    double* dimg = g.dx.raw() + b * in_ch * H * W;
    for (std::size_t c = 0; c < in_ch; ++c) {
      for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const double* row = dcols.data() + ((c * kh + ky) * kw + kx) * pixels;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * cache.stride + ky) - pad;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * cache.stride + kx) - pad;
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
              dimg[(c * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)] += row[oy * ow + ox];
            }
          }
        }
      }
    }
  }
  return g;
}

CkanLayer::CkanLayer(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, SplineBasis basis,
                     Options options)
    : in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      options_(options),
      basis_(basis),
      gram_(std::make_shared<const SmoothnessGram>(basis)),
      w_({out_channels, in_channels, kernel, kernel}),
      b_({out_channels}),
      c_act_({out_channels, options.functions, basis.n_basis()}),
      w_b_act_({out_channels, options.functions}, 1.0),
      w_k_({out_channels, options.functions}, 1.0 / static_cast<double>(options.functions ? options.functions : 1)),
      id_(next_layer_id()) {
  if (in_channels == 0 || out_channels == 0 || kernel == 0) throw std::invalid_argument("CKAN extents must be positive");
  if (options.functions == 0) throw std::invalid_argument("CKAN needs at least one activation function per channel");
  if (options.stride == 0) throw std::invalid_argument("convolution stride must be positive");
  set_deactivation_p(options.deactivation_p);
}

void CkanLayer::initialize(Rng& rng) {
  const double fan_in = static_cast<double>(in_channels_ * kernel_ * kernel_);
  const double w_sd = std::sqrt(2.0 / fan_in);
  for (auto& v : w_.data()) v = rng.normal(0.0, w_sd);
  b_.fill(0.0);
  const double c_sd = 0.1 / std::sqrt(static_cast<double>(basis_.n_basis()));
  for (auto& v : c_act_.data()) v = rng.normal(0.0, c_sd);
  w_b_act_.fill(1.0);
  w_k_.fill(1.0 / static_cast<double>(options_.functions));
}

void CkanLayer::set_deactivation_p(double p) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw std::invalid_argument("deactivation probability must lie in [0,1], got " + std::to_string(p));
  }
  options_.deactivation_p = p;
}

namespace {

struct ChannelEndpoints {
  std::vector<double> lo;  // [out_ch * K]
  std::vector<double> hi;
  std::vector<double> basis_lo;
  std::vector<double> basis_hi;
};

ChannelEndpoints channel_endpoints(const CkanLayer& layer) {
  const auto& basis = layer.basis();
  const std::size_t nb = basis.n_basis();
  const std::size_t n = layer.out_channels() * layer.functions();
  ChannelEndpoints ep{std::vector<double>(n), std::vector<double>(n), basis.eval(basis.x_min()),
                      basis.eval(basis.x_max())};
  for (std::size_t f = 0; f < n; ++f) {
    const double* c = layer.c_act().raw() + f * nb;
    for (std::size_t k = 0; k < nb; ++k) {
      ep.lo[f] += c[k] * ep.basis_lo[k];
      ep.hi[f] += c[k] * ep.basis_hi[k];
    }
  }
  return ep;
}

}  // namespace

CkanActivationForward ckan_activation_forward(const CkanLayer& layer, Tensor y_in, Mode mode, Rng* rng,
                                              const DeactivationMask* pinned) {
  const std::size_t out_ch = layer.out_channels();
  const std::size_t K = layer.functions();
  check_image(y_in, out_ch, "CKAN activation");
  CkanActivationForward out;
  out.cache.layer_id = layer.id();
  out.cache.y = std::move(y_in);
  const Tensor& y = out.cache.y;
  if (mode == Mode::training) {
    if (pinned) {
      if (pinned->rows != out_ch || pinned->cols != K) throw ShapeError("pinned CKAN mask has wrong extents");
      out.cache.mask = *pinned;
    } else {
      if (!rng) throw std::invalid_argument("training-mode CKAN forward needs an Rng");
      out.cache.mask = DeactivationMask::draw(out_ch, K, layer.deactivation_p(), *rng);
    }
  } else {
    out.cache.mask = DeactivationMask::none(out_ch, K);
  }
  const auto& mask = out.cache.mask;

  const auto& basis = layer.basis();
  const std::size_t nb = basis.n_basis();
  const int p = basis.order();
  const double lo = basis.x_min();
  const double width = basis.x_max() - lo;
  const auto ep = channel_endpoints(layer);
  const bool use_silu = layer.silu_path();
  const std::size_t batch = y.dim(0);
  const std::size_t pixels = y.dim(2) * y.dim(3);

  const double* cact = layer.c_act().raw();
  const double* wb = layer.w_b_act().raw();
  const double* wk = layer.w_k().raw();
  out.z = Tensor(y.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < out_ch; ++o) {
      const double* src = y.raw() + (b * out_ch + o) * pixels;
      double* dst = out.z.raw() + (b * out_ch + o) * pixels;
      for (std::size_t q = 0; q < pixels; ++q) {
        const double v = src[q];
        const double s = use_silu ? silu(v) : 0.0;
        double val[SplineBasis::kMaxOrder + 1];
        const std::size_t first = basis.eval_nonzero(v, val);
        const double u = (basis.clamp(v) - lo) / width;
        double z = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
          const std::size_t f = o * K + k;
          double spline = 0.0;
          if (mask(o, k)) {
            spline = ep.lo[f] + u * (ep.hi[f] - ep.lo[f]);
          } else {
            const double* c = cact + f * nb + first;
            for (int r = 0; r <= p; ++r) spline += c[r] * val[r];
          }
          z += wk[f] * (wb[f] * s + spline);
        }
        dst[q] = z;
      }
    }
  }
  return out;
}

CkanActivationGrads ckan_activation_backward(const CkanLayer& layer, const CkanActivationCache& cache,
                                             const Tensor& dz) {
  if (cache.layer_id != layer.id()) throw std::invalid_argument("CKAN backward called with a cache from another layer");
  const std::size_t out_ch = layer.out_channels();
  const std::size_t K = layer.functions();
  if (cache.mask.rows != out_ch || cache.mask.cols != K) throw std::invalid_argument("CKAN cache does not match layer");
  if (dz.shape() != cache.y.shape()) {
    throw ShapeError("CKAN upstream gradient must be " + shape_str(cache.y.shape()) + ", got " + shape_str(dz.shape()));
  }
  const auto& y = cache.y;
  const auto& mask = cache.mask;
  const auto& basis = layer.basis();
  const std::size_t nb = basis.n_basis();
  const int p = basis.order();
  const double lo = basis.x_min();
  const double hi = basis.x_max();
  const double width = hi - lo;
  const auto ep = channel_endpoints(layer);
  const bool use_silu = layer.silu_path();
  const std::size_t batch = y.dim(0);
  const std::size_t pixels = y.dim(2) * y.dim(3);

  CkanActivationGrads g{Tensor(layer.c_act().shape()), Tensor(layer.w_b_act().shape()), Tensor(layer.w_k().shape()),
                        Tensor(y.shape())};
  // Masked functions collect their chord weights here and expand once at the end.
  std::vector<double> lo_acc(out_ch * K, 0.0);
  std::vector<double> hi_acc(out_ch * K, 0.0);

  const double* cact = layer.c_act().raw();
  const double* wb = layer.w_b_act().raw();
  const double* wk = layer.w_k().raw();
  double* dc_act = g.dc_act.raw();
  double* dw_b = g.dw_b_act.raw();
  double* dw_k = g.dw_k.raw();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < out_ch; ++o) {
      const std::size_t base = (b * out_ch + o) * pixels;
      const double* src = y.raw() + base;
      const double* up_src = dz.raw() + base;
      double* dst = g.dy.raw() + base;
      for (std::size_t q = 0; q < pixels; ++q) {
        const double v = src[q];
        const double up = up_src[q];
        double s = 0.0;
        double ds = 0.0;
        if (use_silu) {
          const double sg = sigmoid(v);
          s = v * sg;
          ds = sg * (1.0 + v * (1.0 - sg));
        }
        const double inside = (v >= lo && v <= hi) ? 1.0 : 0.0;
        double val[SplineBasis::kMaxOrder + 1];
        double der[SplineBasis::kMaxOrder + 1];
        const std::size_t first = basis.eval_nonzero(v, val, der);
        const double u = (basis.clamp(v) - lo) / width;
        double dv = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
          const std::size_t f = o * K + k;
          double spline = 0.0;
          double slope = 0.0;
          const bool masked = mask(o, k);
          if (masked) {
            spline = ep.lo[f] + u * (ep.hi[f] - ep.lo[f]);
            slope = (ep.hi[f] - ep.lo[f]) / width;
          } else {
            const double* c = cact + f * nb + first;
            for (int r = 0; r <= p; ++r) {
              spline += c[r] * val[r];
              slope += c[r] * der[r];
            }
          }
          dw_k[f] += up * (wb[f] * s + spline);
          const double dphi = up * wk[f];
          dw_b[f] += dphi * s;
          if (masked) {
            lo_acc[f] += dphi * (1.0 - u);
            hi_acc[f] += dphi * u;
          } else {
            double* dc = dc_act + f * nb + first;
            for (int r = 0; r <= p; ++r) dc[r] += dphi * val[r];
          }
          dv += dphi * (wb[f] * ds + inside * slope);
        }
        dst[q] = dv;
      }
    }
  }
  for (std::size_t f = 0; f < out_ch * K; ++f) {
    if (lo_acc[f] == 0.0 && hi_acc[f] == 0.0) continue;
    double* dc = g.dc_act.raw() + f * nb;
    for (std::size_t k = 0; k < nb; ++k) dc[k] += lo_acc[f] * ep.basis_lo[k] + hi_acc[f] * ep.basis_hi[k];
  }
  if (!use_silu) g.dw_b_act.fill(0.0);
  return g;
}

CkanForward ckan_forward(const CkanLayer& layer, const Tensor& x, Mode mode, Rng* rng, const DeactivationMask* pinned) {
  auto conv = conv2d_forward(layer.w(), layer.b(), x, layer.stride(), layer.padding());
  auto act = ckan_activation_forward(layer, std::move(conv.y), mode, rng, pinned);
  return CkanForward{std::move(act.z), CkanCache{std::move(conv.cache), std::move(act.cache)}};
}

CkanGrads ckan_backward(const CkanLayer& layer, const CkanCache& cache, const Tensor& dz) {
  auto act = ckan_activation_backward(layer, cache.act, dz);
  auto conv = conv2d_backward(layer.w(), cache.conv, act.dy);
  return CkanGrads{std::move(conv.dw), std::move(conv.db), std::move(act.dc_act), std::move(act.dw_b_act),
                   std::move(act.dw_k), std::move(conv.dx)};
}

}  // namespace kanvis
