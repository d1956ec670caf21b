#include "kanvis/kan.hpp"

#include "kanvis/errors.hpp"
#include "kanvis/penalty.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <string>

namespace kanvis {

namespace {

std::uint64_t next_layer_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

void check_probability(double p) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw std::invalid_argument("deactivation probability must lie in [0,1], got " + std::to_string(p));
  }
}

}  // namespace

DeactivationMask DeactivationMask::none(std::size_t rows, std::size_t cols) {
  return DeactivationMask{rows, cols, std::vector<std::uint8_t>(rows * cols, 0)};
}

DeactivationMask DeactivationMask::all(std::size_t rows, std::size_t cols) {
  return DeactivationMask{rows, cols, std::vector<std::uint8_t>(rows * cols, 1)};
}

DeactivationMask DeactivationMask::draw(std::size_t rows, std::size_t cols, double p, Rng& rng) {
  check_probability(p);
  DeactivationMask m = none(rows, cols);
  for (auto& bit : m.bits) bit = rng.bernoulli(p) ? 1 : 0;
  return m;
}

std::size_t DeactivationMask::count() const noexcept {
  std::size_t n = 0;
  for (auto b : bits) n += b;
  return n;
}

KanLayer::KanLayer(std::size_t d_in, std::size_t d_out, SplineBasis basis, double deactivation_p)
    : d_in_(d_in),
      d_out_(d_out),
      basis_(basis),
      gram_(std::make_shared<const SmoothnessGram>(basis)),
      p_(deactivation_p),
      c_({d_in, d_out, basis.n_basis()}),
      w_b_({d_in, d_out}, 1.0),
      w_s_({d_in, d_out}, 1.0),
      id_(next_layer_id()) {
  if (d_in == 0 || d_out == 0) throw std::invalid_argument("KAN layer extents must be positive");
  check_probability(deactivation_p);
}

void KanLayer::initialize(Rng& rng) {
  const double sd = 0.1 / std::sqrt(static_cast<double>(basis_.n_basis()));
  for (auto& v : c_.data()) v = rng.normal(0.0, sd);
  w_b_.fill(1.0);
  w_s_.fill(1.0);
}

void KanLayer::set_deactivation_p(double p) {
  check_probability(p);
  p_ = p;
}

namespace {

/// Effective spline weights w_s * c for active edges, laid out [(i,k), j].
Tensor active_weights(const KanLayer& layer, const DeactivationMask& mask) {
  const std::size_t nb = layer.basis().n_basis();
  const std::size_t d_in = layer.d_in();
  const std::size_t d_out = layer.d_out();
  Tensor w({d_in * nb, d_out});
  for (std::size_t i = 0; i < d_in; ++i) {
    for (std::size_t j = 0; j < d_out; ++j) {
      if (mask(i, j)) continue;
      const double ws = layer.w_s()[i * d_out + j];
      const double* c = layer.c().raw() + (i * d_out + j) * nb;
      for (std::size_t k = 0; k < nb; ++k) w[(i * nb + k) * d_out + j] = ws * c[k];
    }
  }
  return w;
}

/// Spline values at the two domain endpoints for every edge.
struct EndpointValues {
  Tensor lo;  // [d_in, d_out]
  Tensor hi;
  std::vector<double> basis_lo;
  std::vector<double> basis_hi;
};

EndpointValues endpoint_values(const KanLayer& layer) {
  const auto& basis = layer.basis();
  const std::size_t nb = basis.n_basis();
  EndpointValues ev{Tensor({layer.d_in(), layer.d_out()}), Tensor({layer.d_in(), layer.d_out()}),
                    basis.eval(basis.x_min()), basis.eval(basis.x_max())};
  for (std::size_t e = 0; e < layer.d_in() * layer.d_out(); ++e) {
    const double* c = layer.c().raw() + e * nb;
    double lo = 0.0;
    double hi = 0.0;
    for (std::size_t k = 0; k < nb; ++k) {
      lo += c[k] * ev.basis_lo[k];
      hi += c[k] * ev.basis_hi[k];
    }
    ev.lo[e] = lo;
    ev.hi[e] = hi;
  }
  return ev;
}

}  // namespace

KanForward kan_forward(const KanLayer& layer, const Tensor& x, Mode mode, Rng* rng, const DeactivationMask* pinned) {
  const std::size_t d_in = layer.d_in();
  const std::size_t d_out = layer.d_out();
  if (x.rank() != 2 || x.dim(1) != d_in) {
    throw ShapeError("KAN layer expects [batch," + std::to_string(d_in) + "], got " + shape_str(x.shape()));
  }
  const auto& basis = layer.basis();
  const std::size_t nb = basis.n_basis();
  const std::size_t batch = x.dim(0);

  KanForward out;
  KanCache& cache = out.cache;
  cache.layer_id = layer.id();
  cache.batch = batch;

  if (mode == Mode::training) {
    if (pinned) {
      if (pinned->rows != d_in || pinned->cols != d_out) throw ShapeError("pinned deactivation mask has wrong extents");
      cache.mask = *pinned;
    } else {
      if (!rng) throw std::invalid_argument("training-mode KAN forward needs an Rng");
      cache.mask = DeactivationMask::draw(d_in, d_out, layer.deactivation_p(), *rng);
    }
  } else {
    cache.mask = DeactivationMask::none(d_in, d_out);
  }

  cache.silu = Tensor({batch, d_in});
  cache.silu_grad = Tensor({batch, d_in});
  cache.basis = Tensor({batch, d_in * nb});
  cache.basis_d1 = Tensor({batch, d_in * nb});
  cache.inside = Tensor({batch, d_in});
  cache.position = Tensor({batch, d_in});
  const double lo = basis.x_min();
  const double hi = basis.x_max();
  const double width = hi - lo;
  const int p = basis.order();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < d_in; ++i) {
      const std::size_t bi = b * d_in + i;
      const double v = x[bi];
      cache.silu[bi] = silu(v);
      cache.silu_grad[bi] = silu_grad(v);
      cache.inside[bi] = (v >= lo && v <= hi) ? 1.0 : 0.0;
      cache.position[bi] = (basis.clamp(v) - lo) / width;
      double val[SplineBasis::kMaxOrder + 1];
      double der[SplineBasis::kMaxOrder + 1];
      const std::size_t off = b * d_in * nb + i * nb + basis.eval_nonzero(v, val, der);
      std::copy_n(val, p + 1, cache.basis.raw() + off);
      std::copy_n(der, p + 1, cache.basis_d1.raw() + off);
    }
  }

  out.y = Tensor({batch, d_out});
  gemm(Transpose::no, Transpose::no, batch, d_out, d_in, 1.0, cache.silu.raw(), layer.w_b().raw(), 0.0, out.y.raw());
  const Tensor weights = active_weights(layer, cache.mask);
  gemm(Transpose::no, Transpose::no, batch, d_out, d_in * nb, 1.0, cache.basis.raw(), weights.raw(), 1.0,
       out.y.raw());

  if (cache.mask.count() > 0) {
    // Deactivated edge: w_s * (S_lo + u * (S_hi - S_lo)), u the clamped position.
    const auto ev = endpoint_values(layer);
    Tensor rise({d_in, d_out});
    std::vector<double> offset(d_out, 0.0);
    for (std::size_t i = 0; i < d_in; ++i) {
      for (std::size_t j = 0; j < d_out; ++j) {
        if (!cache.mask(i, j)) continue;
        const std::size_t e = i * d_out + j;
        const double ws = layer.w_s()[e];
        rise[e] = ws * (ev.hi[e] - ev.lo[e]);
        offset[j] += ws * ev.lo[e];
      }
    }
    gemm(Transpose::no, Transpose::no, batch, d_out, d_in, 1.0, cache.position.raw(), rise.raw(), 1.0, out.y.raw());
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t j = 0; j < d_out; ++j) out.y[b * d_out + j] += offset[j];
    }
  }
  return out;
}

KanGrads kan_backward(const KanLayer& layer, const KanCache& cache, const Tensor& dy) {
  const std::size_t d_in = layer.d_in();
  const std::size_t d_out = layer.d_out();
  const std::size_t nb = layer.basis().n_basis();
  const std::size_t batch = cache.batch;
  if (cache.layer_id != layer.id()) throw std::invalid_argument("KAN backward called with a cache from another layer");
  if (cache.mask.rows != d_in || cache.mask.cols != d_out || cache.basis.size() != batch * d_in * nb) {
    throw std::invalid_argument("KAN backward cache does not match the layer shape");
  }
  if (dy.rank() != 2 || dy.dim(0) != batch || dy.dim(1) != d_out) {
    throw ShapeError("KAN upstream gradient must be [" + std::to_string(batch) + "," + std::to_string(d_out) +
                     "], got " + shape_str(dy.shape()));
  }

  KanGrads g;
  g.dw_b = matmul(cache.silu, dy, Transpose::yes, Transpose::no);
  g.dw_s = Tensor({d_in, d_out});
  g.dc = Tensor({d_in, d_out, nb});

  // [(i,k), j] = sum_b B_k(x_bi) dy_bj
  const Tensor basis_dy = matmul(cache.basis, dy, Transpose::yes, Transpose::no);
  for (std::size_t i = 0; i < d_in; ++i) {
    for (std::size_t j = 0; j < d_out; ++j) {
      if (cache.mask(i, j)) continue;
      const std::size_t e = i * d_out + j;
      const double ws = layer.w_s()[e];
      const double* c = layer.c().raw() + e * nb;
      double* dc = g.dc.raw() + e * nb;
      double acc = 0.0;
      for (std::size_t k = 0; k < nb; ++k) {
        const double gk = basis_dy[(i * nb + k) * d_out + j];
        dc[k] = ws * gk;
        acc += c[k] * gk;
      }
      g.dw_s[e] = acc;
    }
  }

  g.dx = Tensor({batch, d_in});
  // SiLU path.
  const Tensor dy_wb = matmul(dy, layer.w_b(), Transpose::no, Transpose::yes);
  // Active spline path: [b, (i,k)] = sum_j dy_bj w_s c_ijk.
  const Tensor weights = active_weights(layer, cache.mask);
  const Tensor dy_w = matmul(dy, weights, Transpose::no, Transpose::yes);
  Tensor spline_dx({batch, d_in});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < d_in; ++i) {
      const double* d1 = cache.basis_d1.raw() + b * d_in * nb + i * nb;
      const double* gw = dy_w.raw() + b * d_in * nb + i * nb;
      double acc = 0.0;
      for (std::size_t k = 0; k < nb; ++k) acc += d1[k] * gw[k];
      spline_dx[b * d_in + i] = acc;
    }
  }

  if (cache.mask.count() > 0) {
    const auto ev = endpoint_values(layer);
    const double width = layer.basis().x_max() - layer.basis().x_min();
    std::vector<double> col_sum(d_out, 0.0);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t j = 0; j < d_out; ++j) col_sum[j] += dy[b * d_out + j];
    }
    const Tensor pos_dy = matmul(cache.position, dy, Transpose::yes, Transpose::no);
    Tensor slope({d_in, d_out});
    for (std::size_t i = 0; i < d_in; ++i) {
      for (std::size_t j = 0; j < d_out; ++j) {
        if (!cache.mask(i, j)) continue;
        const std::size_t e = i * d_out + j;
        const double ws = layer.w_s()[e];
        const double s = col_sum[j];
        const double u = pos_dy[e];
        g.dw_s[e] = ev.lo[e] * s + (ev.hi[e] - ev.lo[e]) * u;
        double* dc = g.dc.raw() + e * nb;
        for (std::size_t k = 0; k < nb; ++k) {
          dc[k] = ws * (ev.basis_lo[k] * s + (ev.basis_hi[k] - ev.basis_lo[k]) * u);
        }
        slope[e] = ws * (ev.hi[e] - ev.lo[e]) / width;
      }
    }
    gemm(Transpose::no, Transpose::yes, batch, d_in, d_out, 1.0, dy.raw(), slope.raw(), 1.0, spline_dx.raw());
  }

  for (std::size_t bi = 0; bi < batch * d_in; ++bi) {
    g.dx[bi] = cache.silu_grad[bi] * dy_wb[bi] + cache.inside[bi] * spline_dx[bi];
  }
  return g;
}

KanPenalty l1_penalty(const KanLayer& layer, double lambda, bool splines_only) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("L1 strength must be non-negative");
  KanPenalty out{0.0, Tensor(layer.c().shape()), Tensor(layer.w_b().shape()), Tensor(layer.w_s().shape())};
  out.value += l1_term(layer.c(), lambda, &out.dc);
  if (!splines_only) {
    out.value += l1_term(layer.w_b(), lambda, &out.dw_b);
    out.value += l1_term(layer.w_s(), lambda, &out.dw_s);
  }
  return out;
}

KanPenalty smoothness_penalty(const KanLayer& layer, double lambda) {
  KanPenalty out{0.0, Tensor(layer.c().shape()), Tensor(layer.w_b().shape()), Tensor(layer.w_s().shape())};
  out.value = smoothness_term(layer.gram(), layer.c(), lambda, &out.dc);
  return out;
}

KaTheoremNetwork ka_theorem_network(std::size_t d, const SplineBasis& basis) {
  if (d == 0) throw std::invalid_argument("KA network input dimension must be at least 1");
  return KaTheoremNetwork{KanLayer(d, 2 * d + 1, basis), KanLayer(2 * d + 1, 1, basis)};
}

}  // namespace kanvis
