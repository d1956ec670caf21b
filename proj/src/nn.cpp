#include "kanvis/nn.hpp"

#include "kanvis/errors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace kanvis {

LinearLayer::LinearLayer(std::size_t d_in, std::size_t d_out, bool bias)
    : w_({d_in, d_out}), b_({d_out}), has_bias_(bias) {
  if (d_in == 0 || d_out == 0) throw std::invalid_argument("linear layer extents must be positive");
}

void LinearLayer::initialize(Rng& rng) {
  const double sd = std::sqrt(1.0 / static_cast<double>(d_in()));
  for (auto& v : w_.data()) v = rng.normal(0.0, sd);
  b_.fill(0.0);
}

Tensor linear_forward(const LinearLayer& layer, const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != layer.d_in()) {
    throw ShapeError("linear layer expects [batch," + std::to_string(layer.d_in()) + "], got " + shape_str(x.shape()));
  }
  Tensor y = matmul(x, layer.w());
  if (layer.has_bias()) {
    const std::size_t n = layer.d_out();
    for (std::size_t r = 0; r < x.dim(0); ++r) {
      for (std::size_t j = 0; j < n; ++j) y[r * n + j] += layer.b()[j];
    }
  }
  return y;
}

LinearGrads linear_backward(const LinearLayer& layer, const Tensor& x, const Tensor& dy) {
  if (dy.rank() != 2 || dy.dim(0) != x.dim(0) || dy.dim(1) != layer.d_out()) {
    throw ShapeError("linear upstream gradient shape " + shape_str(dy.shape()) + " does not match input " +
                     shape_str(x.shape()));
  }
  LinearGrads g;
  g.dw = matmul(x, dy, Transpose::yes, Transpose::no);
  g.db = layer.has_bias() ? reduce_sum(dy, 0) : Tensor({layer.d_out()});
  g.dx = matmul(dy, layer.w(), Transpose::no, Transpose::yes);
  return g;
}

Tensor relu_forward(const Tensor& x) {
  return elementwise_apply(x, [](double v) { return v > 0.0 ? v : 0.0; });
}

Tensor relu_backward(const Tensor& x, const Tensor& dy) {
  if (x.shape() != dy.shape()) throw ShapeError("relu gradient shape " + shape_str(dy.shape()) + " vs " + shape_str(x.shape()));
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
  return dx;
}

MaxPoolForward maxpool2x2_forward(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("maxpool expects [batch,ch,H,W], got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0) * x.dim(1);
  const std::size_t H = x.dim(2);
  const std::size_t W = x.dim(3);
  const std::size_t oh = H / 2;
  const std::size_t ow = W / 2;
  if (oh == 0 || ow == 0) throw ShapeError("maxpool input " + shape_str(x.shape()) + " is smaller than the window");
  MaxPoolForward out{Tensor({x.dim(0), x.dim(1), oh, ow}), x.shape(), std::vector<std::size_t>(n * oh * ow)};
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = p * H * W + (2 * oy) * W + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = p * H * W + (2 * oy + dy) * W + 2 * ox + dx;
            if (x[idx] > x[best]) best = idx;
          }
        }
        const std::size_t o = (p * oh + oy) * ow + ox;
        out.y[o] = x[best];
        out.argmax[o] = best;
      }
    }
  }
  return out;
}

Tensor maxpool2x2_backward(const MaxPoolForward& cache, const Tensor& dy) {
  if (dy.shape() != cache.y.shape()) {
    throw ShapeError("maxpool gradient shape " + shape_str(dy.shape()) + " vs " + shape_str(cache.y.shape()));
  }
  Tensor dx(cache.x_shape);
  for (std::size_t o = 0; o < dy.size(); ++o) dx[cache.argmax[o]] += dy[o];
  return dx;
}

LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("cross-entropy logits " + shape_str(logits.shape()) + " vs " + std::to_string(labels.size()) +
                     " labels");
  }
  const std::size_t batch = logits.dim(0);
  const std::size_t classes = logits.dim(1);
  LossResult out{0.0, Tensor(logits.shape())};
  if (batch == 0) return out;
  const double inv = 1.0 / static_cast<double>(batch);
  for (std::size_t r = 0; r < batch; ++r) {
    const int label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw std::out_of_range("label " + std::to_string(label) + " outside [0," + std::to_string(classes) + ")");
    }
    const double* row = logits.raw() + r * classes;
    const double mx = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t j = 0; j < classes; ++j) z += std::exp(row[j] - mx);
    const double log_z = mx + std::log(z);
    out.loss += (log_z - row[label]) * inv;
    double* g = out.grad.raw() + r * classes;
    for (std::size_t j = 0; j < classes; ++j) g[j] = std::exp(row[j] - log_z) * inv;
    g[label] -= inv;
  }
  return out;
}

LossResult mse_loss(const Tensor& prediction, const Tensor& target) {
  if (prediction.shape() != target.shape() || prediction.rank() == 0) {
    throw ShapeError("mse prediction " + shape_str(prediction.shape()) + " vs target " + shape_str(target.shape()));
  }
  const std::size_t batch = prediction.dim(0);
  LossResult out{0.0, Tensor(prediction.shape())};
  if (batch == 0) return out;
  const double inv = 1.0 / static_cast<double>(batch);
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const double d = prediction[i] - target[i];
    out.loss += d * d * inv;
    out.grad[i] = 2.0 * d * inv;
  }
  return out;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("argmax_rows expects a matrix, got " + shape_str(logits.shape()));
  const std::size_t n = logits.dim(1);
  std::vector<int> out(logits.dim(0));
  for (std::size_t r = 0; r < out.size(); ++r) {
    const double* row = logits.raw() + r * n;
    out[r] = static_cast<int>(std::max_element(row, row + n) - row);
  }
  return out;
}

AdamState::AdamState(AdamConfig config) : config_(config) {
  if (!(config.lr > 0.0) || !(config.beta1 >= 0.0 && config.beta1 < 1.0) || !(config.beta2 >= 0.0 && config.beta2 < 1.0) ||
      !(config.eps > 0.0)) {
    throw std::invalid_argument("invalid Adam hyperparameters");
  }
}

void AdamState::step(std::span<Tensor* const> params, std::span<const Tensor* const> grads) {
  if (params.size() != grads.size()) throw ShapeError("Adam got different numbers of parameters and gradients");
  if (t_ == 0) {
    m_.clear();
    v_.clear();
    for (const Tensor* p : params) {
      m_.emplace_back(p->shape());
      v_.emplace_back(p->shape());
    }
  } else if (m_.size() != params.size()) {
    throw ShapeError("Adam parameter list changed between steps");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != m_[i].shape() || grads[i]->shape() != m_[i].shape()) {
      throw ShapeError("Adam shape mismatch at parameter " + std::to_string(i) + ": " + shape_str(params[i]->shape()) +
                       " / " + shape_str(grads[i]->shape()));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    auto g = grads[i]->data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = config_.beta1 * m[k] + (1.0 - config_.beta1) * g[k];
      v[k] = config_.beta2 * v[k] + (1.0 - config_.beta2) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      p[k] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

}  // namespace kanvis
