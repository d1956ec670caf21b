#include "kanvis/tensor.hpp"

#include "kanvis/errors.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <bit>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

namespace kanvis {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + shape_str(shape_) + " needs " + std::to_string(shape_numel(shape_)) +
                     " elements, got " + std::to_string(data_.size()));
  }
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t m = rows.size();
  const std::size_t n = m ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(m * n);
  for (const auto& row : rows) {
    if (row.size() != n) throw ShapeError("ragged rows in Tensor::matrix");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({m, n}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = 1.0;
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape_));
  }
  return shape_[axis];
}

std::vector<std::size_t> Tensor::strides() const {
  std::vector<std::size_t> s(shape_.size(), 1);
  for (std::size_t i = shape_.size(); i > 1; --i) s[i - 2] = s[i - 1] * shape_[i - 1];
  return s;
}

std::size_t Tensor::offset(std::span<const std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw ShapeError("index of rank " + std::to_string(index.size()) + " into shape " + shape_str(shape_));
  }
  std::size_t off = 0;
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= shape_[i]) throw ShapeError("index out of bounds for shape " + shape_str(shape_));
    off = off * shape_[i] + index[i];
  }
  return off;
}

double& Tensor::at(std::initializer_list<std::size_t> index) {
  return data_[offset(std::span<const std::size_t>(index.begin(), index.size()))];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  return data_[offset(std::span<const std::size_t>(index.begin(), index.size()))];
}

Tensor Tensor::reshaped(Shape shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  shape_ = std::move(shape);
  return std::move(*this);
}

void Tensor::fill(double value) noexcept { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

}  // namespace

void gemm(Transpose ta, Transpose tb, std::size_t m, std::size_t n, std::size_t k, double alpha,
          const double* a, const double* b, double beta, double* c) {
  const auto M = static_cast<Eigen::Index>(m);
  const auto N = static_cast<Eigen::Index>(n);
  const auto K = static_cast<Eigen::Index>(k);
  MutMap cm(c, M, N);
  if (beta == 0.0) {
    cm.setZero();
  } else if (beta != 1.0) {
    cm *= beta;
  }
  if (m == 0 || n == 0 || k == 0) return;
  // Stored extents: a is [m,k] or [k,m]; b is [k,n] or [n,k].
  ConstMap am(a, ta == Transpose::no ? M : K, ta == Transpose::no ? K : M);
  ConstMap bm(b, tb == Transpose::no ? K : N, tb == Transpose::no ? N : K);
  if (ta == Transpose::no && tb == Transpose::no) {
    cm.noalias() += alpha * am * bm;
  } else if (ta == Transpose::yes && tb == Transpose::no) {
    cm.noalias() += alpha * am.transpose() * bm;
  } else if (ta == Transpose::no && tb == Transpose::yes) {
    cm.noalias() += alpha * am * bm.transpose();
  } else {
    cm.noalias() += alpha * am.transpose() * bm.transpose();
  }
}

Tensor matmul(const Tensor& a, const Tensor& b, Transpose ta, Transpose tb) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul needs rank-2 operands, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t m = ta == Transpose::no ? a.dim(0) : a.dim(1);
  const std::size_t ka = ta == Transpose::no ? a.dim(1) : a.dim(0);
  const std::size_t kb = tb == Transpose::no ? b.dim(0) : b.dim(1);
  const std::size_t n = tb == Transpose::no ? b.dim(1) : b.dim(0);
  if (ka != kb) {
    throw ShapeError("matmul inner dimensions disagree: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor c({m, n});
  gemm(ta, tb, m, n, ka, 1.0, a.raw(), b.raw(), 0.0, c.raw());
  return c;
}

Tensor matmul(const Tensor& a, const Tensor& b) { return matmul(a, b, Transpose::no, Transpose::no); }

Tensor broadcast_add(const Tensor& a, const Tensor& b) {
  const std::size_t rank = std::max(a.rank(), b.rank());
  Shape out_shape(rank, 1);
  auto extent = [rank](const Tensor& t, std::size_t axis) -> std::size_t {
    const std::size_t pad = rank - t.rank();
    return axis < pad ? 1 : t.shape()[axis - pad];
  };
  for (std::size_t ax = 0; ax < rank; ++ax) {
    const auto ea = extent(a, ax);
    const auto eb = extent(b, ax);
    if (ea != eb && ea != 1 && eb != 1) {
      throw ShapeError("cannot broadcast " + shape_str(a.shape()) + " with " + shape_str(b.shape()));
    }
    out_shape[ax] = std::max(ea, eb);
  }
  Tensor out(out_shape);
  const auto out_strides = out.strides();
  auto broadcast_strides = [&](const Tensor& t) {
    std::vector<std::size_t> s(rank, 0);
    const auto own = t.strides();
    const std::size_t pad = rank - t.rank();
    for (std::size_t ax = pad; ax < rank; ++ax) {
      if (t.shape()[ax - pad] != 1) s[ax] = own[ax - pad];
    }
    return s;
  };
  const auto sa = broadcast_strides(a);
  const auto sb = broadcast_strides(b);
  for (std::size_t flat = 0; flat < out.size(); ++flat) {
    std::size_t rem = flat;
    std::size_t ia = 0;
    std::size_t ib = 0;
    for (std::size_t ax = 0; ax < rank; ++ax) {
      const std::size_t idx = rem / out_strides[ax];
      rem %= out_strides[ax];
      ia += idx * sa[ax];
      ib += idx * sb[ax];
    }
    out[flat] = a[ia] + b[ib];
  }
  return out;
}

Tensor reduce_sum(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw ShapeError("reduce_sum axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
  }
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.shape()[i];
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.shape()[i];
  const std::size_t n = x.shape()[axis];
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out(out_shape);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t r = 0; r < n; ++r) {
      const double* src = x.raw() + (o * n + r) * inner;
      double* dst = out.raw() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  return out;
}

double reduce_sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return s;
}

namespace {

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw IoError("truncated tensor stream");
  return value;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) put_le<std::uint64_t>(out, static_cast<std::uint64_t>(e));
  out.write(reinterpret_cast<const char*>(t.raw()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!out) throw IoError("failed writing tensor");
}

Tensor read_tensor(std::istream& in) {
  const auto rank = get_le<std::uint32_t>(in);
  if (rank > 16) throw IoError("implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) e = static_cast<std::size_t>(get_le<std::uint64_t>(in));
  std::vector<double> data(shape_numel(shape));
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!in) throw IoError("truncated tensor payload for shape " + shape_str(shape));
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace kanvis
