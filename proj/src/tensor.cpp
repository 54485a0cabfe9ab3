#include "cpcert/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace cpcert {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

DenseTensor outer_product(const std::vector<std::vector<double>>& vectors) {
  if (vectors.empty()) throw std::invalid_argument("outer_product needs at least one vector");
  std::vector<DenseTensor> parts;
  parts.reserve(vectors.size());
  for (const auto& v : vectors) {
    if (v.empty()) throw std::invalid_argument("outer_product input vectors must be non-empty");
    parts.emplace_back(Shape{v.size()}, v);
  }
  return tensor_product(parts);
}

DenseTensor tensor_product(const std::vector<DenseTensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("tensor_product needs at least one factor");
  std::vector<double> acc = parts.front().storage();
  Shape shape = parts.front().shape();
  for (std::size_t p = 1; p < parts.size(); ++p) {
    const auto& rhs = parts[p].storage();
    std::vector<double> next(acc.size() * rhs.size());
    for (std::size_t i = 0; i < acc.size(); ++i) {
      const double a = acc[i];
      double* out = next.data() + i * rhs.size();
      for (std::size_t j = 0; j < rhs.size(); ++j) out[j] = a * rhs[j];
    }
    acc = std::move(next);
    shape.insert(shape.end(), parts[p].shape().begin(), parts[p].shape().end());
  }
  return DenseTensor(std::move(shape), std::move(acc));
}

DenseTensor kronecker(const DenseTensor& a, const DenseTensor& b) {
  if (a.rank() != 2 || b.rank() != 2) throw ShapeError("kronecker expects two matrices");
  const std::size_t n = a.dim(0), p = a.dim(1), m = b.dim(0), q = b.dim(1);
  DenseTensor out(Shape{n * m, p * q});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) {
      const double aij = a[i * p + j];
      for (std::size_t k = 0; k < m; ++k)
        for (std::size_t l = 0; l < q; ++l) out[(i * m + k) * (p * q) + j * q + l] = aij * b[k * q + l];
    }
  return out;
}

double frobenius_norm(std::span<const double> values) {
  // Scaled accumulation keeps tiny and huge entries from under/overflowing.
  double scale = 0.0;
  for (double v : values) scale = std::max(scale, std::abs(v));
  if (scale == 0.0 || !std::isfinite(scale)) return scale;
  double sum = 0.0;
  for (double v : values) {
    const double r = v / scale;
    sum += r * r;
  }
  return scale * std::sqrt(sum);
}

double frobenius_norm(const DenseTensor& t) { return frobenius_norm(t.data()); }

double frobenius_norm(const ComplexTensor& t) {
  double sum = 0.0;
  for (const auto& z : t.storage()) sum += std::norm(z);
  return std::sqrt(sum);
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

namespace {

template <typename T>
BasicTensor<T> reshape_impl(const BasicTensor<T>& t, Shape new_shape) {
  if (shape_size(new_shape) != t.size()) {
    throw ShapeError("cannot reshape " + shape_string(t.shape()) + " into " + shape_string(new_shape));
  }
  return BasicTensor<T>(std::move(new_shape), t.storage());
}

}  // namespace

DenseTensor reshape(const DenseTensor& t, Shape new_shape) { return reshape_impl(t, std::move(new_shape)); }
ComplexTensor reshape(const ComplexTensor& t, Shape new_shape) { return reshape_impl(t, std::move(new_shape)); }

DenseTensor permute(const DenseTensor& t, const std::vector<std::size_t>& perm) {
  const std::size_t n = t.rank();
  if (perm.size() != n) throw ShapeError("permute: permutation rank mismatch");
  std::vector<bool> seen(n, false);
  for (std::size_t p : perm) {
    if (p >= n || seen[p]) throw ShapeError("permute: not a permutation");
    seen[p] = true;
  }
  Shape out_shape(n);
  for (std::size_t i = 0; i < n; ++i) out_shape[i] = t.dim(perm[i]);
  const auto in_strides = strides_of(t.shape());
  std::vector<std::size_t> src_stride(n);
  for (std::size_t i = 0; i < n; ++i) src_stride[i] = in_strides[perm[i]];

  DenseTensor out(out_shape);
  std::vector<std::size_t> idx(n, 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < out.size(); ++flat) {
    out[flat] = t[src];
    for (std::size_t ax = n; ax-- > 0;) {
      if (++idx[ax] < out_shape[ax]) {
        src += src_stride[ax];
        break;
      }
      src -= src_stride[ax] * (out_shape[ax] - 1);
      idx[ax] = 0;
    }
  }
  return out;
}

DenseTensor matricize(const DenseTensor& t, const std::vector<std::size_t>& row_dims,
                      const std::vector<std::size_t>& col_dims) {
  std::vector<std::size_t> perm(row_dims);
  perm.insert(perm.end(), col_dims.begin(), col_dims.end());
  if (perm.size() != t.rank()) throw ShapeError("matricize: row and column dims must cover every axis");
  std::size_t rows = 1, cols = 1;
  for (std::size_t d : row_dims) rows *= t.dim(d);
  for (std::size_t d : col_dims) cols *= t.dim(d);
  return reshape(permute(t, perm), Shape{rows, cols});
}

ComplexTensor to_complex(const DenseTensor& t) {
  std::vector<Complex> data(t.storage().begin(), t.storage().end());
  return ComplexTensor(t.shape(), std::move(data));
}

DenseTensor real_part(const ComplexTensor& t) {
  std::vector<double> data(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) data[i] = t[i].real();
  return DenseTensor(t.shape(), std::move(data));
}

DenseTensor operator+(const DenseTensor& a, const DenseTensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("tensor add: shape mismatch");
  DenseTensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

DenseTensor operator-(const DenseTensor& a, const DenseTensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("tensor subtract: shape mismatch");
  DenseTensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

DenseTensor operator*(double s, const DenseTensor& a) {
  DenseTensor out = a;
  for (auto& v : out.storage()) v *= s;
  return out;
}

bool all_finite(const DenseTensor& t) {
  return std::all_of(t.storage().begin(), t.storage().end(), [](double v) { return std::isfinite(v); });
}

}  // namespace cpcert
