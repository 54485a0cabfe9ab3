#include "cpcert/opnorm.hpp"

#include <cmath>
#include <memory>
#include <random>

namespace cpcert {

namespace {

struct MaterialisedMap {
  Shape in_shape;
  Shape out_shape;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> matrix;  // rows x cols, row-major

  DenseTensor apply(const DenseTensor& x) const {
    DenseTensor y(out_shape);
    for (std::size_t i = 0; i < rows; ++i) {
      double s = 0.0;
      const double* row = matrix.data() + i * cols;
      for (std::size_t j = 0; j < cols; ++j) s += row[j] * x[j];
      y[i] = s;
    }
    return y;
  }

  DenseTensor adjoint(const DenseTensor& y) const {
    DenseTensor x(in_shape);
    for (std::size_t i = 0; i < rows; ++i) {
      const double yi = y[i];
      const double* row = matrix.data() + i * cols;
      for (std::size_t j = 0; j < cols; ++j) x[j] += row[j] * yi;
    }
    return x;
  }
};

MaterialisedMap materialise(const LinearMap& apply, const Shape& in_shape) {
  MaterialisedMap m;
  m.in_shape = in_shape;
  m.cols = shape_size(in_shape);
  DenseTensor basis(in_shape);
  for (std::size_t j = 0; j < m.cols; ++j) {
    basis[j] = 1.0;
    DenseTensor col = apply(basis);
    basis[j] = 0.0;
    if (j == 0) {
      m.out_shape = col.shape();
      m.rows = col.size();
      m.matrix.assign(m.rows * m.cols, 0.0);
    } else if (col.shape() != m.out_shape) {
      throw ShapeError("operator_norm_oracle: map output shape is not constant");
    }
    for (std::size_t i = 0; i < m.rows; ++i) m.matrix[i * m.cols + j] = col[i];
  }
  return m;
}

}  // namespace

double operator_norm_oracle(const LinearMap& apply, const Shape& in_shape, const OracleOptions& options,
                            const LinearMap& adjoint) {
  if (!(options.tol > 0.0)) throw std::invalid_argument("operator_norm_oracle: tol must be positive");
  if (shape_size(in_shape) == 0) throw ShapeError("operator_norm_oracle: empty input shape");

  LinearMap forward = apply;
  LinearMap backward = adjoint;
  if (!backward) {
    auto mat = std::make_shared<MaterialisedMap>(materialise(apply, in_shape));
    forward = [mat](const DenseTensor& x) { return mat->apply(x); };
    backward = [mat](const DenseTensor& y) { return mat->adjoint(y); };
  }

  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  DenseTensor v(in_shape);
  for (auto& e : v.storage()) e = normal(rng);
  {
    const double n = frobenius_norm(v);
    for (auto& e : v.storage()) e /= n;
  }

  double theta = 0.0;
  for (std::size_t it = 0; it < options.max_iter; ++it) {
    const DenseTensor w = forward(v);
    DenseTensor u = backward(w);
    if (u.shape() != v.shape()) throw ShapeError("operator_norm_oracle: adjoint returned the wrong shape");
    theta = dot(v.data(), u.data());
    const double unorm = frobenius_norm(u);
    if (unorm == 0.0 || theta <= 0.0) return 0.0;

    double resid2 = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
      const double r = u[i] - theta * v[i];
      resid2 += r * r;
    }
    if (std::sqrt(resid2) <= options.tol * theta) return std::sqrt(theta);

    for (std::size_t i = 0; i < u.size(); ++i) v[i] = u[i] / unorm;
  }
  throw ConvergenceError("operator_norm_oracle did not converge", std::sqrt(std::max(theta, 0.0)),
                         options.max_iter);
}

}  // namespace cpcert
