#pragma once

#include <complex>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cpcert {

using Shape = std::vector<std::size_t>;
using Complex = std::complex<double>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Row-major strides (last index fastest).
std::vector<std::size_t> strides_of(const Shape& shape);

/// N-order dense tensor stored row-major. Used for both real and complex
/// scalars; the two concrete aliases follow the class.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape) : shape_(std::move(shape)), data_(shape_size(shape_)) {
    check_shape();
  }
  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != shape_size(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }
  BasicTensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
    check_shape();
  }

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t flat) { return data_[flat]; }
  const T& operator[](std::size_t flat) const { return data_[flat]; }

  std::size_t offset(std::span<const std::size_t> index) const {
    if (index.size() != shape_.size()) {
      throw ShapeError("index rank " + std::to_string(index.size()) + " does not match tensor rank " +
                       std::to_string(shape_.size()));
    }
    std::size_t off = 0;
    for (std::size_t i = 0; i < index.size(); ++i) {
      if (index[i] >= shape_[i]) {
        throw std::out_of_range("tensor index out of range on axis " + std::to_string(i));
      }
      off = off * shape_[i] + index[i];
    }
    return off;
  }

  T& at(std::initializer_list<std::size_t> index) {
    return data_[offset(std::span<const std::size_t>(index.begin(), index.size()))];
  }
  const T& at(std::initializer_list<std::size_t> index) const {
    return data_[offset(std::span<const std::size_t>(index.begin(), index.size()))];
  }

  bool operator==(const BasicTensor& other) const = default;

 private:
  void check_shape() const {
    for (std::size_t d : shape_) {
      if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

using DenseTensor = BasicTensor<double>;
using ComplexTensor = BasicTensor<Complex>;

/// Entry (i1..iN) = prod_j v_j(i_j). Shape is the concatenation of lengths.
DenseTensor outer_product(const std::vector<std::vector<double>>& vectors);

/// Outer product of tensors, generalising `outer_product` to grouped modes
/// (e.g. vector x vector x matrix).
DenseTensor tensor_product(const std::vector<DenseTensor>& parts);

/// Block Kronecker product of two matrices: (n*m) x (p*q).
DenseTensor kronecker(const DenseTensor& a, const DenseTensor& b);

double frobenius_norm(const DenseTensor& t);
double frobenius_norm(const ComplexTensor& t);
double frobenius_norm(std::span<const double> values);
double dot(std::span<const double> a, std::span<const double> b);

DenseTensor reshape(const DenseTensor& t, Shape new_shape);
ComplexTensor reshape(const ComplexTensor& t, Shape new_shape);

/// Result axis i is input axis perm[i].
DenseTensor permute(const DenseTensor& t, const std::vector<std::size_t>& perm);

/// Matrix whose rows enumerate `row_dims` and columns enumerate `col_dims`
/// (both in the listed order). Together they must cover every axis once.
DenseTensor matricize(const DenseTensor& t, const std::vector<std::size_t>& row_dims,
                      const std::vector<std::size_t>& col_dims);

ComplexTensor to_complex(const DenseTensor& t);
DenseTensor real_part(const ComplexTensor& t);

DenseTensor operator+(const DenseTensor& a, const DenseTensor& b);
DenseTensor operator-(const DenseTensor& a, const DenseTensor& b);
DenseTensor operator*(double s, const DenseTensor& a);

bool all_finite(const DenseTensor& t);

}  // namespace cpcert
