#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>

#include "cpcert/tensor.hpp"

namespace cpcert {

using LinearMap = std::function<DenseTensor(const DenseTensor&)>;

struct OracleOptions {
  double tol = 1e-10;
  std::size_t max_iter = 200000;
  std::uint64_t seed = 0;
};

class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double last_estimate, std::size_t iterations)
      : std::runtime_error(what), last_estimate_(last_estimate), iterations_(iterations) {}
  double last_estimate() const noexcept { return last_estimate_; }
  std::size_t iterations() const noexcept { return iterations_; }

 private:
  double last_estimate_;
  std::size_t iterations_;
};

/// Largest singular value of a linear map by power iteration on A^T A.
///
/// Stops once the eigen-residual ||A^T A v - theta v|| falls below tol * theta,
/// which bounds the relative error of the returned value by roughly tol / 2.
/// When `adjoint` is empty the map is materialised by applying it to every
/// basis tensor of `in_shape`, so keep inputs small in that mode.
double operator_norm_oracle(const LinearMap& apply, const Shape& in_shape, const OracleOptions& options = {},
                            const LinearMap& adjoint = {});

}  // namespace cpcert
