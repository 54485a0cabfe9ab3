#pragma once

#include <cstdint>
#include <vector>

#include "cpcert/fourier.hpp"
#include "cpcert/tensor.hpp"

namespace cpcert {

/// Sum of R rank-1 terms lambda_r * v_1^(r) (x) ... (x) v_N^(r).
///
/// A mode may be grouped (e.g. the kx x ky spatial factor of a conv kernel);
/// its factor is then a matrix with unit Frobenius norm. The reconstructed
/// tensor has the concatenation of the mode shapes as its shape.
struct CPKernel {
  std::vector<Shape> mode_shapes;
  std::vector<double> lambdas;
  /// factors[r][j] has shape mode_shapes[j].
  std::vector<std::vector<DenseTensor>> factors;

  CPKernel() = default;
  explicit CPKernel(std::vector<Shape> modes) : mode_shapes(std::move(modes)) {}

  std::size_t width() const noexcept { return lambdas.size(); }
  std::size_t num_modes() const noexcept { return mode_shapes.size(); }
  Shape order_dims() const;
  /// Stored scalars: one amplitude plus every factor entry per component.
  std::size_t parameter_count() const;

  void add_component(double lambda, std::vector<DenseTensor> component_factors);
  /// Throws ShapeError when factor shapes disagree with mode_shapes.
  void validate_shapes() const;
  /// Unit-norm factors, lambda >= 0, sorted descending (within `tol`).
  bool is_normalized(double tol = 1e-10) const;
};

DenseTensor reconstruct(const CPKernel& k);

struct NormalizeResult {
  CPKernel kernel;
  /// Components removed because one of their factors was exactly zero.
  std::size_t dropped = 0;
  /// For each output component: its index in the input and whether its
  /// lambda changed sign.
  std::vector<std::size_t> source;
  std::vector<bool> flipped;
};

/// Rescales factors to unit norm, absorbs magnitudes and signs into lambda
/// (signs go into the first mode), then stable-sorts by lambda descending.
NormalizeResult normalize(const CPKernel& k);

/// Keeps the first `rank` components of a normalized kernel.
CPKernel truncate(const CPKernel& k, std::size_t rank);

/// Largest width for which an exact decomposition always exists:
/// min over modes j of the product of the other modes' sizes.
std::size_t cp_rank_cap(const std::vector<Shape>& mode_shapes);

struct AlsOptions {
  /// Stop once the relative error improves by less than this in a sweep.
  double improvement_tol = 1e-12;
  /// Stop once the relative error falls to this value.
  double target_error = 0.0;
  std::size_t max_iter = 2000;
  /// Seeds the uniform(-1, 1) factor initialisation.
  std::uint64_t seed = 0;
  /// Further runs from seeds seed+1, seed+2, ... while the error stays above
  /// target_error; the lowest-error run is kept.
  std::size_t restarts = 0;
};

struct AlsResult {
  CPKernel kernel;
  double rel_error = 0.0;
  std::size_t iterations = 0;
  /// Relative error after initialisation and after every sweep.
  std::vector<double> error_history;
};

/// CP-ALS. `grouping` partitions the axes of t into CP modes; the reconstructed
/// kernel is laid out in grouping order (axes listed within a group keep
/// their listed order).
AlsResult cp_als(const DenseTensor& t, std::size_t rank, const std::vector<std::vector<std::size_t>>& grouping,
                 const AlsOptions& options = {});

/// Mode layout of a CP conv kernel: {s}, {o}, {kx, ky}.
CPKernel make_conv_kernel(std::size_t s, std::size_t o, std::size_t kx, std::size_t ky);
/// Dense kx x ky x o x s kernel for conv2d_circular.
DenseTensor conv_cp_dense(const CPKernel& k);
/// Inverse layout of `conv_cp_dense`: s x o x kx x ky view used by cp_als.
DenseTensor conv_dense_to_cp_order(const DenseTensor& m);

/// |C~_r| on the grid for a kernel whose `spatial_mode` is kx x ky.
std::vector<DenseTensor> spatial_spectra(const CPKernel& k, std::size_t spatial_mode, FrequencyGrid grid);

/// sum_r |lambda_r| for the fully-connected CP form.
double opnorm_bound_fc(const CPKernel& k);

/// sqrt(HW) sum_r |lambda_r| max_{f,g} |C~_r^{(f,g)}| for a {s},{o},{kx,ky} kernel.
double opnorm_bound_conv(const CPKernel& k, FrequencyGrid grid);

/// Higher-order conv form: mode 0 is the kx x ky spatial factor, modes
/// 1..m are o_i x s_i channel matrices. Same bound as `opnorm_bound_conv`.
double opnorm_bound_higher_conv(const CPKernel& k, FrequencyGrid grid);
/// Dense kx x ky x (prod o_i) x (prod s_i) kernel of the higher-order form.
DenseTensor higher_conv_dense(const CPKernel& k);

}  // namespace cpcert
