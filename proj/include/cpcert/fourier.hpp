#pragma once

#include <vector>

#include "cpcert/parallel.hpp"
#include "cpcert/tensor.hpp"

namespace cpcert {

/// Spatial grid on which kernels are embedded before the DFT.
struct FrequencyGrid {
  std::size_t height = 1;
  std::size_t width = 1;

  FrequencyGrid() = default;
  FrequencyGrid(std::size_t h, std::size_t w);
  std::size_t points() const noexcept { return height * width; }
};

/// Unitary DFT over the listed axes, normalised by (prod N_l)^{-1/2}.
ComplexTensor mdft(const ComplexTensor& t, const std::vector<std::size_t>& dims);
ComplexTensor mdft(const DenseTensor& t, const std::vector<std::size_t>& dims);
/// Inverse (= adjoint) of `mdft` over the same axes.
ComplexTensor imdft(const ComplexTensor& t, const std::vector<std::size_t>& dims);

/// Zero-pads a kx x ky x ... kernel into an H x W x ... grid anchored at (0,0).
DenseTensor embed_spatial(const DenseTensor& kernel, FrequencyGrid grid);

/// Circular 2D convolution.
///   x: H x W x S, m: kx x ky x T x S, result: H x W x T
///   y[i,j,t] = sum_s sum_{a<kx,b<ky} m[a,b,t,s] * x[(i-a) mod H, (j-b) mod W, s]
DenseTensor conv2d_circular(const DenseTensor& x, const DenseTensor& m, Execution exec = Execution::parallel);

/// Adjoint of `conv2d_circular` in x: maps H x W x T back to H x W x S.
DenseTensor conv2d_circular_adjoint(const DenseTensor& y, const DenseTensor& m,
                                    Execution exec = Execution::parallel);

/// Gradient of <dy, conv2d_circular(x, m)> with respect to m (kx x ky x T x S).
DenseTensor conv2d_circular_kernel_grad(const DenseTensor& x, const DenseTensor& dy, std::size_t kx,
                                        std::size_t ky);

/// Same result as `conv2d_circular`, computed through the convolution
/// theorem: Y~[f,g,t] = sqrt(HW) sum_s M~[f,g,t,s] X~[f,g,s].
DenseTensor conv2d_spectral(const DenseTensor& x, const DenseTensor& m);

/// |C~[f,g]| for a kx x ky spatial factor embedded in the grid.
DenseTensor spatial_spectrum_magnitude(const DenseTensor& spatial, FrequencyGrid grid);

struct ConvNormCertificate {
  double norm = 0.0;
  std::size_t f = 0;
  std::size_t g = 0;
  /// Right singular vector (length S) of the maximising frequency slice.
  std::vector<Complex> input_direction;
};

/// Exact operator norm sqrt(HW) * max_{f,g} ||M~^{(f,g)}||_2 of the circular
/// convolution with kernel m (kx x ky x T x S) on the grid.
double conv_operator_norm_exact(const DenseTensor& m, FrequencyGrid grid);
ConvNormCertificate conv_operator_norm_detail(const DenseTensor& m, FrequencyGrid grid);

}  // namespace cpcert
