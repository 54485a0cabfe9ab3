#include "cpcert/fourier.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>

namespace cpcert {

FrequencyGrid::FrequencyGrid(std::size_t h, std::size_t w) : height(h), width(w) {
  if (h == 0 || w == 0) throw ShapeError("frequency grid must be non-empty");
}

namespace {

void check_dims(const Shape& shape, const std::vector<std::size_t>& dims) {
  std::vector<bool> seen(shape.size(), false);
  for (std::size_t d : dims) {
    if (d >= shape.size()) {
      throw ShapeError("mdft axis " + std::to_string(d) + " out of range for shape " + shape_string(shape));
    }
    if (seen[d]) throw ShapeError("mdft axis " + std::to_string(d) + " listed twice");
    seen[d] = true;
  }
}

// Direct length-N DFT along one axis, scaled by 1/sqrt(N). `sign` is -1 for
// the forward transform.
void dft_axis(ComplexTensor& t, std::size_t axis, int sign) {
  const Shape& shape = t.shape();
  const std::size_t n = shape[axis];
  if (n == 1) return;
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t outer = t.size() / (n * inner);

  std::vector<Complex> twiddle(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double angle = sign * 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    twiddle[k] = Complex(std::cos(angle), std::sin(angle));
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));

  std::vector<Complex> line(n);
  auto& data = t.storage();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      for (std::size_t k = 0; k < n; ++k) line[k] = data[base + k * inner];
      for (std::size_t f = 0; f < n; ++f) {
        Complex acc = 0.0;
        std::size_t idx = 0;
        for (std::size_t k = 0; k < n; ++k) {
          acc += line[k] * twiddle[idx];
          idx += f;
          if (idx >= n) idx -= n;
        }
        data[base + f * inner] = acc * scale;
      }
    }
  }
}

ComplexTensor transform(ComplexTensor t, const std::vector<std::size_t>& dims, int sign) {
  check_dims(t.shape(), dims);
  for (std::size_t d : dims) dft_axis(t, d, sign);
  return t;
}

void check_conv_shapes(const DenseTensor& x, const DenseTensor& m, const char* who) {
  if (x.rank() != 3) throw ShapeError(std::string(who) + ": input must be H x W x C, got " + shape_string(x.shape()));
  if (m.rank() != 4) throw ShapeError(std::string(who) + ": kernel must be kx x ky x T x S, got " + shape_string(m.shape()));
}

}  // namespace

ComplexTensor mdft(const ComplexTensor& t, const std::vector<std::size_t>& dims) { return transform(t, dims, -1); }

ComplexTensor mdft(const DenseTensor& t, const std::vector<std::size_t>& dims) {
  return transform(to_complex(t), dims, -1);
}

ComplexTensor imdft(const ComplexTensor& t, const std::vector<std::size_t>& dims) { return transform(t, dims, +1); }

DenseTensor embed_spatial(const DenseTensor& kernel, FrequencyGrid grid) {
  if (kernel.rank() < 2) throw ShapeError("embed_spatial: kernel needs two spatial axes");
  const std::size_t kx = kernel.dim(0), ky = kernel.dim(1);
  if (kx > grid.height || ky > grid.width) {
    throw ShapeError("embed_spatial: kernel " + shape_string(kernel.shape()) + " larger than grid " +
                     std::to_string(grid.height) + "x" + std::to_string(grid.width));
  }
  Shape out_shape = kernel.shape();
  out_shape[0] = grid.height;
  out_shape[1] = grid.width;
  const std::size_t tail = kernel.size() / (kx * ky);
  DenseTensor out(out_shape);
  for (std::size_t a = 0; a < kx; ++a) {
    for (std::size_t b = 0; b < ky; ++b) {
      const double* src = kernel.data().data() + (a * ky + b) * tail;
      double* dst = out.data().data() + (a * grid.width + b) * tail;
      std::copy(src, src + tail, dst);
    }
  }
  return out;
}

DenseTensor conv2d_circular(const DenseTensor& x, const DenseTensor& m, Execution exec) {
  check_conv_shapes(x, m, "conv2d_circular");
  const std::size_t H = x.dim(0), W = x.dim(1), S = x.dim(2);
  const std::size_t kx = m.dim(0), ky = m.dim(1), T = m.dim(2);
  if (m.dim(3) != S) {
    throw ShapeError("conv2d_circular: kernel expects " + std::to_string(m.dim(3)) + " input channels, input has " +
                     std::to_string(S));
  }
  if (kx > H || ky > W) throw ShapeError("conv2d_circular: kernel larger than input grid");
  DenseTensor y({H, W, T});

  if (exec == Execution::serial) {
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j)
        for (std::size_t t = 0; t < T; ++t) {
          double acc = 0.0;
          for (std::size_t s = 0; s < S; ++s)
            for (std::size_t a = 0; a < kx; ++a)
              for (std::size_t b = 0; b < ky; ++b)
                acc += m.at({a, b, t, s}) * x.at({(i + H - a) % H, (j + W - b) % W, s});
          y.at({i, j, t}) = acc;
        }
    return y;
  }

  const double* xd = x.data().data();
  const double* md = m.data().data();
  double* yd = y.data().data();
  const long rows = static_cast<long>(H);
#pragma omp parallel for schedule(static) num_threads(thread_cap())
  for (long il = 0; il < rows; ++il) {
    const std::size_t i = static_cast<std::size_t>(il);
    for (std::size_t j = 0; j < W; ++j) {
      double* yrow = yd + (i * W + j) * T;
      for (std::size_t a = 0; a < kx; ++a) {
        const std::size_t p = (i + H - a) % H;
        for (std::size_t b = 0; b < ky; ++b) {
          const std::size_t q = (j + W - b) % W;
          const double* xs = xd + (p * W + q) * S;
          const double* mab = md + (a * ky + b) * T * S;
          for (std::size_t t = 0; t < T; ++t) {
            const double* mt = mab + t * S;
            double acc = 0.0;
            for (std::size_t s = 0; s < S; ++s) acc += mt[s] * xs[s];
            yrow[t] += acc;
          }
        }
      }
    }
  }
  return y;
}

DenseTensor conv2d_circular_adjoint(const DenseTensor& y, const DenseTensor& m, Execution exec) {
  check_conv_shapes(y, m, "conv2d_circular_adjoint");
  const std::size_t H = y.dim(0), W = y.dim(1), T = y.dim(2);
  const std::size_t kx = m.dim(0), ky = m.dim(1), S = m.dim(3);
  if (m.dim(2) != T) throw ShapeError("conv2d_circular_adjoint: channel mismatch");
  if (kx > H || ky > W) throw ShapeError("conv2d_circular_adjoint: kernel larger than grid");
  DenseTensor x({H, W, S});

  if (exec == Execution::serial) {
    for (std::size_t p = 0; p < H; ++p)
      for (std::size_t q = 0; q < W; ++q)
        for (std::size_t s = 0; s < S; ++s) {
          double acc = 0.0;
          for (std::size_t t = 0; t < T; ++t)
            for (std::size_t a = 0; a < kx; ++a)
              for (std::size_t b = 0; b < ky; ++b) acc += m.at({a, b, t, s}) * y.at({(p + a) % H, (q + b) % W, t});
          x.at({p, q, s}) = acc;
        }
    return x;
  }

  const double* yd = y.data().data();
  const double* md = m.data().data();
  double* xd = x.data().data();
  const long rows = static_cast<long>(H);
#pragma omp parallel for schedule(static) num_threads(thread_cap())
  for (long pl = 0; pl < rows; ++pl) {
    const std::size_t p = static_cast<std::size_t>(pl);
    for (std::size_t q = 0; q < W; ++q) {
      double* xs = xd + (p * W + q) * S;
      for (std::size_t a = 0; a < kx; ++a) {
        const std::size_t i = (p + a) % H;
        for (std::size_t b = 0; b < ky; ++b) {
          const std::size_t j = (q + b) % W;
          const double* yt = yd + (i * W + j) * T;
          const double* mab = md + (a * ky + b) * T * S;
          for (std::size_t t = 0; t < T; ++t) {
            const double yv = yt[t];
            const double* mt = mab + t * S;
            for (std::size_t s = 0; s < S; ++s) xs[s] += mt[s] * yv;
          }
        }
      }
    }
  }
  return x;
}

DenseTensor conv2d_circular_kernel_grad(const DenseTensor& x, const DenseTensor& dy, std::size_t kx, std::size_t ky) {
  if (x.rank() != 3 || dy.rank() != 3 || x.dim(0) != dy.dim(0) || x.dim(1) != dy.dim(1)) {
    throw ShapeError("conv2d_circular_kernel_grad: incompatible input/output shapes");
  }
  const std::size_t H = x.dim(0), W = x.dim(1), S = x.dim(2), T = dy.dim(2);
  if (kx == 0 || ky == 0 || kx > H || ky > W) throw ShapeError("conv2d_circular_kernel_grad: bad kernel size");
  DenseTensor g({kx, ky, T, S});
  const double* xd = x.data().data();
  const double* yd = dy.data().data();
  for (std::size_t a = 0; a < kx; ++a)
    for (std::size_t b = 0; b < ky; ++b) {
      double* gab = g.data().data() + (a * ky + b) * T * S;
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          const double* xs = xd + (((i + H - a) % H) * W + (j + W - b) % W) * S;
          const double* yt = yd + (i * W + j) * T;
          for (std::size_t t = 0; t < T; ++t) {
            const double yv = yt[t];
            if (yv == 0.0) continue;
            for (std::size_t s = 0; s < S; ++s) gab[t * S + s] += yv * xs[s];
          }
        }
    }
  return g;
}

DenseTensor conv2d_spectral(const DenseTensor& x, const DenseTensor& m) {
  check_conv_shapes(x, m, "conv2d_spectral");
  const std::size_t H = x.dim(0), W = x.dim(1), S = x.dim(2), T = m.dim(2);
  if (m.dim(3) != S) throw ShapeError("conv2d_spectral: channel mismatch");
  const ComplexTensor mt = mdft(embed_spatial(m, FrequencyGrid(H, W)), {0, 1});
  const ComplexTensor xt = mdft(x, {0, 1});
  const double root = std::sqrt(static_cast<double>(H * W));
  ComplexTensor yt({H, W, T});
  for (std::size_t fg = 0; fg < H * W; ++fg)
    for (std::size_t t = 0; t < T; ++t) {
      Complex acc = 0.0;
      for (std::size_t s = 0; s < S; ++s) acc += mt[(fg * T + t) * S + s] * xt[fg * S + s];
      yt[fg * T + t] = root * acc;
    }
  return real_part(imdft(yt, {0, 1}));
}

DenseTensor spatial_spectrum_magnitude(const DenseTensor& spatial, FrequencyGrid grid) {
  if (spatial.rank() != 2) throw ShapeError("spatial_spectrum_magnitude: expected a kx x ky matrix");
  const ComplexTensor ct = mdft(embed_spatial(spatial, grid), {0, 1});
  DenseTensor out({grid.height, grid.width});
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(ct[i]);
  return out;
}

ConvNormCertificate conv_operator_norm_detail(const DenseTensor& m, FrequencyGrid grid) {
  if (m.rank() != 4) throw ShapeError("conv_operator_norm_exact: kernel must be kx x ky x T x S");
  const std::size_t T = m.dim(2), S = m.dim(3);
  const ComplexTensor mt = mdft(embed_spatial(m, grid), {0, 1});
  ConvNormCertificate cert;
  cert.input_direction.assign(S, Complex(0.0));
  double best = -1.0;
  Eigen::MatrixXcd slice(T, S);
  for (std::size_t f = 0; f < grid.height; ++f)
    for (std::size_t g = 0; g < grid.width; ++g) {
      const std::size_t fg = f * grid.width + g;
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t s = 0; s < S; ++s) slice(t, s) = mt[(fg * T + t) * S + s];
      Eigen::JacobiSVD<Eigen::MatrixXcd> svd(slice, Eigen::ComputeThinV);
      const double sv = svd.singularValues()(0);
      if (sv > best) {
        best = sv;
        cert.f = f;
        cert.g = g;
        for (std::size_t s = 0; s < S; ++s) cert.input_direction[s] = svd.matrixV()(s, 0);
      }
    }
  cert.norm = std::sqrt(static_cast<double>(grid.points())) * std::max(best, 0.0);
  return cert;
}

double conv_operator_norm_exact(const DenseTensor& m, FrequencyGrid grid) {
  return conv_operator_norm_detail(m, grid).norm;
}

}  // namespace cpcert
