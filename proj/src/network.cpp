#include "cpcert/network.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace cpcert {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv_dense: return "conv_dense";
    case LayerKind::conv_cp: return "conv_cp";
    case LayerKind::fc_dense: return "fc_dense";
    case LayerKind::fc_cp: return "fc_cp";
  }
  return "unknown";
}

std::string to_string(FcMode mode) { return mode == FcMode::vectors ? "vectors" : "matrices"; }

// ---- layers ---------------------------------------------------------------

Layer Layer::conv_dense_layer(DenseTensor kernel) {
  if (kernel.rank() != 4) throw ShapeError("conv_dense kernel must be kx x ky x o x s, got " + shape_string(kernel.shape()));
  Layer l;
  l.kind = LayerKind::conv_dense;
  l.kx = kernel.dim(0);
  l.ky = kernel.dim(1);
  l.o = kernel.dim(2);
  l.s = kernel.dim(3);
  l.dense = std::move(kernel);
  return l;
}

Layer Layer::conv_cp_layer(CPKernel kernel) {
  const auto& m = kernel.mode_shapes;
  if (m.size() != 3 || m[0].size() != 1 || m[1].size() != 1 || m[2].size() != 2) {
    throw ShapeError("conv_cp kernel must have modes {s},{o},{kx,ky}");
  }
  kernel.validate_shapes();
  Layer l;
  l.kind = LayerKind::conv_cp;
  l.s = m[0][0];
  l.o = m[1][0];
  l.kx = m[2][0];
  l.ky = m[2][1];
  l.cp = std::move(kernel);
  return l;
}

Layer Layer::fc_dense_layer(DenseTensor kernel) {
  if (kernel.rank() != 4) throw ShapeError("fc_dense kernel must be s1 x s2 x o1 x o2, got " + shape_string(kernel.shape()));
  Layer l;
  l.kind = LayerKind::fc_dense;
  l.s1 = kernel.dim(0);
  l.s2 = kernel.dim(1);
  l.o1 = kernel.dim(2);
  l.o2 = kernel.dim(3);
  l.dense = std::move(kernel);
  return l;
}

Layer Layer::fc_cp_layer(CPKernel kernel, FcMode mode) {
  const auto& m = kernel.mode_shapes;
  Layer l;
  l.kind = LayerKind::fc_cp;
  l.fc_mode = mode;
  if (mode == FcMode::vectors) {
    if (m.size() != 4 || std::any_of(m.begin(), m.end(), [](const Shape& s) { return s.size() != 1; })) {
      throw ShapeError("fc_cp vectors kernel must have modes {s1},{s2},{o1},{o2}");
    }
    l.s1 = m[0][0];
    l.s2 = m[1][0];
    l.o1 = m[2][0];
    l.o2 = m[3][0];
  } else {
    if (m.size() != 2 || m[0].size() != 2 || m[1].size() != 2) {
      throw ShapeError("fc_cp matrices kernel must have modes {o1,s1},{o2,s2}");
    }
    l.o1 = m[0][0];
    l.s1 = m[0][1];
    l.o2 = m[1][0];
    l.s2 = m[1][1];
  }
  kernel.validate_shapes();
  l.cp = std::move(kernel);
  return l;
}

DenseTensor Layer::dense_kernel() const {
  switch (kind) {
    case LayerKind::conv_dense:
    case LayerKind::fc_dense: return dense;
    case LayerKind::conv_cp: return conv_cp_dense(cp);
    case LayerKind::fc_cp: {
      if (fc_mode == FcMode::vectors) return reconstruct(cp);
      return permute(reconstruct(cp), {1, 3, 0, 2});
    }
  }
  return dense;
}

double Layer::kernel_norm() const { return frobenius_norm(dense_kernel()); }

std::size_t Layer::parameter_count() const { return is_cp() ? cp.parameter_count() : dense.size(); }

std::size_t Layer::dense_parameter_count() const { return is_conv() ? s * o * kx * ky : s1 * s2 * o1 * o2; }

void Layer::validate() const {
  if (is_conv()) {
    if (s == 0 || o == 0 || kx == 0 || ky == 0) throw ShapeError("conv layer has a zero dimension");
    if (kind == LayerKind::conv_dense && dense.shape() != Shape{kx, ky, o, s}) {
      throw ShapeError("conv_dense kernel shape " + shape_string(dense.shape()) + " does not match dims");
    }
    if (kind == LayerKind::conv_cp) {
      cp.validate_shapes();
      if (cp.mode_shapes != std::vector<Shape>{{s}, {o}, {kx, ky}}) throw ShapeError("conv_cp modes do not match dims");
    }
    if (skip && o != s) throw ShapeError("skip conv layer needs o == s");
  } else {
    if (s1 == 0 || s2 == 0 || o1 == 0 || o2 == 0) throw ShapeError("fc layer has a zero dimension");
    if (kind == LayerKind::fc_dense && dense.shape() != Shape{s1, s2, o1, o2}) {
      throw ShapeError("fc_dense kernel shape " + shape_string(dense.shape()) + " does not match dims");
    }
    if (kind == LayerKind::fc_cp) {
      cp.validate_shapes();
      const std::vector<Shape> want = fc_mode == FcMode::vectors ? std::vector<Shape>{{s1}, {s2}, {o1}, {o2}}
                                                                 : std::vector<Shape>{{o1, s1}, {o2, s2}};
      if (cp.mode_shapes != want) throw ShapeError("fc_cp modes do not match dims");
    }
    if (skip && (o1 != s1 || o2 != s2)) throw ShapeError("skip fc layer needs o1 == s1 and o2 == s2");
  }
}

std::size_t NetworkModel::num_classes() const { return layers.empty() ? 0 : layers.back().out_width(); }

void NetworkModel::validate() const {
  if (layers.empty()) throw ShapeError("model has no layers");
  const bool conv = layers.front().is_conv();
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const Layer& l = layers[k];
    const std::string where = "layer " + std::to_string(k) + ": ";
    try {
      l.validate();
    } catch (const ShapeError& e) {
      throw ShapeError(where + e.what());
    }
    if (l.is_conv() != conv) throw ShapeError(where + "conv and fc layers cannot be mixed");
    if (conv) {
      if (input_shape.size() != 3) throw ShapeError("conv model input must be H x W x C");
      if (l.kx > input_shape[0] || l.ky > input_shape[1]) throw ShapeError(where + "kernel larger than the input grid");
      const std::size_t in = k == 0 ? input_shape[2] : layers[k - 1].o;
      if (l.s != in) throw ShapeError(where + "expects " + std::to_string(l.s) + " channels, receives " + std::to_string(in));
    } else {
      if (input_shape.size() != 1) throw ShapeError("fc model input must be a vector");
      const std::size_t in = k == 0 ? input_shape[0] : layers[k - 1].out_width();
      if (l.in_width() != in) {
        throw ShapeError(where + "expects " + std::to_string(l.in_width()) + " inputs, receives " + std::to_string(in));
      }
    }
  }
}

void Dataset::validate() const {
  if (inputs.size() != labels.size()) throw ShapeError("dataset: input/label count mismatch");
  if (num_classes == 0) throw ShapeError("dataset: num_classes must be positive");
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].shape() != input_shape) {
      throw ShapeError("dataset: sample " + std::to_string(i) + " has shape " + shape_string(inputs[i].shape()));
    }
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw ShapeError("dataset: sample " + std::to_string(i) + " label out of range");
    }
  }
}

// ---- small kernels --------------------------------------------------------

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Circular convolution of single planes through a padded copy of the input:
// zp[u,v] = z[(u-kx+1) mod H, (v-ky+1) mod W], so that
// z[(i-a) mod H, (j-b) mod W] = zp[i-a+kx-1, j-b+ky-1].
struct PlaneConv {
  std::size_t H, W, kx, ky, Hp, Wp;
  PlaneConv(std::size_t h, std::size_t w, std::size_t kx_, std::size_t ky_)
      : H(h), W(w), kx(kx_), ky(ky_), Hp(h + kx_ - 1), Wp(w + ky_ - 1) {}

  void pad_back(const double* z, double* zp) const {
    for (std::size_t u = 0; u < Hp; ++u) {
      const double* row = z + ((u + H * kx - (kx - 1)) % H) * W;
      for (std::size_t v = 0; v < Wp; ++v) zp[u * Wp + v] = row[(v + W * ky - (ky - 1)) % W];
    }
  }
  void pad_forward(const double* z, double* zp) const {
    for (std::size_t u = 0; u < Hp; ++u) {
      const double* row = z + (u % H) * W;
      for (std::size_t v = 0; v < Wp; ++v) zp[u * Wp + v] = row[v % W];
    }
  }
  // w[i,j] = sum_{a,b} c[a,b] z[(i-a) mod H, (j-b) mod W], zp from pad_back
  void conv(const double* zp, const double* c, double* w) const {
    std::fill(w, w + H * W, 0.0);
    for (std::size_t a = 0; a < kx; ++a)
      for (std::size_t b = 0; b < ky; ++b) {
        const double cab = c[a * ky + b];
        for (std::size_t i = 0; i < H; ++i) {
          const double* src = zp + (i + kx - 1 - a) * Wp + (ky - 1 - b);
          double* dst = w + i * W;
          for (std::size_t j = 0; j < W; ++j) dst[j] += cab * src[j];
        }
      }
  }
  // dz[p,q] = sum_{a,b} c[a,b] dw[(p+a) mod H, (q+b) mod W], dwp from pad_forward
  void corr(const double* dwp, const double* c, double* dz) const {
    std::fill(dz, dz + H * W, 0.0);
    for (std::size_t a = 0; a < kx; ++a)
      for (std::size_t b = 0; b < ky; ++b) {
        const double cab = c[a * ky + b];
        for (std::size_t p = 0; p < H; ++p) {
          const double* src = dwp + (p + a) * Wp + b;
          double* dst = dz + p * W;
          for (std::size_t q = 0; q < W; ++q) dst[q] += cab * src[q];
        }
      }
  }
  // dc[a,b] += sum_{i,j} g[i,j] z[(i-a) mod H, (j-b) mod W], zp from pad_back
  void kernel_grad(const double* zp, const double* g, double* dc) const {
    for (std::size_t a = 0; a < kx; ++a)
      for (std::size_t b = 0; b < ky; ++b) {
        double acc = 0.0;
        for (std::size_t i = 0; i < H; ++i) {
          const double* src = zp + (i + kx - 1 - a) * Wp + (ky - 1 - b);
          const double* gr = g + i * W;
          for (std::size_t j = 0; j < W; ++j) acc += gr[j] * src[j];
        }
        dc[a * ky + b] += acc;
      }
  }
};

// Channel factors of a CP conv kernel gathered as columns.
struct CpConvFactors {
  Eigen::MatrixXd A;  // s x R
  Eigen::MatrixXd B;  // o x R
  Eigen::VectorXd lam;
  explicit CpConvFactors(const Layer& l) : A(l.s, l.cp.width()), B(l.o, l.cp.width()), lam(l.cp.width()) {
    for (std::size_t r = 0; r < l.cp.width(); ++r) {
      const auto& f = l.cp.factors[r];
      for (std::size_t i = 0; i < l.s; ++i) A(i, r) = f[0][i];
      for (std::size_t i = 0; i < l.o; ++i) B(i, r) = f[1][i];
      lam(r) = l.cp.lambdas[r];
    }
  }
};

Eigen::Map<const RowMat> as_rows(const DenseTensor& t, std::size_t rows, std::size_t cols) {
  return Eigen::Map<const RowMat>(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

Eigen::Map<RowMat> as_rows(DenseTensor& t, std::size_t rows, std::size_t cols) {
  return Eigen::Map<RowMat>(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename F>
void for_components(std::size_t R, Execution exec, F&& f) {
  if (exec == Execution::parallel && R > 1) {
    const long n = static_cast<long>(R);
#pragma omp parallel for schedule(static) num_threads(thread_cap())
    for (long r = 0; r < n; ++r) f(static_cast<std::size_t>(r));
  } else {
    for (std::size_t r = 0; r < R; ++r) f(r);
  }
}

// C = op(A) * op(B) for row-major 2D tensors.
DenseTensor matmul(const DenseTensor& a, bool ta, const DenseTensor& b, bool tb) {
  const std::size_t m = ta ? a.dim(1) : a.dim(0), k = ta ? a.dim(0) : a.dim(1);
  const std::size_t kb = tb ? b.dim(1) : b.dim(0), n = tb ? b.dim(0) : b.dim(1);
  if (k != kb) throw ShapeError("matmul: inner dimensions differ");
  DenseTensor c({m, n});
  const std::size_t ac = a.dim(1), bc = b.dim(1);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ta ? a[p * ac + i] : a[i * ac + p];
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += av * (tb ? b[j * bc + p] : b[p * bc + j]);
    }
  return c;
}

void check_input(const Layer& layer, const DenseTensor& x, const char* who) {
  if (layer.is_conv()) {
    if (x.rank() != 3 || x.dim(2) != layer.s) {
      throw ShapeError(std::string(who) + ": conv input " + shape_string(x.shape()) + " has wrong channel count");
    }
  } else if (x.shape() != Shape{layer.s1, layer.s2}) {
    throw ShapeError(std::string(who) + ": fc input " + shape_string(x.shape()) + " is not s1 x s2");
  }
}

void check_output(const Layer& layer, const DenseTensor& y, const char* who) {
  if (layer.is_conv()) {
    if (y.rank() != 3 || y.dim(2) != layer.o) throw ShapeError(std::string(who) + ": conv output has wrong channels");
  } else if (y.shape() != Shape{layer.o1, layer.o2}) {
    throw ShapeError(std::string(who) + ": fc output " + shape_string(y.shape()) + " is not o1 x o2");
  }
}

void add_into(DenseTensor& dst, const DenseTensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

DenseTensor apply_linear(const Layer& layer, const DenseTensor& x, Execution exec) {
  check_input(layer, x, "apply_linear");
  switch (layer.kind) {
    case LayerKind::conv_dense: return conv2d_circular(x, layer.dense, exec);
    case LayerKind::conv_cp: {
      const std::size_t H = x.dim(0), W = x.dim(1), HW = H * W, R = layer.cp.width();
      const CpConvFactors F(layer);
      const PlaneConv pc(H, W, layer.kx, layer.ky);
      const Eigen::MatrixXd Z = as_rows(x, HW, layer.s) * F.A;
      Eigen::MatrixXd Wm(HW, R);
      for_components(R, exec, [&](std::size_t r) {
        std::vector<double> zp(pc.Hp * pc.Wp);
        pc.pad_back(Z.col(static_cast<Eigen::Index>(r)).data(), zp.data());
        pc.conv(zp.data(), layer.cp.factors[r][2].data().data(), Wm.col(static_cast<Eigen::Index>(r)).data());
      });
      DenseTensor y({H, W, layer.o});
      as_rows(y, HW, layer.o).noalias() = (Wm * F.lam.asDiagonal()) * F.B.transpose();
      return y;
    }
    case LayerKind::fc_dense: {
      const std::size_t in = layer.s1 * layer.s2, out = layer.o1 * layer.o2;
      DenseTensor y({layer.o1, layer.o2});
      for (std::size_t kl = 0; kl < in; ++kl) {
        const double xv = x[kl];
        if (xv == 0.0) continue;
        const double* row = layer.dense.data().data() + kl * out;
        for (std::size_t ij = 0; ij < out; ++ij) y[ij] += row[ij] * xv;
      }
      return y;
    }
    case LayerKind::fc_cp: {
      DenseTensor y({layer.o1, layer.o2});
      for (std::size_t r = 0; r < layer.cp.width(); ++r) {
        const auto& f = layer.cp.factors[r];
        const double lam = layer.cp.lambdas[r];
        if (layer.fc_mode == FcMode::vectors) {
          double u = 0.0;
          for (std::size_t k = 0; k < layer.s1; ++k)
            for (std::size_t l = 0; l < layer.s2; ++l) u += f[0][k] * x[k * layer.s2 + l] * f[1][l];
          for (std::size_t i = 0; i < layer.o1; ++i)
            for (std::size_t j = 0; j < layer.o2; ++j) y[i * layer.o2 + j] += lam * u * f[2][i] * f[3][j];
        } else {
          const DenseTensor t = matmul(matmul(f[0], false, x, false), false, f[1], true);
          for (std::size_t i = 0; i < y.size(); ++i) y[i] += lam * t[i];
        }
      }
      return y;
    }
  }
  throw std::logic_error("apply_linear: unknown layer kind");
}

DenseTensor apply_linear_adjoint(const Layer& layer, const DenseTensor& dy, Execution exec) {
  check_output(layer, dy, "apply_linear_adjoint");
  switch (layer.kind) {
    case LayerKind::conv_dense: return conv2d_circular_adjoint(dy, layer.dense, exec);
    case LayerKind::conv_cp: {
      const std::size_t H = dy.dim(0), W = dy.dim(1), HW = H * W, R = layer.cp.width();
      const CpConvFactors F(layer);
      const PlaneConv pc(H, W, layer.kx, layer.ky);
      const Eigen::MatrixXd G = (as_rows(dy, HW, layer.o) * F.B) * F.lam.asDiagonal();
      Eigen::MatrixXd dZ(HW, R);
      for_components(R, exec, [&](std::size_t r) {
        std::vector<double> gp(pc.Hp * pc.Wp);
        pc.pad_forward(G.col(static_cast<Eigen::Index>(r)).data(), gp.data());
        pc.corr(gp.data(), layer.cp.factors[r][2].data().data(), dZ.col(static_cast<Eigen::Index>(r)).data());
      });
      DenseTensor dx({H, W, layer.s});
      as_rows(dx, HW, layer.s).noalias() = dZ * F.A.transpose();
      return dx;
    }
    case LayerKind::fc_dense: {
      const std::size_t in = layer.s1 * layer.s2, out = layer.o1 * layer.o2;
      DenseTensor dx({layer.s1, layer.s2});
      for (std::size_t kl = 0; kl < in; ++kl) {
        const double* row = layer.dense.data().data() + kl * out;
        double acc = 0.0;
        for (std::size_t ij = 0; ij < out; ++ij) acc += row[ij] * dy[ij];
        dx[kl] = acc;
      }
      return dx;
    }
    case LayerKind::fc_cp: {
      DenseTensor dx({layer.s1, layer.s2});
      for (std::size_t r = 0; r < layer.cp.width(); ++r) {
        const auto& f = layer.cp.factors[r];
        const double lam = layer.cp.lambdas[r];
        if (layer.fc_mode == FcMode::vectors) {
          double p = 0.0;
          for (std::size_t i = 0; i < layer.o1; ++i)
            for (std::size_t j = 0; j < layer.o2; ++j) p += f[2][i] * dy[i * layer.o2 + j] * f[3][j];
          for (std::size_t k = 0; k < layer.s1; ++k)
            for (std::size_t l = 0; l < layer.s2; ++l) dx[k * layer.s2 + l] += lam * p * f[0][k] * f[1][l];
        } else {
          const DenseTensor t = matmul(matmul(f[0], true, dy, false), false, f[1], false);
          for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += lam * t[i];
        }
      }
      return dx;
    }
  }
  throw std::logic_error("apply_linear_adjoint: unknown layer kind");
}

namespace {

// Adds parameter gradients of <dy, M(x)> into `g` and returns dL/dx of the
// linear part.
DenseTensor layer_backward(const Layer& layer, const DenseTensor& x, const DenseTensor& dy, Layer& g) {
  switch (layer.kind) {
    case LayerKind::conv_dense: {
      add_into(g.dense, conv2d_circular_kernel_grad(x, dy, layer.kx, layer.ky));
      return conv2d_circular_adjoint(dy, layer.dense, Execution::serial);
    }
    case LayerKind::conv_cp: {
      const std::size_t H = x.dim(0), W = x.dim(1), HW = H * W, R = layer.cp.width();
      const CpConvFactors F(layer);
      const PlaneConv pc(H, W, layer.kx, layer.ky);
      const auto X = as_rows(x, HW, layer.s);
      const auto dY = as_rows(dy, HW, layer.o);
      const Eigen::MatrixXd Z = X * F.A;
      Eigen::MatrixXd Wm(HW, R), dZ(HW, R);
      const Eigen::MatrixXd G = dY * F.B;
      const Eigen::MatrixXd Gl = G * F.lam.asDiagonal();
      std::vector<double> zp(pc.Hp * pc.Wp), gp(pc.Hp * pc.Wp);
      for (std::size_t r = 0; r < R; ++r) {
        const auto ri = static_cast<Eigen::Index>(r);
        const double* cv = layer.cp.factors[r][2].data().data();
        pc.pad_back(Z.col(ri).data(), zp.data());
        pc.conv(zp.data(), cv, Wm.col(ri).data());
        pc.kernel_grad(zp.data(), Gl.col(ri).data(), g.cp.factors[r][2].data().data());
        pc.pad_forward(Gl.col(ri).data(), gp.data());
        pc.corr(gp.data(), cv, dZ.col(ri).data());
      }
      const Eigen::VectorXd dlam = Wm.cwiseProduct(G).colwise().sum().transpose();
      const Eigen::MatrixXd dB = (dY.transpose() * Wm) * F.lam.asDiagonal();
      const Eigen::MatrixXd dA = X.transpose() * dZ;
      for (std::size_t r = 0; r < R; ++r) {
        const auto ri = static_cast<Eigen::Index>(r);
        g.cp.lambdas[r] += dlam(ri);
        auto& gf = g.cp.factors[r];
        for (std::size_t i = 0; i < layer.s; ++i) gf[0][i] += dA(static_cast<Eigen::Index>(i), ri);
        for (std::size_t i = 0; i < layer.o; ++i) gf[1][i] += dB(static_cast<Eigen::Index>(i), ri);
      }
      DenseTensor dx({H, W, layer.s});
      as_rows(dx, HW, layer.s).noalias() = dZ * F.A.transpose();
      return dx;
    }
    case LayerKind::fc_dense: {
      const std::size_t in = layer.s1 * layer.s2, out = layer.o1 * layer.o2;
      for (std::size_t kl = 0; kl < in; ++kl) {
        const double xv = x[kl];
        if (xv == 0.0) continue;
        double* row = g.dense.data().data() + kl * out;
        for (std::size_t ij = 0; ij < out; ++ij) row[ij] += xv * dy[ij];
      }
      return apply_linear_adjoint(layer, dy, Execution::serial);
    }
    case LayerKind::fc_cp: {
      const std::size_t s1 = layer.s1, s2 = layer.s2, o1 = layer.o1, o2 = layer.o2;
      DenseTensor dx({s1, s2});
      for (std::size_t r = 0; r < layer.cp.width(); ++r) {
        const auto& f = layer.cp.factors[r];
        auto& gf = g.cp.factors[r];
        const double lam = layer.cp.lambdas[r];
        if (layer.fc_mode == FcMode::vectors) {
          std::vector<double> xb(s1, 0.0), xa(s2, 0.0), dyd(o1, 0.0), dyc(o2, 0.0);
          double u = 0.0, p = 0.0;
          for (std::size_t k = 0; k < s1; ++k)
            for (std::size_t l = 0; l < s2; ++l) {
              const double xv = x[k * s2 + l];
              xb[k] += xv * f[1][l];
              xa[l] += xv * f[0][k];
            }
          for (std::size_t k = 0; k < s1; ++k) u += f[0][k] * xb[k];
          for (std::size_t i = 0; i < o1; ++i)
            for (std::size_t j = 0; j < o2; ++j) {
              const double v = dy[i * o2 + j];
              dyd[i] += v * f[3][j];
              dyc[j] += v * f[2][i];
            }
          for (std::size_t i = 0; i < o1; ++i) p += f[2][i] * dyd[i];
          g.cp.lambdas[r] += u * p;
          for (std::size_t k = 0; k < s1; ++k) gf[0][k] += lam * p * xb[k];
          for (std::size_t l = 0; l < s2; ++l) gf[1][l] += lam * p * xa[l];
          for (std::size_t i = 0; i < o1; ++i) gf[2][i] += lam * u * dyd[i];
          for (std::size_t j = 0; j < o2; ++j) gf[3][j] += lam * u * dyc[j];
          for (std::size_t k = 0; k < s1; ++k)
            for (std::size_t l = 0; l < s2; ++l) dx[k * s2 + l] += lam * p * f[0][k] * f[1][l];
        } else {
          const DenseTensor& k1 = f[0];
          const DenseTensor& k2 = f[1];
          const DenseTensor k1x = matmul(k1, false, x, false);      // o1 x s2
          const DenseTensor resp = matmul(k1x, false, k2, true);    // o1 x o2
          g.cp.lambdas[r] += dot(resp.data(), dy.data());
          const DenseTensor dyk2 = matmul(dy, false, k2, false);    // o1 x s2
          add_into(gf[0], lam * matmul(dyk2, false, x, true));      // o1 x s1
          add_into(gf[1], lam * matmul(dy, true, k1x, false));      // o2 x s2
          add_into(dx, lam * matmul(k1, true, dyk2, false));        // s1 x s2
        }
      }
      return dx;
    }
  }
  throw std::logic_error("layer_backward: unknown layer kind");
}

DenseTensor relu(const DenseTensor& t) {
  DenseTensor out = t;
  for (auto& v : out.storage()) v = v > 0.0 ? v : 0.0;
  return out;
}

}  // namespace

Shape layer_input_shape(const NetworkModel& model, std::size_t k) {
  const Layer& l = model.layers.at(k);
  if (l.is_conv()) return {model.input_shape.at(0), model.input_shape.at(1), l.s};
  return {l.s1, l.s2};
}

Shape layer_output_shape(const NetworkModel& model, std::size_t k) {
  const Layer& l = model.layers.at(k);
  if (l.is_conv()) return {model.input_shape.at(0), model.input_shape.at(1), l.o};
  return {l.o1, l.o2};
}

namespace {

std::vector<double> readout(const NetworkModel& model, const DenseTensor& y) {
  if (!model.is_conv()) return y.storage();
  const std::size_t HW = y.dim(0) * y.dim(1), T = y.dim(2);
  const double scale = 1.0 / std::sqrt(static_cast<double>(HW));
  std::vector<double> scores(T, 0.0);
  for (std::size_t p = 0; p < HW; ++p)
    for (std::size_t t = 0; t < T; ++t) scores[t] += y[p * T + t];
  for (auto& v : scores) v *= scale;
  return scores;
}

DenseTensor readout_adjoint(const NetworkModel& model, std::span<const double> dscores) {
  const Shape out = layer_output_shape(model, model.layers.size() - 1);
  DenseTensor dy(out);
  if (!model.is_conv()) {
    std::copy(dscores.begin(), dscores.end(), dy.storage().begin());
    return dy;
  }
  const std::size_t HW = out[0] * out[1], T = out[2];
  const double scale = 1.0 / std::sqrt(static_cast<double>(HW));
  for (std::size_t p = 0; p < HW; ++p)
    for (std::size_t t = 0; t < T; ++t) dy[p * T + t] = scale * dscores[t];
  return dy;
}

DenseTensor prepare_input(const NetworkModel& model, const DenseTensor& x) {
  if (x.shape() != model.input_shape) {
    throw ShapeError("input shape " + shape_string(x.shape()) + " does not match model input " +
                     shape_string(model.input_shape));
  }
  if (model.is_conv()) return x;
  return reshape(x, layer_input_shape(model, 0));
}

}  // namespace

ForwardResult forward(const NetworkModel& model, const DenseTensor& x, Execution exec) {
  ForwardResult res;
  auto& tr = res.trace;
  DenseTensor cur = prepare_input(model, x);
  const std::size_t n = model.layers.size();
  for (std::size_t k = 0; k < n; ++k) {
    const Layer& l = model.layers[k];
    DenseTensor y;
    try {
      y = apply_linear(l, cur, exec);
    } catch (const ShapeError& e) {
      throw ShapeError("layer " + std::to_string(k) + ": " + e.what());
    }
    if (l.skip) add_into(y, cur);
    tr.input_norms.push_back(frobenius_norm(cur));
    tr.output_norms.push_back(frobenius_norm(y));
    tr.inputs.push_back(std::move(cur));
    if (k + 1 < n) {
      try {
        cur = reshape(relu(y), layer_input_shape(model, k + 1));
      } catch (const ShapeError& e) {
        throw ShapeError("layer " + std::to_string(k + 1) + ": " + e.what());
      }
    }
    tr.outputs.push_back(std::move(y));
  }
  res.scores = readout(model, tr.outputs.back());
  return res;
}

DenseTensor network_output(const NetworkModel& model, const DenseTensor& x, Execution exec) {
  DenseTensor cur = prepare_input(model, x);
  const std::size_t n = model.layers.size();
  for (std::size_t k = 0; k < n; ++k) {
    const Layer& l = model.layers[k];
    DenseTensor y = apply_linear(l, cur, exec);
    if (l.skip) add_into(y, cur);
    if (k + 1 == n) return y;
    cur = reshape(relu(y), layer_input_shape(model, k + 1));
  }
  return cur;
}

std::vector<double> predict(const NetworkModel& model, const DenseTensor& x, Execution exec) {
  return readout(model, network_output(model, x, exec));
}

std::vector<std::vector<double>> predict_all(const NetworkModel& model, const Dataset& data, Execution exec) {
  model.validate();
  for (const auto& x : data.inputs) {
    if (x.shape() != model.input_shape) throw ShapeError("dataset sample shape does not match the model input");
  }
  std::vector<std::vector<double>> out(data.size());
  const long n = static_cast<long>(data.size());
  if (exec == Execution::parallel) {
#pragma omp parallel for schedule(dynamic) num_threads(thread_cap())
    for (long i = 0; i < n; ++i) out[i] = predict(model, data.inputs[i], Execution::serial);
  } else {
    for (long i = 0; i < n; ++i) out[i] = predict(model, data.inputs[i], Execution::serial);
  }
  return out;
}

Gradients zeros_like(const NetworkModel& model) {
  Gradients g = model;
  for (auto& l : g.layers) {
    for (auto& v : l.dense.storage()) v = 0.0;
    for (auto& v : l.cp.lambdas) v = 0.0;
    for (auto& comp : l.cp.factors)
      for (auto& f : comp)
        for (auto& v : f.storage()) v = 0.0;
  }
  return g;
}

std::vector<std::span<double>> parameter_blocks(NetworkModel& model) {
  std::vector<std::span<double>> out;
  for (auto& l : model.layers) {
    if (!l.is_cp()) {
      out.push_back(l.dense.data());
      continue;
    }
    if (!l.cp.lambdas.empty()) out.emplace_back(l.cp.lambdas);
    for (auto& comp : l.cp.factors)
      for (auto& f : comp) out.push_back(f.data());
  }
  return out;
}

std::vector<std::span<const double>> parameter_blocks(const NetworkModel& model) {
  auto blocks = parameter_blocks(const_cast<NetworkModel&>(model));
  return {blocks.begin(), blocks.end()};
}

double cross_entropy(std::span<const double> scores, int label) {
  const double mx = *std::max_element(scores.begin(), scores.end());
  double z = 0.0;
  for (double s : scores) z += std::exp(s - mx);
  return std::log(z) + mx - scores[static_cast<std::size_t>(label)];
}

SampleLoss accumulate_gradient(const NetworkModel& model, const DenseTensor& x, int label, Gradients& grad) {
  const ForwardResult fr = forward(model, x, Execution::serial);
  const auto& sc = fr.scores;
  if (label < 0 || static_cast<std::size_t>(label) >= sc.size()) throw std::invalid_argument("label out of range");
  SampleLoss res;
  res.loss = cross_entropy(sc, label);
  res.correct = margin(sc, label) > 0.0;

  const double mx = *std::max_element(sc.begin(), sc.end());
  std::vector<double> p(sc.size());
  double z = 0.0;
  for (std::size_t i = 0; i < sc.size(); ++i) z += (p[i] = std::exp(sc[i] - mx));
  for (auto& v : p) v /= z;
  p[static_cast<std::size_t>(label)] -= 1.0;

  DenseTensor dy = readout_adjoint(model, p);
  for (std::size_t k = model.layers.size(); k-- > 0;) {
    const Layer& l = model.layers[k];
    DenseTensor dx = layer_backward(l, fr.trace.inputs[k], dy, grad.layers[k]);
    if (l.skip) add_into(dx, dy);
    if (k == 0) break;
    const DenseTensor& yprev = fr.trace.outputs[k - 1];
    dy = reshape(dx, yprev.shape());
    for (std::size_t i = 0; i < dy.size(); ++i)
      if (!(yprev[i] > 0.0)) dy[i] = 0.0;
  }
  return res;
}

Gradients backward(const NetworkModel& model, const DenseTensor& x, int label) {
  Gradients g = zeros_like(model);
  accumulate_gradient(model, x, label, g);
  return g;
}

BatchGradient batch_gradient(const NetworkModel& model, const Dataset& data, std::span<const std::size_t> indices,
                             Execution exec) {
  if (indices.empty()) throw std::invalid_argument("batch_gradient: empty batch");
  for (std::size_t i : indices) {
    if (i >= data.size()) throw std::out_of_range("batch_gradient: sample index out of range");
    if (data.inputs[i].shape() != model.input_shape) throw ShapeError("batch_gradient: sample shape mismatch");
  }
  const std::size_t n = indices.size();
  std::vector<Gradients> per(n);
  std::vector<SampleLoss> losses(n);
  const auto one = [&](std::size_t b) {
    per[b] = zeros_like(model);
    losses[b] = accumulate_gradient(model, data.inputs[indices[b]], data.labels[indices[b]], per[b]);
  };
  if (exec == Execution::parallel) {
    const long nl = static_cast<long>(n);
#pragma omp parallel for schedule(dynamic) num_threads(thread_cap())
    for (long b = 0; b < nl; ++b) one(static_cast<std::size_t>(b));
  } else {
    for (std::size_t b = 0; b < n; ++b) one(b);
  }

  BatchGradient out;
  out.grad = std::move(per[0]);
  auto dst = parameter_blocks(out.grad);
  for (std::size_t b = 1; b < n; ++b) {
    const auto src = parameter_blocks(per[b]);
    for (std::size_t q = 0; q < dst.size(); ++q)
      for (std::size_t i = 0; i < dst[q].size(); ++i) dst[q][i] += src[q][i];
  }
  const double inv = 1.0 / static_cast<double>(n);
  for (auto& blk : dst)
    for (auto& v : blk) v *= inv;
  for (const auto& l : losses) {
    out.mean_loss += l.loss;
    out.correct += l.correct ? 1 : 0;
  }
  out.mean_loss *= inv;
  return out;
}

double margin(std::span<const double> scores, int label) {
  const auto y = static_cast<std::size_t>(label);
  if (y >= scores.size()) throw std::invalid_argument("margin: label out of range");
  double best_other = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (i != y) best_other = std::max(best_other, scores[i]);
  return scores[y] - best_other;
}

std::vector<double> margins(const NetworkModel& model, const Dataset& data, Execution exec) {
  const auto scores = predict_all(model, data, exec);
  std::vector<double> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = margin(scores[i], data.labels[i]);
  return out;
}

double margin_loss_from_margins(std::span<const double> m, double gamma) {
  if (!(gamma >= 0.0)) throw std::invalid_argument("margin_loss: gamma must be non-negative");
  if (m.empty()) throw std::invalid_argument("margin_loss: empty dataset");
  std::size_t bad = 0;
  for (double v : m) bad += v <= gamma ? 1 : 0;
  return static_cast<double>(bad) / static_cast<double>(m.size());
}

double margin_loss(const NetworkModel& model, const Dataset& data, double gamma) {
  return margin_loss_from_margins(margins(model, data), gamma);
}

double accuracy(const NetworkModel& model, const Dataset& data) {
  if (data.size() == 0) throw std::invalid_argument("accuracy: empty dataset");
  const auto m = margins(model, data);
  std::size_t ok = 0;
  for (double v : m) ok += v > 0.0 ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(m.size());
}

NetworkModel densify(const NetworkModel& model) {
  NetworkModel out = model;
  for (auto& l : out.layers) {
    if (!l.is_cp()) continue;
    const bool skip = l.skip;
    l = l.is_conv() ? Layer::conv_dense_layer(l.dense_kernel()) : Layer::fc_dense_layer(l.dense_kernel());
    l.skip = skip;
  }
  return out;
}

std::size_t layer_rank_cap(const Layer& layer, FcMode fc_mode) {
  if (layer.is_conv()) return cp_rank_cap({{layer.s}, {layer.o}, {layer.kx, layer.ky}});
  if (fc_mode == FcMode::vectors) return cp_rank_cap({{layer.s1}, {layer.s2}, {layer.o1}, {layer.o2}});
  return cp_rank_cap({{layer.o1, layer.s1}, {layer.o2, layer.s2}});
}

CpifyResult cp_ify(const NetworkModel& model, const std::vector<std::size_t>& ranks, const AlsOptions& options,
                   FcMode fc_mode) {
  model.validate();
  if (!ranks.empty() && ranks.size() != model.layers.size()) {
    throw std::invalid_argument("cp_ify: got " + std::to_string(ranks.size()) + " ranks for " +
                                std::to_string(model.layers.size()) + " layers");
  }
  CpifyResult res;
  res.model = model;
  res.errors.assign(model.layers.size(), 0.0);
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    Layer& l = res.model.layers[k];
    if (l.is_cp()) continue;
    const FcMode mode = l.is_conv() ? FcMode::vectors : fc_mode;
    const std::size_t cap = layer_rank_cap(l, mode);
    const std::size_t rank = ranks.empty() || ranks[k] == 0 ? cap : ranks[k];
    if (rank > cap) {
      throw std::invalid_argument("cp_ify: layer " + std::to_string(k) + " rank " + std::to_string(rank) +
                                  " exceeds the cap " + std::to_string(cap));
    }
    const bool skip = l.skip;
    AlsResult als;
    if (l.is_conv()) {
      als = cp_als(conv_dense_to_cp_order(l.dense), rank, {{0}, {1}, {2, 3}}, options);
      l = Layer::conv_cp_layer(std::move(als.kernel));
    } else if (mode == FcMode::vectors) {
      als = cp_als(l.dense, rank, {{0}, {1}, {2}, {3}}, options);
      l = Layer::fc_cp_layer(std::move(als.kernel), FcMode::vectors);
    } else {
      als = cp_als(permute(l.dense, {2, 0, 3, 1}), rank, {{0, 1}, {2, 3}}, options);
      l = Layer::fc_cp_layer(std::move(als.kernel), FcMode::matrices);
    }
    l.skip = skip;
    res.errors[k] = als.rel_error;
  }
  return res;
}

std::pair<std::size_t, std::size_t> near_square(std::size_t n) {
  if (n == 0) throw std::invalid_argument("near_square: n must be positive");
  std::size_t a = static_cast<std::size_t>(std::sqrt(static_cast<double>(n)));
  while (a > 1 && n % a != 0) --a;
  return {a, n / a};
}

namespace {

DenseTensor unit_normal(const Shape& shape, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  DenseTensor t(shape);
  for (auto& v : t.storage()) v = nd(rng);
  const double n = frobenius_norm(t);
  for (auto& v : t.storage()) v /= n;
  return t;
}

// Unit-norm random factors, every component with amplitude `lambda`.
CPKernel random_kernel(const std::vector<Shape>& modes, std::size_t rank, double lambda, std::mt19937_64& rng) {
  CPKernel k(modes);
  for (std::size_t r = 0; r < rank; ++r) {
    std::vector<DenseTensor> fs;
    for (const auto& m : modes) fs.push_back(unit_normal(m, rng));
    k.add_component(lambda, std::move(fs));
  }
  return k;
}

DenseTensor he_dense(const Shape& shape, std::size_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  DenseTensor t(shape);
  for (auto& v : t.storage()) v = nd(rng);
  return t;
}

std::size_t pick_rank(const PresetOptions& opts, std::size_t k, std::size_t cap) {
  if (opts.ranks.empty()) return cap;
  if (opts.ranks.size() <= k) throw std::invalid_argument("preset: not enough ranks given");
  const std::size_t r = opts.ranks[k] == 0 ? cap : opts.ranks[k];
  if (r > cap) throw std::invalid_argument("preset: rank " + std::to_string(r) + " exceeds cap " + std::to_string(cap));
  return r;
}

}  // namespace

NetworkModel make_cnn(const Shape& input_shape, const std::vector<std::size_t>& channels, std::size_t kernel,
                      const PresetOptions& opts) {
  if (input_shape.size() != 3) throw ShapeError("make_cnn: input shape must be H x W x C");
  if (channels.size() < 2 || channels.front() != input_shape[2])
    throw ShapeError("make_cnn: channel list must start with the input channel count");
  if (kernel == 0) throw std::invalid_argument("make_cnn: kernel size must be positive");
  std::mt19937_64 rng(opts.seed);
  NetworkModel m;
  m.input_shape = input_shape;
  for (std::size_t k = 0; k + 1 < channels.size(); ++k) {
    const std::size_t s = channels[k], o = channels[k + 1];
    if (opts.cp) {
      const std::vector<Shape> modes{{s}, {o}, {kernel, kernel}};
      const std::size_t rank = pick_rank(opts, k, cp_rank_cap(modes));
      const double lam = std::sqrt(2.0 * static_cast<double>(o) / static_cast<double>(rank));
      m.layers.push_back(Layer::conv_cp_layer(normalize(random_kernel(modes, rank, lam, rng)).kernel));
    } else {
      m.layers.push_back(Layer::conv_dense_layer(he_dense({kernel, kernel, o, s}, kernel * kernel * s, rng)));
    }
  }
  m.validate();
  return m;
}

NetworkModel make_toy_cnn(const PresetOptions& opts) {
  if (opts.num_classes < 2) throw std::invalid_argument("toy-cnn needs at least two classes");
  return make_cnn({8, 8, 1}, {1, 8, 16, opts.num_classes}, 3, opts);
}

NetworkModel make_toy_fc(const PresetOptions& opts) {
  if (opts.num_classes < 2) throw std::invalid_argument("toy-fc needs at least two classes");
  std::mt19937_64 rng(opts.seed);
  NetworkModel m;
  m.input_shape = {16};
  const auto [c1, c2] = near_square(opts.num_classes);
  const std::size_t dims[3][4] = {{4, 4, 4, 4}, {4, 4, 4, 4}, {4, 4, c1, c2}};
  for (std::size_t k = 0; k < 3; ++k) {
    const auto* d = dims[k];
    if (opts.cp) {
      const std::vector<Shape> modes{{d[0]}, {d[1]}, {d[2]}, {d[3]}};
      const std::size_t rank = pick_rank(opts, k, cp_rank_cap(modes));
      const double lam = std::sqrt(2.0 * static_cast<double>(d[2] * d[3]) / static_cast<double>(rank));
      m.layers.push_back(Layer::fc_cp_layer(normalize(random_kernel(modes, rank, lam, rng)).kernel, FcMode::vectors));
    } else {
      m.layers.push_back(Layer::fc_dense_layer(he_dense({d[0], d[1], d[2], d[3]}, d[0] * d[1], rng)));
    }
  }
  m.validate();
  return m;
}

NetworkModel make_preset(const std::string& name, const PresetOptions& options) {
  if (name == "toy-cnn") return make_toy_cnn(options);
  if (name == "toy-fc") return make_toy_fc(options);
  throw std::invalid_argument("unknown preset '" + name + "' (expected toy-cnn or toy-fc)");
}

}  // namespace cpcert
