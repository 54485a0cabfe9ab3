#include "cpcert/cp.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace cpcert {

Shape CPKernel::order_dims() const {
  Shape out;
  for (const auto& m : mode_shapes) out.insert(out.end(), m.begin(), m.end());
  return out;
}

std::size_t CPKernel::parameter_count() const {
  std::size_t per = 1;
  for (const auto& m : mode_shapes) per += shape_size(m);
  return per * width();
}

void CPKernel::add_component(double lambda, std::vector<DenseTensor> component_factors) {
  if (component_factors.size() != mode_shapes.size()) {
    throw ShapeError("CPKernel: component has " + std::to_string(component_factors.size()) + " factors, expected " +
                     std::to_string(mode_shapes.size()));
  }
  for (std::size_t j = 0; j < mode_shapes.size(); ++j) {
    if (component_factors[j].shape() != mode_shapes[j]) {
      throw ShapeError("CPKernel: factor " + std::to_string(j) + " has shape " +
                       shape_string(component_factors[j].shape()) + ", expected " + shape_string(mode_shapes[j]));
    }
  }
  lambdas.push_back(lambda);
  factors.push_back(std::move(component_factors));
}

void CPKernel::validate_shapes() const {
  if (mode_shapes.empty()) throw ShapeError("CPKernel: no modes");
  if (factors.size() != lambdas.size()) throw ShapeError("CPKernel: lambda/factor count mismatch");
  for (std::size_t r = 0; r < factors.size(); ++r) {
    if (factors[r].size() != mode_shapes.size()) throw ShapeError("CPKernel: component " + std::to_string(r) + " has wrong mode count");
    for (std::size_t j = 0; j < mode_shapes.size(); ++j) {
      if (factors[r][j].shape() != mode_shapes[j]) {
        throw ShapeError("CPKernel: component " + std::to_string(r) + " mode " + std::to_string(j) + " has shape " +
                         shape_string(factors[r][j].shape()));
      }
    }
  }
}

bool CPKernel::is_normalized(double tol) const {
  for (std::size_t r = 0; r < width(); ++r) {
    if (lambdas[r] < 0.0) return false;
    if (r > 0 && lambdas[r] > lambdas[r - 1]) return false;
    for (const auto& f : factors[r]) {
      if (std::abs(frobenius_norm(f) - 1.0) > tol) return false;
    }
  }
  return true;
}

DenseTensor reconstruct(const CPKernel& k) {
  k.validate_shapes();
  DenseTensor out(k.order_dims());
  for (std::size_t r = 0; r < k.width(); ++r) {
    const DenseTensor term = tensor_product(k.factors[r]);
    const double lam = k.lambdas[r];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += lam * term[i];
  }
  return out;
}

NormalizeResult normalize(const CPKernel& k) {
  k.validate_shapes();
  NormalizeResult res;
  CPKernel scaled(k.mode_shapes);
  std::vector<std::size_t> kept;
  std::vector<bool> flips;
  for (std::size_t r = 0; r < k.width(); ++r) {
    double lam = k.lambdas[r];
    std::vector<DenseTensor> fs = k.factors[r];
    bool zero = false;
    for (auto& f : fs) {
      const double n = frobenius_norm(f);
      if (n == 0.0) {
        zero = true;
        break;
      }
      for (auto& e : f.storage()) e /= n;
      lam *= n;
    }
    if (zero) {
      ++res.dropped;
      continue;
    }
    flips.push_back(lam < 0.0);
    if (lam < 0.0) {
      lam = -lam;
      for (auto& e : fs[0].storage()) e = -e;
    }
    kept.push_back(r);
    scaled.add_component(lam, std::move(fs));
  }

  std::vector<std::size_t> order(scaled.width());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scaled.lambdas[a] > scaled.lambdas[b]; });
  res.kernel = CPKernel(k.mode_shapes);
  for (std::size_t idx : order) {
    res.kernel.add_component(scaled.lambdas[idx], std::move(scaled.factors[idx]));
    res.source.push_back(kept[idx]);
    res.flipped.push_back(flips[idx]);
  }
  return res;
}

CPKernel truncate(const CPKernel& k, std::size_t rank) {
  if (rank > k.width()) {
    throw std::invalid_argument("truncate: rank " + std::to_string(rank) + " exceeds width " + std::to_string(k.width()));
  }
  CPKernel out(k.mode_shapes);
  out.lambdas.assign(k.lambdas.begin(), k.lambdas.begin() + static_cast<std::ptrdiff_t>(rank));
  out.factors.assign(k.factors.begin(), k.factors.begin() + static_cast<std::ptrdiff_t>(rank));
  return out;
}

std::size_t cp_rank_cap(const std::vector<Shape>& mode_shapes) {
  if (mode_shapes.size() < 2) return mode_shapes.empty() ? 0 : 1;
  std::size_t cap = static_cast<std::size_t>(-1);
  for (std::size_t j = 0; j < mode_shapes.size(); ++j) {
    std::size_t prod = 1;
    for (std::size_t l = 0; l < mode_shapes.size(); ++l)
      if (l != j) prod *= shape_size(mode_shapes[l]);
    cap = std::min(cap, prod);
  }
  return cap;
}

namespace {

using Eigen::MatrixXd;

// Khatri-Rao product of the factor matrices of every mode except `skip`,
// rows enumerating the remaining modes row-major.
MatrixXd khatri_rao_except(const std::vector<MatrixXd>& a, std::size_t skip, std::size_t rank) {
  MatrixXd kr = MatrixXd::Ones(1, static_cast<Eigen::Index>(rank));
  for (std::size_t l = 0; l < a.size(); ++l) {
    if (l == skip) continue;
    const Eigen::Index d = a[l].rows();
    MatrixXd next(kr.rows() * d, kr.cols());
    for (Eigen::Index row = 0; row < kr.rows(); ++row)
      for (Eigen::Index i = 0; i < d; ++i) next.row(row * d + i) = kr.row(row).cwiseProduct(a[l].row(i));
    kr = std::move(next);
  }
  return kr;
}

MatrixXd unfold(const DenseTensor& t, std::size_t mode) {
  std::vector<std::size_t> cols;
  for (std::size_t l = 0; l < t.rank(); ++l)
    if (l != mode) cols.push_back(l);
  const DenseTensor m = matricize(t, {mode}, cols);
  MatrixXd out(static_cast<Eigen::Index>(m.dim(0)), static_cast<Eigen::Index>(m.dim(1)));
  for (std::size_t i = 0; i < m.dim(0); ++i)
    for (std::size_t j = 0; j < m.dim(1); ++j) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m[i * m.dim(1) + j];
  return out;
}

double relative_error(const MatrixXd& x0, const std::vector<MatrixXd>& a, const Eigen::VectorXd& lambda,
                      double xnorm) {
  const MatrixXd kr = khatri_rao_except(a, 0, static_cast<std::size_t>(lambda.size()));
  const MatrixXd approx = a[0] * lambda.asDiagonal() * kr.transpose();
  return (x0 - approx).norm() / xnorm;
}

}  // namespace

AlsResult cp_als(const DenseTensor& t, std::size_t rank, const std::vector<std::vector<std::size_t>>& grouping,
                 const AlsOptions& options) {
  if (rank == 0) throw std::invalid_argument("cp_als: rank must be at least 1");
  if (!all_finite(t)) throw std::invalid_argument("cp_als: tensor has non-finite entries");
  if (grouping.empty()) throw std::invalid_argument("cp_als: empty mode grouping");

  std::vector<std::size_t> perm;
  std::vector<Shape> modes;
  std::vector<bool> seen(t.rank(), false);
  for (const auto& g : grouping) {
    if (g.empty()) throw std::invalid_argument("cp_als: empty mode group");
    Shape ms;
    for (std::size_t ax : g) {
      if (ax >= t.rank() || seen[ax]) throw std::invalid_argument("cp_als: grouping is not a partition of the axes");
      seen[ax] = true;
      perm.push_back(ax);
      ms.push_back(t.dim(ax));
    }
    modes.push_back(ms);
  }
  if (perm.size() != t.rank()) throw std::invalid_argument("cp_als: grouping is not a partition of the axes");
  const std::size_t cap = cp_rank_cap(modes);
  if (rank > cap) {
    throw std::invalid_argument("cp_als: rank " + std::to_string(rank) + " exceeds the exact-decomposition cap " +
                                std::to_string(cap));
  }

  const std::size_t n = modes.size();
  Shape flat_shape;
  for (const auto& m : modes) flat_shape.push_back(shape_size(m));
  const DenseTensor x = reshape(permute(t, perm), flat_shape);
  const double xnorm = frobenius_norm(x);
  const auto R = static_cast<Eigen::Index>(rank);

  AlsResult res;
  if (xnorm == 0.0) {
    res.kernel = CPKernel(modes);
    for (std::size_t r = 0; r < rank; ++r) {
      std::vector<DenseTensor> fs;
      for (const auto& m : modes) {
        DenseTensor f(m);
        f[0] = 1.0;
        fs.push_back(std::move(f));
      }
      res.kernel.add_component(0.0, std::move(fs));
    }
    res.error_history = {0.0};
    return res;
  }

  std::vector<MatrixXd> unf(n);
  for (std::size_t j = 0; j < n; ++j) unf[j] = unfold(x, j);

  struct Run {
    std::vector<MatrixXd> a;
    Eigen::VectorXd lambda;
    double err = 0.0;
    std::size_t iterations = 0;
    std::vector<double> history;
  };
  const auto attempt = [&](std::uint64_t seed) {
    Run run;
    std::vector<MatrixXd>& a = run.a;
    Eigen::VectorXd& lambda = run.lambda;
    a.resize(n);
    lambda = Eigen::VectorXd::Ones(R);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    for (std::size_t l = 0; l < n; ++l) {
      a[l].resize(static_cast<Eigen::Index>(flat_shape[l]), R);
      for (Eigen::Index c = 0; c < R; ++c) {
        for (Eigen::Index i = 0; i < a[l].rows(); ++i) a[l](i, c) = uni(rng);
        a[l].col(c).normalize();
      }
    }
    double err = relative_error(unf[0], a, lambda, xnorm);
    run.history.push_back(err);
    std::size_t it = 0;
    while (it < options.max_iter && err > options.target_error) {
      for (std::size_t j = 0; j < n; ++j) {
        MatrixXd gram = MatrixXd::Ones(R, R);
        for (std::size_t l = 0; l < n; ++l)
          if (l != j) gram = gram.cwiseProduct(a[l].transpose() * a[l]);
        const MatrixXd mttkrp = unf[j] * khatri_rao_except(a, j, rank);
        Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(gram);
        a[j] = cod.solve(mttkrp.transpose()).transpose();
        for (Eigen::Index c = 0; c < R; ++c) {
          const double cn = a[j].col(c).norm();
          lambda(c) = cn;
          if (cn > 0.0) a[j].col(c) /= cn;
        }
      }
      ++it;
      const double next = relative_error(unf[0], a, lambda, xnorm);
      run.history.push_back(next);
      const double improvement = err - next;
      err = next;
      if (improvement < options.improvement_tol) break;
    }
    run.err = err;
    run.iterations = it;
    return run;
  };

  Run best = attempt(options.seed);
  for (std::size_t k = 1; k <= options.restarts && best.err > options.target_error; ++k) {
    Run next = attempt(options.seed + k);
    if (next.err < best.err) best = std::move(next);
  }
  const std::vector<MatrixXd>& a = best.a;
  const Eigen::VectorXd& lambda = best.lambda;
  const double err = best.err;
  res.error_history = std::move(best.history);
  res.iterations = best.iterations;

  CPKernel raw(modes);
  for (Eigen::Index r = 0; r < R; ++r) {
    std::vector<DenseTensor> fs;
    for (std::size_t l = 0; l < n; ++l) {
      DenseTensor f(modes[l]);
      for (Eigen::Index i = 0; i < a[l].rows(); ++i) f[static_cast<std::size_t>(i)] = a[l](i, r);
      fs.push_back(std::move(f));
    }
    raw.add_component(lambda(r), std::move(fs));
  }
  // Components whose factor collapsed to zero contribute nothing; normalize
  // drops them.
  res.kernel = normalize(raw).kernel;
  res.rel_error = err;
  return res;
}

CPKernel make_conv_kernel(std::size_t s, std::size_t o, std::size_t kx, std::size_t ky) {
  return CPKernel({{s}, {o}, {kx, ky}});
}

namespace {
void require_conv_modes(const CPKernel& k, const char* who) {
  if (k.num_modes() != 3 || k.mode_shapes[0].size() != 1 || k.mode_shapes[1].size() != 1 ||
      k.mode_shapes[2].size() != 2) {
    throw ShapeError(std::string(who) + ": expected modes {s},{o},{kx,ky}");
  }
  k.validate_shapes();
}
}  // namespace

DenseTensor conv_cp_dense(const CPKernel& k) {
  require_conv_modes(k, "conv_cp_dense");
  const std::size_t s = k.mode_shapes[0][0], o = k.mode_shapes[1][0];
  const std::size_t kx = k.mode_shapes[2][0], ky = k.mode_shapes[2][1];
  DenseTensor m({kx, ky, o, s});
  for (std::size_t r = 0; r < k.width(); ++r) {
    const auto& av = k.factors[r][0];
    const auto& bv = k.factors[r][1];
    const auto& c = k.factors[r][2];
    const double lam = k.lambdas[r];
    for (std::size_t ab = 0; ab < kx * ky; ++ab) {
      const double lc = lam * c[ab];
      if (lc == 0.0) continue;
      double* blk = m.data().data() + ab * o * s;
      for (std::size_t t = 0; t < o; ++t)
        for (std::size_t q = 0; q < s; ++q) blk[t * s + q] += lc * bv[t] * av[q];
    }
  }
  return m;
}

DenseTensor conv_dense_to_cp_order(const DenseTensor& m) {
  if (m.rank() != 4) throw ShapeError("conv_dense_to_cp_order: expected kx x ky x o x s");
  return permute(m, {3, 2, 0, 1});
}

std::vector<DenseTensor> spatial_spectra(const CPKernel& k, std::size_t spatial_mode, FrequencyGrid grid) {
  if (spatial_mode >= k.num_modes() || k.mode_shapes[spatial_mode].size() != 2) {
    throw ShapeError("spatial_spectra: mode " + std::to_string(spatial_mode) + " is not a kx x ky matrix");
  }
  std::vector<DenseTensor> out;
  out.reserve(k.width());
  for (std::size_t r = 0; r < k.width(); ++r) out.push_back(spatial_spectrum_magnitude(k.factors[r][spatial_mode], grid));
  return out;
}

double opnorm_bound_fc(const CPKernel& k) {
  double s = 0.0;
  for (double l : k.lambdas) s += std::abs(l);
  return s;
}

namespace {
double spectral_bound(const CPKernel& k, std::size_t spatial_mode, FrequencyGrid grid) {
  const auto spectra = spatial_spectra(k, spatial_mode, grid);
  double s = 0.0;
  for (std::size_t r = 0; r < k.width(); ++r) {
    const auto& sp = spectra[r].storage();
    s += std::abs(k.lambdas[r]) * *std::max_element(sp.begin(), sp.end());
  }
  return std::sqrt(static_cast<double>(grid.points())) * s;
}

void require_higher_modes(const CPKernel& k) {
  if (k.num_modes() < 2 || k.mode_shapes[0].size() != 2) throw ShapeError("higher conv kernel: mode 0 must be kx x ky");
  for (std::size_t j = 1; j < k.num_modes(); ++j)
    if (k.mode_shapes[j].size() != 2) throw ShapeError("higher conv kernel: channel modes must be o_i x s_i matrices");
  k.validate_shapes();
}
}  // namespace

double opnorm_bound_conv(const CPKernel& k, FrequencyGrid grid) {
  require_conv_modes(k, "opnorm_bound_conv");
  return spectral_bound(k, 2, grid);
}

double opnorm_bound_higher_conv(const CPKernel& k, FrequencyGrid grid) {
  require_higher_modes(k);
  return spectral_bound(k, 0, grid);
}

DenseTensor higher_conv_dense(const CPKernel& k) {
  require_higher_modes(k);
  const std::size_t kx = k.mode_shapes[0][0], ky = k.mode_shapes[0][1];
  std::size_t T = 1, S = 1;
  for (std::size_t j = 1; j < k.num_modes(); ++j) {
    T *= k.mode_shapes[j][0];
    S *= k.mode_shapes[j][1];
  }
  DenseTensor m({kx, ky, T, S});
  for (std::size_t r = 0; r < k.width(); ++r) {
    DenseTensor chan = k.factors[r][1];
    for (std::size_t j = 2; j < k.num_modes(); ++j) chan = kronecker(chan, k.factors[r][j]);
    const auto& c = k.factors[r][0];
    for (std::size_t ab = 0; ab < kx * ky; ++ab) {
      const double lc = k.lambdas[r] * c[ab];
      double* blk = m.data().data() + ab * T * S;
      for (std::size_t i = 0; i < T * S; ++i) blk[i] += lc * chan[i];
    }
  }
  return m;
}

}  // namespace cpcert
