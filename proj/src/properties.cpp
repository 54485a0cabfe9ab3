#include "cpcert/properties.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace cpcert {

std::string to_string(TfVariant v) { return v == TfVariant::per_frequency ? "per_frequency" : "per_component"; }

TfVariant parse_tf_variant(const std::string& s) {
  if (s == "per_frequency") return TfVariant::per_frequency;
  if (s == "per_component") return TfVariant::per_component;
  throw std::invalid_argument("unknown tf variant '" + s + "'");
}

namespace {

void require_conv_cp(const CPKernel& k) {
  if (k.num_modes() != 3 || k.mode_shapes[2].size() != 2) throw ShapeError("expected a conv CP kernel ({s},{o},{kx,ky})");
}

}  // namespace

SpectrumProfile spectrum_profile(const CPKernel& k, FrequencyGrid grid, TfVariant variant) {
  require_conv_cp(k);
  const std::size_t R = k.width();
  const auto spectra = spatial_spectra(k, 2, grid);
  SpectrumProfile p;
  p.tf.assign(R, 0.0);
  p.nb.assign(R + 1, 0.0);
  if (variant == TfVariant::per_component) {
    std::vector<double> amp(R);
    for (std::size_t r = 0; r < R; ++r) {
      const auto& sp = spectra[r].storage();
      amp[r] = std::abs(k.lambdas[r]) * *std::max_element(sp.begin(), sp.end());
    }
    double acc = 0.0;
    for (std::size_t r = 0; r < R; ++r) p.tf[r] = (acc += amp[r]);
    acc = 0.0;
    for (std::size_t j = R; j-- > 0;) p.nb[j] = (acc += amp[j]);
    return p;
  }
  const std::size_t F = grid.points();
  std::vector<double> run(F, 0.0);
  for (std::size_t r = 0; r < R; ++r) {
    const double l = std::abs(k.lambdas[r]);
    double m = 0.0;
    for (std::size_t q = 0; q < F; ++q) m = std::max(m, run[q] += l * spectra[r][q]);
    p.tf[r] = m;
  }
  std::fill(run.begin(), run.end(), 0.0);
  for (std::size_t j = R; j-- > 0;) {
    const double l = std::abs(k.lambdas[j]);
    double m = 0.0;
    for (std::size_t q = 0; q < F; ++q) m = std::max(m, run[q] += l * spectra[j][q]);
    p.nb[j] = m;
  }
  return p;
}

SpectrumProfile spectrum_profile_fc(const CPKernel& k) {
  const std::size_t R = k.width();
  SpectrumProfile p;
  p.tf.assign(R, 0.0);
  p.nb.assign(R + 1, 0.0);
  double acc = 0.0;
  for (std::size_t r = 0; r < R; ++r) p.tf[r] = (acc += std::abs(k.lambdas[r]));
  acc = 0.0;
  for (std::size_t j = R; j-- > 0;) p.nb[j] = (acc += std::abs(k.lambdas[j]));
  return p;
}

namespace {

void check_tf_index(const CPKernel& k, std::size_t j) {
  if (j < 1 || j > k.width())
    throw std::out_of_range("tensorization factor index " + std::to_string(j) + " outside 1.." +
                            std::to_string(k.width()));
}

void check_nb_index(const CPKernel& k, std::size_t j) {
  if (j > k.width())
    throw std::out_of_range("noise bound index " + std::to_string(j) + " outside 0.." + std::to_string(k.width()));
}

}  // namespace

double tensorization_factor(const CPKernel& k, std::size_t j, FrequencyGrid grid, TfVariant variant) {
  check_tf_index(k, j);
  return spectrum_profile(k, grid, variant).tf[j - 1];
}

double tensor_noise_bound(const CPKernel& k, std::size_t j, FrequencyGrid grid, TfVariant variant) {
  check_nb_index(k, j);
  return spectrum_profile(k, grid, variant).nb[j];
}

double tensorization_factor_fc(const CPKernel& k, std::size_t j) {
  check_tf_index(k, j);
  return spectrum_profile_fc(k).tf[j - 1];
}

double tensor_noise_bound_fc(const CPKernel& k, std::size_t j) {
  check_nb_index(k, j);
  return spectrum_profile_fc(k).nb[j];
}

double spectral_ratio(const DenseTensor& matrix) {
  if (matrix.rank() != 2) throw ShapeError("spectral_ratio expects a matrix, got " + shape_string(matrix.shape()));
  const double fro = frobenius_norm(matrix);
  if (fro == 0.0) return 0.0;
  // Row-major storage maps to the transpose, which has the same singular values.
  Eigen::Map<const Eigen::MatrixXd> m(matrix.data().data(), static_cast<Eigen::Index>(matrix.dim(1)),
                                      static_cast<Eigen::Index>(matrix.dim(0)));
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  return std::min(1.0, svd.singularValues()(0) / fro);
}

SampleNorms collect_sample_norms(const NetworkModel& model, const Dataset& data, Execution exec) {
  model.validate();
  const std::size_t m = data.size(), n = model.layers.size();
  SampleNorms out;
  out.norms.assign(m, std::vector<double>(n + 1, 0.0));
  out.rf_ratios.assign(m, std::vector<double>(n, 0.0));
  const auto body = [&](std::size_t i) {
    const ForwardResult fr = forward(model, data.inputs[i], Execution::serial);
    for (std::size_t k = 0; k < n; ++k) {
      out.norms[i][k] = fr.trace.input_norms[k];
      if (!model.layers[k].is_conv()) out.rf_ratios[i][k] = spectral_ratio(fr.trace.inputs[k]);
    }
    out.norms[i][n] = fr.trace.output_norms[n - 1];
  };
  if (exec == Execution::serial) {
    for (std::size_t i = 0; i < m; ++i) body(i);
  } else {
#pragma omp parallel for schedule(dynamic) num_threads(thread_cap())
    for (std::size_t i = 0; i < m; ++i) body(i);
  }
  return out;
}

namespace {

double layer_sigma(const NetworkModel& model, const Layer& l) {
  return l.is_conv() ? std::sqrt(static_cast<double>(model.height() * model.width())) : 1.0;
}

CushionResult cushion_from_norms(const NetworkModel& model, std::size_t k, const SampleNorms& sn) {
  const Layer& l = model.layers.at(k);
  const double sigma = layer_sigma(model, l), knorm = l.kernel_norm();
  CushionResult c;
  c.value = std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t i = 0; i < sn.norms.size(); ++i) {
    const double in = sn.norms[i][k], next = sn.norms[i][k + 1];
    // Without biases a vanishing activation zeroes the output, and a relative
    // guarantee says nothing about that sample.
    if (in == 0.0 || sn.norms[i].back() == 0.0) {
      ++c.excluded;
      continue;
    }
    any = true;
    c.multiplier = std::max(c.multiplier, in / next);
    const double v = knorm == 0.0 ? 0.0 : sigma * next / (knorm * in);
    if (v < c.value) {
      c.value = v;
      c.argmin = i;
    }
  }
  if (!any) c.value = 0.0;
  return c;
}

}  // namespace

CushionResult layer_cushion(const NetworkModel& model, std::size_t k, const Dataset& data) {
  if (data.size() == 0) throw std::invalid_argument("layer_cushion: empty dataset");
  return cushion_from_norms(model, k, collect_sample_norms(model, data));
}

double reshaping_factor(const NetworkModel& model, std::size_t k, const Dataset& data) {
  if (model.layers.at(k).is_conv()) throw std::invalid_argument("reshaping_factor: layer " + std::to_string(k) + " is not FC");
  const SampleNorms sn = collect_sample_norms(model, data);
  double rf = 0.0;
  for (const auto& row : sn.rf_ratios) rf = std::max(rf, row[k]);
  return rf;
}

double max_output_norm(const NetworkModel& model, const Dataset& data) {
  const SampleNorms sn = collect_sample_norms(model, data);
  double m = 0.0;
  for (const auto& row : sn.norms) m = std::max(m, row.back());
  return m;
}

PropertyTable compute_properties(const NetworkModel& model, const Dataset& data, Execution exec) {
  model.validate();
  if (data.size() == 0) throw std::invalid_argument("compute_properties: empty dataset");
  for (std::size_t k = 0; k < model.layers.size(); ++k)
    if (!model.layers[k].is_cp())
      throw std::invalid_argument("layer " + std::to_string(k) + " is dense; decompose the model first");
  const SampleNorms sn = collect_sample_norms(model, data, exec);
  PropertyTable t;
  t.samples = data.size();
  for (const auto& row : sn.norms) t.max_output_norm = std::max(t.max_output_norm, row.back());
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    const Layer& l = model.layers[k];
    LayerProperties p;
    p.kind = l.kind;
    p.skip = l.skip;
    p.rank = l.cp.width();
    p.height = model.height();
    p.width = model.width();
    p.sigma = layer_sigma(model, l);
    p.kernel_norm = l.kernel_norm();
    if (l.is_conv()) {
      const FrequencyGrid grid(p.height, p.width);
      p.per_frequency = spectrum_profile(l.cp, grid, TfVariant::per_frequency);
      p.per_component = spectrum_profile(l.cp, grid, TfVariant::per_component);
    } else {
      p.per_frequency = p.per_component = spectrum_profile_fc(l.cp);
      double rf = 0.0;
      for (const auto& row : sn.rf_ratios) rf = std::max(rf, row[k]);
      p.rf = rf;
    }
    p.cushion = cushion_from_norms(model, k, sn);
    t.layers.push_back(std::move(p));
  }
  return t;
}

}  // namespace cpcert
