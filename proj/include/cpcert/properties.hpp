#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cpcert/cp.hpp"
#include "cpcert/network.hpp"

namespace cpcert {

/// per_frequency: max_{f,g} sum_r lambda_r |C~_r^{(f,g)}|
/// per_component: sum_r lambda_r max_{f,g} |C~_r^{(f,g)}|
enum class TfVariant { per_frequency, per_component };

std::string to_string(TfVariant v);
TfVariant parse_tf_variant(const std::string& s);

/// tf_j over the top-j components of a conv kernel ({s},{o},{kx,ky}).
double tensorization_factor(const CPKernel& k, std::size_t j, FrequencyGrid grid, TfVariant variant);
/// nb_j over components j+1..R of a conv kernel.
double tensor_noise_bound(const CPKernel& k, std::size_t j, FrequencyGrid grid, TfVariant variant);
/// FC forms: partial sums of |lambda|.
double tensorization_factor_fc(const CPKernel& k, std::size_t j);
double tensor_noise_bound_fc(const CPKernel& k, std::size_t j);

/// All tf_1..tf_R (index j-1) and nb_0..nb_R (index j) in one pass.
struct SpectrumProfile {
  std::vector<double> tf;
  std::vector<double> nb;
};
SpectrumProfile spectrum_profile(const CPKernel& k, FrequencyGrid grid, TfVariant variant);
SpectrumProfile spectrum_profile_fc(const CPKernel& k);

struct CushionResult {
  /// min over samples of sigma * ||X^(k+1)|| / (||M|| ||X^(k)||); 0 when the
  /// kernel is zero.
  double value = 0.0;
  /// max over samples of ||X^(k)|| / ||X^(k+1)||, the factor the error
  /// recursion consumes. Equals sigma / (value * ||M||) for non-zero kernels.
  double multiplier = 0.0;
  std::size_t argmin = 0;
  /// Samples skipped because ||X^(k)|| == 0 or the network output is zero.
  std::size_t excluded = 0;
};

struct LayerProperties {
  LayerKind kind = LayerKind::conv_cp;
  bool skip = false;
  std::size_t rank = 0;
  std::size_t height = 1, width = 1;
  /// sqrt(HW) for conv layers, 1 for FC layers.
  double sigma = 1.0;
  double kernel_norm = 0.0;
  SpectrumProfile per_frequency;
  SpectrumProfile per_component;
  CushionResult cushion;
  /// FC layers only.
  std::optional<double> rf;

  const SpectrumProfile& profile(TfVariant v) const { return v == TfVariant::per_frequency ? per_frequency : per_component; }
  bool is_conv() const { return kind == LayerKind::conv_cp || kind == LayerKind::conv_dense; }
};

struct PropertyTable {
  std::vector<LayerProperties> layers;
  /// max over samples of ||Y^(n)||_F, the pre-readout network output.
  double max_output_norm = 0.0;
  std::size_t samples = 0;
};

/// Per-sample quantities gathered from forward traces.
struct SampleNorms {
  /// norms[i][k] = ||X^(k)||_F of sample i, k = 0..n (index n is ||Y^(n)||).
  std::vector<std::vector<double>> norms;
  /// rf ratios[i][k] for FC layers (0 for conv layers or zero inputs).
  std::vector<std::vector<double>> rf_ratios;
};

SampleNorms collect_sample_norms(const NetworkModel& model, const Dataset& data, Execution exec = Execution::parallel);

CushionResult layer_cushion(const NetworkModel& model, std::size_t k, const Dataset& data);
double reshaping_factor(const NetworkModel& model, std::size_t k, const Dataset& data);
double max_output_norm(const NetworkModel& model, const Dataset& data);
/// ||X||_2 / ||X||_F of a matrix (0 for the zero matrix).
double spectral_ratio(const DenseTensor& matrix);

/// Every layer must be CP. Throws std::invalid_argument otherwise.
PropertyTable compute_properties(const NetworkModel& model, const Dataset& data, Execution exec = Execution::parallel);

}  // namespace cpcert
