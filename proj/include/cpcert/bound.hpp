#pragma once

#include <string>
#include <vector>

#include "cpcert/compression.hpp"
#include "cpcert/network.hpp"

namespace cpcert {

/// Scalars needed to store r components of a layer: R(s+o+kx*ky+1) for conv,
/// R(s1+s2+o1+o2+1) for FC vector factors, R(o1*s1+o2*s2+1) for FC matrix factors.
std::size_t effective_parameters(const Layer& layer, std::size_t rank);
std::size_t conv_effective_parameters(std::size_t s, std::size_t o, std::size_t kx, std::size_t ky, std::size_t rank);
double compression_ratio(double effective, double original);

struct LayerCount {
  std::size_t original = 0;
  std::size_t effective = 0;
  double ratio = 0.0;
};

struct ParameterCounts {
  std::vector<LayerCount> layers;
  std::size_t d_eff = 0;
  std::size_t d_orig = 0;
};

ParameterCounts effective_params(const CompressionPlan& plan, const NetworkModel& model);

/// Stored CP scalars at each layer's full width over those kept by the plan
/// (1 when nothing is pruned).
double cp_compression_factor(const CompressionPlan& plan, const NetworkModel& model);

struct BoundReport {
  ParameterCounts params;
  std::size_t m = 0;
  double gamma = 0.0;
  double margin_loss = 0.0;
  /// sqrt(d_eff / m) with unit constant and no log factors.
  double complexity = 0.0;
  double bound = 0.0;
  std::string variant;
};

/// Margin loss of the original model plus the unscaled complexity term.
BoundReport generalization_bound(const NetworkModel& model, const Dataset& data, double gamma,
                                 const CompressionPlan& plan);

}  // namespace cpcert
