#include "cpcert/bound.hpp"

#include <cmath>
#include <stdexcept>

namespace cpcert {

std::size_t conv_effective_parameters(std::size_t s, std::size_t o, std::size_t kx, std::size_t ky, std::size_t rank) {
  return rank * (s + o + kx * ky + 1);
}

std::size_t effective_parameters(const Layer& layer, std::size_t rank) {
  if (layer.is_conv()) return conv_effective_parameters(layer.s, layer.o, layer.kx, layer.ky, rank);
  if (layer.kind == LayerKind::fc_cp && layer.fc_mode == FcMode::matrices)
    return rank * (layer.o1 * layer.s1 + layer.o2 * layer.s2 + 1);
  return rank * (layer.s1 + layer.s2 + layer.o1 + layer.o2 + 1);
}

double compression_ratio(double effective, double original) {
  if (!(original > 0.0)) throw std::invalid_argument("original parameter count must be positive");
  return effective / original;
}

ParameterCounts effective_params(const CompressionPlan& plan, const NetworkModel& model) {
  if (plan.layers.size() != model.layers.size())
    throw std::invalid_argument("plan has " + std::to_string(plan.layers.size()) + " layers, model has " +
                                std::to_string(model.layers.size()));
  ParameterCounts pc;
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    const Layer& l = model.layers[k];
    LayerCount c;
    c.original = l.dense_parameter_count();
    c.effective = effective_parameters(l, plan.layers[k].rank);
    c.ratio = compression_ratio(static_cast<double>(c.effective), static_cast<double>(c.original));
    pc.d_eff += c.effective;
    pc.d_orig += c.original;
    pc.layers.push_back(c);
  }
  return pc;
}

double cp_compression_factor(const CompressionPlan& plan, const NetworkModel& model) {
  if (plan.layers.size() != model.layers.size())
    throw std::invalid_argument("plan has " + std::to_string(plan.layers.size()) + " layers, model has " +
                                std::to_string(model.layers.size()));
  std::size_t full = 0, kept = 0;
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    full += effective_parameters(model.layers[k], plan.layers[k].full_rank);
    kept += effective_parameters(model.layers[k], plan.layers[k].rank);
  }
  return compression_ratio(static_cast<double>(full), static_cast<double>(kept));
}

BoundReport generalization_bound(const NetworkModel& model, const Dataset& data, double gamma,
                                 const CompressionPlan& plan) {
  if (data.size() == 0) throw std::invalid_argument("generalization_bound: empty dataset");
  if (!(gamma >= 0.0)) throw std::invalid_argument("gamma must be non-negative");
  BoundReport r;
  r.params = effective_params(plan, model);
  r.m = data.size();
  r.gamma = gamma;
  r.margin_loss = margin_loss(model, data, gamma);
  r.complexity = std::sqrt(static_cast<double>(r.params.d_eff) / static_cast<double>(r.m));
  r.bound = r.margin_loss + r.complexity;
  r.variant = to_string(plan.rule) + "/" + to_string(plan.variant);
  return r;
}

}  // namespace cpcert
