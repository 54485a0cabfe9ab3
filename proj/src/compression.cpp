#include "cpcert/compression.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace cpcert {

std::string to_string(RankRule r) {
  switch (r) {
    case RankRule::fbrc: return "fbrc";
    case RankRule::fbr_fc: return "fbr_fc";
    case RankRule::fbrc_skip: return "fbrc_skip";
    case RankRule::threshold: return "threshold";
  }
  return "unknown";
}

std::vector<std::size_t> CompressionPlan::ranks() const {
  std::vector<std::size_t> r;
  for (const auto& l : layers) r.push_back(l.rank);
  return r;
}

std::size_t CompressionPlan::total_rank() const {
  std::size_t s = 0;
  for (const auto& l : layers) s += l.rank;
  return s;
}

double epsilon_from_gamma(double gamma, double max_output_norm) {
  if (!(gamma > 0.0)) throw std::invalid_argument("gamma must be positive");
  if (max_output_norm == 0.0) return std::numeric_limits<double>::infinity();
  return gamma / (2.0 * max_output_norm);
}

namespace {

std::string layer_tag(std::size_t k) { return "layer " + std::to_string(k); }

CompressionPlan select_ranks(const NetworkModel& model, const PropertyTable& table, double epsilon, RankRule rule,
                             const RankOptions& opts) {
  model.validate();
  const std::size_t n = model.layers.size();
  if (table.layers.size() != n)
    throw std::invalid_argument("property table has " + std::to_string(table.layers.size()) + " layers, model has " +
                                std::to_string(n));
  if (!(epsilon > 0.0) || std::isnan(epsilon)) throw std::invalid_argument("epsilon must be positive");
  CompressionPlan plan;
  plan.rule = rule;
  plan.variant = opts.variant;
  plan.epsilon_requested = epsilon;
  plan.epsilon = std::min(epsilon, 1.0);
  plan.gamma = opts.gamma;
  plan.layers.resize(n);

  for (std::size_t k = 0; k < n; ++k) {
    const Layer& l = model.layers[k];
    const LayerProperties& p = table.layers[k];
    if (!l.is_cp()) throw std::invalid_argument(layer_tag(k) + " is dense; decompose the model first");
    if (rule == RankRule::fbrc && !l.is_conv()) throw std::invalid_argument("fbrc: " + layer_tag(k) + " is not conv");
    if (rule == RankRule::fbr_fc && l.is_conv()) throw std::invalid_argument("fbr_fc: " + layer_tag(k) + " is not FC");
    if (p.rank != l.cp.width()) throw std::invalid_argument(layer_tag(k) + ": property table does not match model");
    const double c = p.cushion.multiplier;
    if (!std::isfinite(c)) throw InfeasiblePlan(layer_tag(k) + ": an activation vanishes after this layer");
    if (rule != RankRule::fbrc_skip && (p.kernel_norm == 0.0 || p.cushion.value == 0.0))
      throw InfeasiblePlan(layer_tag(k) + ": zero layer cushion or kernel norm");
  }

  const double per_layer = plan.epsilon / static_cast<double>(n);
  double deeper_gain = 1.0, inv_cushion = 1.0;
  for (std::size_t k = n; k-- > 0;) {
    const Layer& l = model.layers[k];
    const LayerProperties& p = table.layers[k];
    const SpectrumProfile& prof = p.profile(opts.variant);
    const double noise_scale = p.sigma * (p.rf ? *p.rf : 1.0);
    const double extra = rule == RankRule::fbrc_skip && l.skip ? 1.0 : 0.0;
    const double c = p.cushion.multiplier;
    inv_cushion *= c == 0.0 ? std::numeric_limits<double>::infinity() : 1.0 / c;

    LayerPlan& lp = plan.layers[k];
    lp.full_rank = p.rank;
    lp.conv = l.is_conv();
    lp.skip = l.skip;
    lp.cushion_multiplier = c;
    lp.rhs = per_layer * inv_cushion;
    if (opts.gamma) lp.rhs_margin = *opts.gamma / (2.0 * static_cast<double>(n) * table.max_output_norm) * inv_cushion;
    const std::size_t R = p.rank;
    std::size_t j = std::min<std::size_t>(1, R);
    for (; j < R; ++j)
      if (noise_scale * prof.nb[j] * deeper_gain <= lp.rhs) break;
    lp.rank = j;
    lp.noise = noise_scale * prof.nb[j];
    lp.gain = (j == 0 ? 0.0 : p.sigma * prof.tf[j - 1]) + extra;
    lp.lhs = lp.noise * deeper_gain;
    deeper_gain *= lp.gain;
  }
  return plan;
}

}  // namespace

CompressionPlan fbrc(const NetworkModel& model, const PropertyTable& table, double epsilon, const RankOptions& opts) {
  return select_ranks(model, table, epsilon, RankRule::fbrc, opts);
}

CompressionPlan fbr_fc(const NetworkModel& model, const PropertyTable& table, double epsilon, const RankOptions& opts) {
  return select_ranks(model, table, epsilon, RankRule::fbr_fc, opts);
}

CompressionPlan fbrc_skip(const NetworkModel& model, const PropertyTable& table, double epsilon,
                          const RankOptions& opts) {
  return select_ranks(model, table, epsilon, RankRule::fbrc_skip, opts);
}

CompressionPlan threshold_plan(const NetworkModel& model, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("threshold must lie in [0, 1]");
  model.validate();
  CompressionPlan plan;
  plan.rule = RankRule::threshold;
  plan.threshold = tau;
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    const Layer& l = model.layers[k];
    if (!l.is_cp()) throw std::invalid_argument(layer_tag(k) + " is dense; decompose the model first");
    LayerPlan lp;
    lp.full_rank = l.cp.width();
    lp.conv = l.is_conv();
    lp.skip = l.skip;
    double top = 0.0;
    for (double v : l.cp.lambdas) top = std::max(top, std::abs(v));
    if (top == 0.0) {
      lp.rank = lp.full_rank;
    } else {
      // Sorted spectrum: keep the leading run above the cut-off.
      while (lp.rank < lp.full_rank && std::abs(l.cp.lambdas[lp.rank]) / top >= tau) ++lp.rank;
    }
    plan.layers.push_back(lp);
  }
  return plan;
}

NetworkModel project(const NetworkModel& model, const CompressionPlan& plan) {
  if (plan.layers.size() != model.layers.size())
    throw std::invalid_argument("plan has " + std::to_string(plan.layers.size()) + " layers, model has " +
                                std::to_string(model.layers.size()));
  NetworkModel out = model;
  for (std::size_t k = 0; k < out.layers.size(); ++k) {
    Layer& l = out.layers[k];
    if (!l.is_cp()) throw std::invalid_argument(layer_tag(k) + " is dense; decompose the model first");
    const std::size_t r = plan.layers[k].rank;
    if (r > l.cp.width())
      throw std::invalid_argument(layer_tag(k) + ": planned rank " + std::to_string(r) + " exceeds width " +
                                  std::to_string(l.cp.width()));
    if (r < l.cp.width()) l.cp = truncate(l.cp, r);
  }
  return out;
}

namespace {

struct SampleDiff {
  double out_norm = 0.0;
  double out_err = 0.0;
  /// Per depth m = 1..n: ||X^(m)|| and ||X^(m) - X^^(m)||.
  std::vector<double> base, err;
};

SampleDiff compare_sample(const NetworkModel& a, const NetworkModel& b, const DenseTensor& x) {
  const ForwardResult fa = forward(a, x, Execution::serial), fb = forward(b, x, Execution::serial);
  const std::size_t n = a.layers.size();
  SampleDiff d;
  for (std::size_t m = 1; m <= n; ++m) {
    const DenseTensor& xa = m < n ? fa.trace.inputs[m] : fa.trace.outputs[n - 1];
    const DenseTensor& xb = m < n ? fb.trace.inputs[m] : fb.trace.outputs[n - 1];
    d.base.push_back(frobenius_norm(xa));
    d.err.push_back(frobenius_norm(xa - xb));
  }
  d.out_norm = d.base.back();
  d.out_err = d.err.back();
  return d;
}

std::vector<SampleDiff> compare_all(const NetworkModel& a, const NetworkModel& b, const Dataset& data, Execution exec) {
  a.validate();
  b.validate();
  if (a.input_shape != b.input_shape || a.layers.size() != b.layers.size())
    throw ShapeError("models differ in input shape or depth");
  for (std::size_t k = 0; k < a.layers.size(); ++k)
    if (layer_output_shape(a, k) != layer_output_shape(b, k))
      throw ShapeError(layer_tag(k) + ": output shapes differ");
  std::vector<SampleDiff> diffs(data.size());
  if (exec == Execution::serial) {
    for (std::size_t i = 0; i < data.size(); ++i) diffs[i] = compare_sample(a, b, data.inputs[i]);
  } else {
#pragma omp parallel for schedule(dynamic) num_threads(thread_cap())
    for (std::size_t i = 0; i < data.size(); ++i) diffs[i] = compare_sample(a, b, data.inputs[i]);
  }
  return diffs;
}

}  // namespace

double max_relative_deviation(const NetworkModel& a, const NetworkModel& b, const Dataset& data, Execution exec) {
  double worst = 0.0;
  for (const auto& d : compare_all(a, b, data, exec))
    if (d.out_norm > 0.0) worst = std::max(worst, d.out_err / d.out_norm);
  return worst;
}

VerificationReport verify_compression(const NetworkModel& original, const NetworkModel& compressed,
                                      const CompressionPlan& plan, const Dataset& data, Execution exec) {
  const std::size_t n = original.layers.size();
  if (plan.layers.size() != n) throw std::invalid_argument("plan does not match model depth");
  const auto diffs = compare_all(original, compressed, data, exec);
  VerificationReport rep;
  const bool certified = plan.rule != RankRule::threshold;
  if (certified) {
    double r = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const LayerPlan& lp = plan.layers[k];
      // The chain follows the network as built, so skip layers always carry
      // their identity term here.
      const double gain = lp.gain + (lp.skip && plan.rule != RankRule::fbrc_skip ? 1.0 : 0.0);
      r = lp.cushion_multiplier * (lp.noise + gain * r);
      rep.chain_bound.push_back(r);
    }
  }
  rep.chain_measured.assign(n, 0.0);
  constexpr double rel_tol = 1e-9, abs_tol = 1e-12;
  for (std::size_t i = 0; i < diffs.size(); ++i) {
    const SampleDiff& d = diffs[i];
    if (d.out_norm == 0.0) {
      ++rep.excluded;
      continue;
    }
    for (std::size_t m = 0; m < n; ++m) {
      if (d.base[m] == 0.0) continue;
      const double ratio = d.err[m] / d.base[m];
      rep.chain_measured[m] = std::max(rep.chain_measured[m], ratio);
      if (certified && d.err[m] > rep.chain_bound[m] * d.base[m] * (1.0 + rel_tol) + abs_tol * d.base[m]) {
        rep.chain_ok = false;
        throw VerificationError("sample " + std::to_string(i) + " breaks the certified error bound at depth " +
                                    std::to_string(m + 1) + ": " + std::to_string(ratio) + " > " +
                                    std::to_string(rep.chain_bound[m]),
                                i, m + 1);
      }
    }
    const double res = d.out_err / d.out_norm;
    if (res > rep.max_residual) {
      rep.max_residual = res;
      rep.argmax = i;
    }
  }
  if (certified && rep.max_residual > plan.epsilon * (1.0 + rel_tol) + abs_tol)
    throw VerificationError("sample " + std::to_string(rep.argmax) + " has output residual " +
                                std::to_string(rep.max_residual) + " above epsilon " + std::to_string(plan.epsilon),
                            rep.argmax, n);
  return rep;
}

CompressResult compress(const NetworkModel& model, const Dataset& data, const CompressOptions& options) {
  if (options.gamma.has_value() == options.epsilon.has_value())
    throw std::invalid_argument("compress needs exactly one of gamma or epsilon");
  CompressResult res;
  res.properties = compute_properties(model, data, options.exec);
  RankOptions ro;
  ro.variant = options.variant;
  double eps = 0.0;
  if (options.gamma) {
    eps = epsilon_from_gamma(*options.gamma, res.properties.max_output_norm);
    ro.gamma = options.gamma;
  } else {
    eps = *options.epsilon;
  }
  const bool has_skip = std::any_of(model.layers.begin(), model.layers.end(), [](const Layer& l) { return l.skip; });
  if (options.skip_aware || has_skip)
    res.plan = fbrc_skip(model, res.properties, eps, ro);
  else if (model.is_conv())
    res.plan = fbrc(model, res.properties, eps, ro);
  else
    res.plan = fbr_fc(model, res.properties, eps, ro);
  res.model = project(model, res.plan);
  res.verification = verify_compression(model, res.model, res.plan, data, options.exec);
  return res;
}

}  // namespace cpcert
