#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpcert/network.hpp"
#include "cpcert/properties.hpp"

namespace cpcert {

enum class RankRule { fbrc, fbr_fc, fbrc_skip, threshold };
std::string to_string(RankRule r);

/// Raised when rank selection cannot be carried out (zero cushion or
/// kernel norm).
class InfeasiblePlan : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a compressed model breaks the guarantee its plan certifies.
class VerificationError : public std::runtime_error {
 public:
  VerificationError(const std::string& what, std::size_t sample, std::size_t depth)
      : std::runtime_error(what), sample(sample), depth(depth) {}
  std::size_t sample;
  std::size_t depth;
};

struct LayerPlan {
  std::size_t rank = 0;
  std::size_t full_rank = 0;
  bool conv = true;
  bool skip = false;
  /// Tail bound of the pruned part, sigma * nb (times rf for FC layers).
  double noise = 0.0;
  /// Operator-norm bound of the kept part, sigma * tf (+1 under fbrc_skip).
  double gain = 0.0;
  /// max_X ||X^(k)|| / ||X^(k+1)||.
  double cushion_multiplier = 0.0;
  /// noise * prod_{l>k} gain_l
  double lhs = 0.0;
  /// (eps/n) * prod_{l>=k} 1/cushion_multiplier_l
  double rhs = 0.0;
  /// The same right-hand side written from the margin:
  /// gamma / (2 n max||M(X)||) * prod_{l>=k} 1/cushion_multiplier_l.
  std::optional<double> rhs_margin;
};

struct CompressionPlan {
  RankRule rule = RankRule::fbrc;
  TfVariant variant = TfVariant::per_frequency;
  /// Epsilon actually used (clamped to (0, 1]) and the requested value.
  double epsilon = 0.0;
  double epsilon_requested = 0.0;
  std::optional<double> gamma;
  std::optional<double> threshold;
  std::vector<LayerPlan> layers;

  std::vector<std::size_t> ranks() const;
  std::size_t total_rank() const;
};

struct RankOptions {
  TfVariant variant = TfVariant::per_frequency;
  /// Set when epsilon was derived from a margin, to record the margin form.
  std::optional<double> gamma;
};

/// Back-to-front rank selection for conv networks. Deeper layers contribute
/// the bound of their already-selected truncation.
CompressionPlan fbrc(const NetworkModel& model, const PropertyTable& table, double epsilon, const RankOptions& opts = {});
/// FC counterpart; the noise term carries the reshaping factor.
CompressionPlan fbr_fc(const NetworkModel& model, const PropertyTable& table, double epsilon,
                       const RankOptions& opts = {});
/// Either network family; skip layers add 1 to their gain.
CompressionPlan fbrc_skip(const NetworkModel& model, const PropertyTable& table, double epsilon,
                          const RankOptions& opts = {});

/// Keeps components with lambda / lambda_max >= tau, tau in [0, 1].
CompressionPlan threshold_plan(const NetworkModel& model, double tau);

/// Truncates every layer to its planned rank.
NetworkModel project(const NetworkModel& model, const CompressionPlan& plan);

/// epsilon = gamma / (2 max||M(X)||), before clamping.
double epsilon_from_gamma(double gamma, double max_output_norm);

struct VerificationReport {
  /// max over samples of ||M(X) - M^(X)|| / ||M(X)||.
  double max_residual = 0.0;
  std::size_t argmax = 0;
  /// Samples with ||M(X)|| == 0, left out of the residual and the chain.
  std::size_t excluded = 0;
  /// Certified relative error at depth m = 1..n (index m-1); the last entry
  /// is the output bound.
  std::vector<double> chain_bound;
  /// Worst measured ||X^(m) - X^^(m)|| / ||X^(m)|| per depth.
  std::vector<double> chain_measured;
  bool chain_ok = true;
};

/// Compares a model against its projection sample by sample. Throws
/// VerificationError when the residual exceeds epsilon or a depth breaks its
/// certified chain bound.
VerificationReport verify_compression(const NetworkModel& original, const NetworkModel& compressed,
                                      const CompressionPlan& plan, const Dataset& data,
                                      Execution exec = Execution::parallel);

/// max over samples of ||M_a(X) - M_b(X)|| / ||M_a(X)|| (zero-output samples skipped).
double max_relative_deviation(const NetworkModel& a, const NetworkModel& b, const Dataset& data,
                              Execution exec = Execution::parallel);

struct CompressOptions {
  /// Exactly one of gamma / epsilon.
  std::optional<double> gamma;
  std::optional<double> epsilon;
  TfVariant variant = TfVariant::per_frequency;
  /// Forces fbrc_skip; it is also chosen whenever the model has skip layers.
  bool skip_aware = false;
  Execution exec = Execution::parallel;
};

struct CompressResult {
  NetworkModel model;
  CompressionPlan plan;
  PropertyTable properties;
  VerificationReport verification;
};

CompressResult compress(const NetworkModel& model, const Dataset& data, const CompressOptions& options);

}  // namespace cpcert
