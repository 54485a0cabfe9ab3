#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cpcert/cp.hpp"
#include "cpcert/parallel.hpp"
#include "cpcert/tensor.hpp"

namespace cpcert {

enum class LayerKind { conv_dense, conv_cp, fc_dense, fc_cp };

/// FC CP factor layout: four vectors a(s1), b(s2), c(o1), d(o2), or two
/// channel matrices K1 (o1 x s1) and K2 (o2 x s2).
enum class FcMode { vectors, matrices };

std::string to_string(LayerKind kind);
std::string to_string(FcMode mode);

/// One bias-free linear layer, optionally wrapped as a skip block Y = M(X) + X.
///
/// Conv layers map H x W x s to H x W x o with a kx x ky kernel stored as
/// kx x ky x o x s (dense) or with CP modes {s},{o},{kx,ky}. FC layers act on
/// an s1 x s2 matrix and produce an o1 x o2 matrix; the dense kernel is stored
/// s1 x s2 x o1 x o2 with Y[i,j] = sum_{k,l} M[k,l,i,j] X[k,l].
struct Layer {
  LayerKind kind = LayerKind::conv_dense;
  bool skip = false;
  std::size_t s = 0, o = 0, kx = 0, ky = 0;
  std::size_t s1 = 0, s2 = 0, o1 = 0, o2 = 0;
  FcMode fc_mode = FcMode::vectors;
  DenseTensor dense;
  CPKernel cp;

  bool is_conv() const noexcept { return kind == LayerKind::conv_dense || kind == LayerKind::conv_cp; }
  bool is_cp() const noexcept { return kind == LayerKind::conv_cp || kind == LayerKind::fc_cp; }

  static Layer conv_dense_layer(DenseTensor kernel);
  static Layer conv_cp_layer(CPKernel kernel);
  static Layer fc_dense_layer(DenseTensor kernel);
  static Layer fc_cp_layer(CPKernel kernel, FcMode mode);

  /// Input channels (conv) or s1*s2 (FC).
  std::size_t in_width() const noexcept { return is_conv() ? s : s1 * s2; }
  std::size_t out_width() const noexcept { return is_conv() ? o : o1 * o2; }

  /// Dense kernel in the layout described above (reconstructed for CP layers).
  DenseTensor dense_kernel() const;
  /// ||M||_F of the layer's kernel.
  double kernel_norm() const;
  /// Stored scalar count.
  std::size_t parameter_count() const;
  /// Stored scalar count of the dense equivalent.
  std::size_t dense_parameter_count() const;

  void validate() const;
};

/// Feed-forward ReLU network. Conv networks take H x W x C inputs and read
/// out class scores as the unitary DC coefficient (1/sqrt(HW)) sum_{ij} Y[i,j,:]
/// of the last layer. FC networks take flat vectors, reshape them row-major to
/// each layer's s1 x s2, and flatten the last output.
struct NetworkModel {
  Shape input_shape;
  std::vector<Layer> layers;

  bool is_conv() const { return !layers.empty() && layers.front().is_conv(); }
  std::size_t num_classes() const;
  /// Spatial grid of conv layers; 1 x 1 for FC networks.
  std::size_t height() const { return is_conv() ? input_shape.at(0) : 1; }
  std::size_t width() const { return is_conv() ? input_shape.at(1) : 1; }
  /// Throws ShapeError naming the first inconsistent layer.
  void validate() const;
};

struct Dataset {
  Shape input_shape;
  std::size_t num_classes = 0;
  std::vector<DenseTensor> inputs;
  std::vector<int> labels;

  std::size_t size() const noexcept { return inputs.size(); }
  void validate() const;
};

/// Per layer k: X^(k) in the layer's input shape and Y^(k) (including the skip
/// term) in its output shape. X^(k+1) = relu(Y^(k)), reshaped for FC layers.
struct ActivationTrace {
  std::vector<DenseTensor> inputs;
  std::vector<DenseTensor> outputs;
  std::vector<double> input_norms;
  std::vector<double> output_norms;
};

struct ForwardResult {
  std::vector<double> scores;
  ActivationTrace trace;
};

/// Linear part M(X) of a layer (no skip term, no activation).
DenseTensor apply_linear(const Layer& layer, const DenseTensor& x, Execution exec = Execution::parallel);
/// Adjoint of `apply_linear` with respect to X.
DenseTensor apply_linear_adjoint(const Layer& layer, const DenseTensor& dy, Execution exec = Execution::parallel);

Shape layer_input_shape(const NetworkModel& model, std::size_t k);
Shape layer_output_shape(const NetworkModel& model, std::size_t k);

ForwardResult forward(const NetworkModel& model, const DenseTensor& x, Execution exec = Execution::parallel);
std::vector<double> predict(const NetworkModel& model, const DenseTensor& x, Execution exec = Execution::parallel);
/// Scores for every sample (parallel over samples unless exec is serial).
std::vector<std::vector<double>> predict_all(const NetworkModel& model, const Dataset& data,
                                             Execution exec = Execution::parallel);
/// Y^(n): the last layer's output tensor before the readout.
DenseTensor network_output(const NetworkModel& model, const DenseTensor& x, Execution exec = Execution::parallel);

/// Gradients share the model's structure; CP layers carry d/dlambda and
/// d/dfactor, dense layers d/dweights.
using Gradients = NetworkModel;

Gradients zeros_like(const NetworkModel& model);
/// Every trainable array of the model in a fixed order.
std::vector<std::span<double>> parameter_blocks(NetworkModel& model);
std::vector<std::span<const double>> parameter_blocks(const NetworkModel& model);

struct SampleLoss {
  double loss = 0.0;
  bool correct = false;
};

/// Cross-entropy on softmax(scores) for one sample; adds dloss/dparams to `grad`.
SampleLoss accumulate_gradient(const NetworkModel& model, const DenseTensor& x, int label, Gradients& grad);

/// Analytic gradient of the single-sample cross-entropy.
Gradients backward(const NetworkModel& model, const DenseTensor& x, int label);

struct BatchGradient {
  double mean_loss = 0.0;
  std::size_t correct = 0;
  Gradients grad;
};

/// Mean cross-entropy gradient over data[indices]. Per-sample gradients are
/// reduced in index order, so the result is identical for both executions.
BatchGradient batch_gradient(const NetworkModel& model, const Dataset& data, std::span<const std::size_t> indices,
                             Execution exec = Execution::parallel);

double cross_entropy(std::span<const double> scores, int label);

/// s_y - max_{i != y} s_i.
double margin(std::span<const double> scores, int label);
std::vector<double> margins(const NetworkModel& model, const Dataset& data, Execution exec = Execution::parallel);
/// Fraction of samples with margin <= gamma.
double margin_loss(const NetworkModel& model, const Dataset& data, double gamma);
double margin_loss_from_margins(std::span<const double> margins, double gamma);
double accuracy(const NetworkModel& model, const Dataset& data);

NetworkModel densify(const NetworkModel& model);

struct CpifyResult {
  NetworkModel model;
  /// Relative ALS reconstruction error per layer (0 for layers already CP).
  std::vector<double> errors;
};

/// Decomposes dense layers with cp_als. ranks[k] == 0 selects the layer's
/// exact-decomposition cap; FC layers use `fc_mode` groupings.
CpifyResult cp_ify(const NetworkModel& model, const std::vector<std::size_t>& ranks, const AlsOptions& options = {},
                   FcMode fc_mode = FcMode::vectors);

/// Exact-decomposition cap for a layer's CP grouping.
std::size_t layer_rank_cap(const Layer& layer, FcMode fc_mode = FcMode::vectors);

struct PresetOptions {
  std::size_t num_classes = 4;
  std::uint64_t seed = 0;
  /// CP layers (true) or dense layers with the same shapes.
  bool cp = true;
  /// Per-layer CP widths; empty selects each layer's cap.
  std::vector<std::size_t> ranks;
};

/// Conv network with kernel x kernel filters and the given channel chain
/// (channels.front() must equal the input channel count).
NetworkModel make_cnn(const Shape& input_shape, const std::vector<std::size_t>& channels, std::size_t kernel,
                      const PresetOptions& options = {});
/// 8 x 8 x 1 input, 3 conv layers 1 -> 8 -> 16 -> K with 3 x 3 kernels.
NetworkModel make_toy_cnn(const PresetOptions& options = {});
/// 16 inputs reshaped 4 x 4; FC layers 16 -> 16 -> 16 -> K.
NetworkModel make_toy_fc(const PresetOptions& options = {});
NetworkModel make_preset(const std::string& name, const PresetOptions& options = {});

/// Splits n into a x b with a <= b and a as large as possible.
std::pair<std::size_t, std::size_t> near_square(std::size_t n);

}  // namespace cpcert
