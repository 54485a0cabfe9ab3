#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "cpcert/network.hpp"

namespace cpcert {

/// Class-conditional images: each class owns a fixed rank-2 pattern with unit
/// RMS; samples add i.i.d. Gaussian noise. Flat input shapes [d] use a
/// near-square matrix view for the pattern.
class SyntheticSource {
 public:
  SyntheticSource(std::size_t num_classes, Shape input_shape, std::uint64_t seed, double noise = 0.1);

  /// per_class samples of every class, classes interleaved.
  Dataset draw(std::size_t per_class, std::uint64_t stream_seed) const;
  const DenseTensor& pattern(std::size_t c) const { return patterns_.at(c); }
  std::size_t num_classes() const noexcept { return patterns_.size(); }

 private:
  Shape shape_;
  double noise_;
  std::vector<DenseTensor> patterns_;
};

Dataset make_synthetic(std::size_t num_classes, std::size_t per_class, const Shape& input_shape, std::uint64_t seed);

/// floor(rate * m) samples, chosen by seed, get a label drawn uniformly from
/// the other classes.
Dataset corrupt_labels(const Dataset& data, double rate, std::uint64_t seed);

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  /// Halve the learning rate every this many epochs; 0 disables.
  std::size_t lr_halving = 0;
  std::uint64_t seed = 0;
  Execution exec = Execution::parallel;

  void validate() const;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double learning_rate = 0.0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> holdout_accuracy;
};

struct TrainResult {
  NetworkModel model;
  std::vector<EpochMetrics> metrics;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t epoch, const std::string& what) : std::runtime_error(what), epoch(epoch) {}
  std::size_t epoch;
};

/// Mini-batch SGD with momentum and weight decay on softmax cross-entropy.
/// CP kernels are renormalized after every step; their momentum follows
/// the component reordering.
TrainResult train(const NetworkModel& model, const Dataset& data, const TrainConfig& config,
                  const Dataset* holdout = nullptr);

}  // namespace cpcert
