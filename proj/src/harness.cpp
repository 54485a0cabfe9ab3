#include "cpcert/harness.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <tuple>

namespace cpcert {

namespace {

std::vector<double> gaussian_vector(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& e : v) e = nd(rng);
  return v;
}

}  // namespace

SyntheticSource::SyntheticSource(std::size_t num_classes, Shape input_shape, std::uint64_t seed, double noise)
    : shape_(std::move(input_shape)), noise_(noise) {
  if (num_classes == 0) throw std::invalid_argument("num_classes must be at least 1");
  if (shape_.size() != 1 && shape_.size() != 3) throw ShapeError("input shape must be [H,W,C] or [d]");
  std::size_t H = 0, W = 0, C = 1;
  if (shape_.size() == 3) {
    H = shape_[0];
    W = shape_[1];
    C = shape_[2];
  } else {
    std::tie(H, W) = near_square(shape_[0]);
  }
  std::mt19937_64 rng(seed);
  for (std::size_t c = 0; c < num_classes; ++c) {
    DenseTensor p({H, W, C});
    for (int q = 0; q < 2; ++q) {
      const auto u = gaussian_vector(H, rng), v = gaussian_vector(W, rng), w = gaussian_vector(C, rng);
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j)
          for (std::size_t ch = 0; ch < C; ++ch) p.at({i, j, ch}) += u[i] * v[j] * w[ch];
    }
    const double rms = frobenius_norm(p) / std::sqrt(static_cast<double>(p.size()));
    for (auto& e : p.storage()) e /= rms;
    patterns_.push_back(reshape(p, shape_));
  }
}

Dataset SyntheticSource::draw(std::size_t per_class, std::uint64_t stream_seed) const {
  if (per_class == 0) throw std::invalid_argument("per_class must be at least 1");
  Dataset d;
  d.input_shape = shape_;
  d.num_classes = patterns_.size();
  std::mt19937_64 rng(stream_seed);
  std::normal_distribution<double> nd(0.0, noise_);
  for (std::size_t i = 0; i < per_class; ++i)
    for (std::size_t c = 0; c < patterns_.size(); ++c) {
      DenseTensor x = patterns_[c];
      for (auto& e : x.storage()) e += nd(rng);
      d.inputs.push_back(std::move(x));
      d.labels.push_back(static_cast<int>(c));
    }
  return d;
}

Dataset make_synthetic(std::size_t num_classes, std::size_t per_class, const Shape& input_shape, std::uint64_t seed) {
  return SyntheticSource(num_classes, input_shape, seed).draw(per_class, seed ^ 0x9e3779b97f4a7c15ULL);
}

Dataset corrupt_labels(const Dataset& data, double rate, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw std::invalid_argument("corruption rate must lie in [0, 1]");
  Dataset out = data;
  const std::size_t m = data.size();
  const auto count = static_cast<std::size_t>(std::floor(rate * static_cast<double>(m)));
  if (count == 0) return out;
  if (data.num_classes < 2) throw std::invalid_argument("label corruption needs at least two classes");
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::uniform_int_distribution<int> other(1, static_cast<int>(data.num_classes) - 1);
  for (std::size_t q = 0; q < count; ++q) {
    const std::size_t i = order[q];
    out.labels[i] = (data.labels[i] + other(rng)) % static_cast<int>(data.num_classes);
  }
  return out;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (!(learning_rate >= 0.0) || !(momentum >= 0.0 && momentum < 1.0) || !(weight_decay >= 0.0))
    throw std::invalid_argument("learning rate and weight decay must be non-negative, momentum in [0, 1)");
}

namespace {

/// Renormalizes the CP kernels of `model` and reorders matching velocity slots.
void renormalize(NetworkModel& model, NetworkModel& velocity) {
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    Layer& l = model.layers[k];
    if (!l.is_cp()) continue;
    NormalizeResult nr = normalize(l.cp);
    const CPKernel& old_v = velocity.layers[k].cp;
    CPKernel v(old_v.mode_shapes);
    for (std::size_t r = 0; r < nr.source.size(); ++r) {
      const std::size_t src = nr.source[r];
      const double sign = nr.flipped[r] ? -1.0 : 1.0;
      std::vector<DenseTensor> fs = old_v.factors[src];
      if (nr.flipped[r]) fs[0] = -1.0 * fs[0];
      v.add_component(sign * old_v.lambdas[src], std::move(fs));
    }
    l.cp = std::move(nr.kernel);
    velocity.layers[k].cp = std::move(v);
  }
}

}  // namespace

TrainResult train(const NetworkModel& model, const Dataset& data, const TrainConfig& config, const Dataset* holdout) {
  config.validate();
  model.validate();
  data.validate();
  if (data.input_shape != model.input_shape) throw ShapeError("dataset and model input shapes differ");
  if (data.num_classes != model.num_classes()) throw ShapeError("dataset and model class counts differ");
  TrainResult res;
  res.model = model;
  NetworkModel& w = res.model;
  NetworkModel velocity = zeros_like(w);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  double lr = config.learning_rate;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (config.lr_halving > 0 && epoch > 0 && epoch % config.lr_halving == 0) lr *= 0.5;
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t len = std::min(config.batch_size, order.size() - start);
      const std::span<const std::size_t> batch(order.data() + start, len);
      const BatchGradient bg = batch_gradient(w, data, batch, config.exec);
      if (!std::isfinite(bg.mean_loss))
        throw TrainingDiverged(epoch, "training diverged in epoch " + std::to_string(epoch) + " (loss is not finite)");
      loss_sum += bg.mean_loss * static_cast<double>(len);
      correct += bg.correct;
      auto params = parameter_blocks(w);
      auto vel = parameter_blocks(velocity);
      const auto grads = parameter_blocks(bg.grad);
      for (std::size_t q = 0; q < params.size(); ++q)
        for (std::size_t i = 0; i < params[q].size(); ++i) {
          vel[q][i] = config.momentum * vel[q][i] + grads[q][i] + config.weight_decay * params[q][i];
          params[q][i] -= lr * vel[q][i];
        }
      if (lr > 0.0) renormalize(w, velocity);
    }
    EpochMetrics em;
    em.epoch = epoch;
    em.learning_rate = lr;
    em.train_loss = loss_sum / static_cast<double>(data.size());
    em.train_accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    if (holdout) em.holdout_accuracy = accuracy(w, *holdout);
    res.metrics.push_back(em);
  }
  return res;
}

}  // namespace cpcert
