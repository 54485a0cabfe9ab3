#pragma once

#include <random>

#include "cpcert/cp.hpp"
#include "cpcert/network.hpp"
#include "cpcert/tensor.hpp"

namespace cpcert::testing {

inline DenseTensor random_tensor(const Shape& shape, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  DenseTensor t(shape);
  for (auto& e : t.storage()) e = n(rng);
  return t;
}

inline ComplexTensor random_complex(const Shape& shape, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  ComplexTensor t(shape);
  for (auto& e : t.storage()) e = Complex(n(rng), n(rng));
  return t;
}

inline DenseTensor unit_random(const Shape& shape, std::mt19937_64& rng) {
  DenseTensor t = random_tensor(shape, rng);
  const double nrm = frobenius_norm(t);
  for (auto& e : t.storage()) e /= nrm;
  return t;
}

/// Normalized random CP kernel with the given mode shapes and width.
inline CPKernel random_cp(const std::vector<Shape>& modes, std::size_t width, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> amp(0.1, 2.0);
  CPKernel k(modes);
  for (std::size_t r = 0; r < width; ++r) {
    std::vector<DenseTensor> fs;
    for (const auto& m : modes) fs.push_back(unit_random(m, rng));
    k.add_component(amp(rng), std::move(fs));
  }
  return normalize(k).kernel;
}

inline double rel_diff(const DenseTensor& a, const DenseTensor& b) {
  const double base = std::max(frobenius_norm(a), frobenius_norm(b));
  return base == 0.0 ? 0.0 : frobenius_norm(a - b) / base;
}

inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

/// Gaussian inputs with labels cycling through the classes.
inline Dataset random_dataset(const Shape& shape, std::size_t n, std::size_t classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Dataset d;
  d.input_shape = shape;
  d.num_classes = classes;
  for (std::size_t i = 0; i < n; ++i) {
    d.inputs.push_back(random_tensor(shape, rng));
    d.labels.push_back(static_cast<int>(i % classes));
  }
  return d;
}

}  // namespace cpcert::testing
