#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "lensformer/tensor.hpp"

namespace lensformer {

/// splitmix64 finaliser; used to derive independent seeds from (seed, index).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

/// Draws trainable tensors in a fixed order from one seeded stream, so a seed
/// fully determines every initial weight regardless of precision.
template <typename T>
class ParamInit {
 public:
  explicit ParamInit(std::uint64_t seed) : rng_(seed) {}

  /// Glorot/Xavier uniform on [-sqrt(6/(fan_in+fan_out)), +sqrt(...)].
  Tensor<T> xavier(Shape shape, std::size_t fan_in, std::size_t fan_out) {
    const double bound = xavier_bound(fan_in, fan_out);
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(u(rng_));
    t.set_requires_grad();
    return t;
  }

  Tensor<T> filled(Shape shape, T value) {
    Tensor<T> t(std::move(shape), value);
    t.set_requires_grad();
    return t;
  }

  static double xavier_bound(std::size_t fan_in, std::size_t fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  }

 private:
  std::mt19937_64 rng_;
};

}  // namespace lensformer
