#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "tripse/tensor.hpp"

namespace tripse {

/// Seeded parameter factory. Values are drawn in 32-bit precision and then
/// widened, so float and double models built from the same seed agree exactly.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : engine_(seed) {}

  /// He-normal: N(0, sqrt(2 / fan_in)).
  template <typename T>
  BasicTensor<T> he_normal(const Shape& shape, std::size_t fan_in) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    std::vector<T> values(shape.numel());
    for (auto& v : values) v = static_cast<T>(static_cast<float>(dist(engine_)));
    BasicTensor<T> t(shape, std::move(values));
    t.set_requires_grad(true);
    return t;
  }

  template <typename T>
  BasicTensor<T> zeros_param(const Shape& shape) {
    auto t = BasicTensor<T>::zeros(shape);
    t.set_requires_grad(true);
    return t;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace tripse
