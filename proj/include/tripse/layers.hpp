#pragma once

#include <cstddef>

#include "tripse/tensor.hpp"

namespace tripse {

template <typename T>
struct ConvParams {
  BasicTensor<T> weight;  // (outC, inC, k, k)
  BasicTensor<T> bias;    // (outC) or undefined
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_channels() const { return weight.dim(0); }
  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t kernel() const { return weight.dim(2); }
};

/// Per-channel affine parameters plus running statistics. Forward mode
/// (batch statistics vs running statistics) is chosen per call.
template <typename T>
struct BatchNormState {
  BasicTensor<T> gamma;
  BasicTensor<T> beta;
  BasicTensor<T> running_mean;
  BasicTensor<T> running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  static BatchNormState identity(std::size_t channels) {
    BatchNormState s;
    s.gamma = BasicTensor<T>::constant({channels}, T(1));
    s.gamma.set_requires_grad(true);
    s.beta = BasicTensor<T>::zeros({channels});
    s.beta.set_requires_grad(true);
    s.running_mean = BasicTensor<T>::zeros({channels});
    s.running_var = BasicTensor<T>::constant({channels}, T(1));
    return s;
  }

  std::size_t channels() const { return gamma.numel(); }
};

template <typename T>
struct LinearParams {
  BasicTensor<T> weight;  // (out, in)
  BasicTensor<T> bias;    // (out)

  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }
};

}  // namespace tripse
