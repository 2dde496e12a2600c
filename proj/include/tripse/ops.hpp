#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tripse/layers.hpp"
#include "tripse/tensor.hpp"

namespace tripse {

enum class ReduceMode { max, mean };
enum class Activation { relu, sigmoid };
enum class Binary { add, mul };

std::vector<std::size_t> inverse_permutation(std::span<const std::size_t> order);

/// Output axis i is input axis order[i].
template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& x, std::span<const std::size_t> order);

/// Same data viewed with a new shape of equal element count.
template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, const Shape& shape);

/// Cross-correlation of an (N,C,H,W) input.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const ConvParams<T>& p);

/// Training mode normalises with batch statistics over (N,H,W) and updates the
/// running statistics; eval mode reads the running statistics only.
template <typename T>
BasicTensor<T> batchnorm2d(const BasicTensor<T>& x, BatchNormState<T>& s, bool training);

/// Max routes its gradient to the first maximal element along the axis.
template <typename T>
BasicTensor<T> reduce_over_axis(const BasicTensor<T>& x, std::size_t axis, ReduceMode mode, bool keepdim);

/// (N,C,H,W) -> (N,C)
template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x);

/// (N,in) -> (N,out)
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const LinearParams<T>& p);

template <typename T>
BasicTensor<T> activation(const BasicTensor<T>& x, Activation kind);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  return activation(x, Activation::relu);
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  return activation(x, Activation::sigmoid);
}

/// Elementwise op with broadcasting: operands share a rank and each axis pair
/// is equal or has a 1 on one side. Gradients are summed over broadcast axes.
template <typename T>
BasicTensor<T> ew(const BasicTensor<T>& x, const BasicTensor<T>& y, Binary kind);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& x, const BasicTensor<T>& y) {
  return ew(x, y, Binary::add);
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& x, const BasicTensor<T>& y) {
  return ew(x, y, Binary::mul);
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor);

/// Elementwise arithmetic mean of equally shaped tensors: (x0 + ... + xk) / (k+1).
template <typename T>
BasicTensor<T> average(std::span<const BasicTensor<T>> xs);

template <typename T>
BasicTensor<T> concat(std::span<const BasicTensor<T>> xs, std::size_t axis);

template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& x, std::size_t axis, std::size_t start, std::size_t length);

/// Sum of all elements as a shape-(1) tensor.
template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x);

namespace testing {
/// Perturbs the sigmoid backward pass; exists only to exercise gradient-check failure paths.
void inject_backward_fault(bool on);
bool backward_fault_injected();
}  // namespace testing

}  // namespace tripse
