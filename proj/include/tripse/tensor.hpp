#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tripse/shape.hpp"

namespace tripse {

template <typename T>
class BasicTensor;

namespace detail {

template <typename T>
struct TensorImpl;

template <typename T>
using ImplPtr = std::shared_ptr<TensorImpl<T>>;

// Receives the gradient of the node's output and accumulates into the inputs.
template <typename T>
using BackwardFn = std::function<void(std::span<const T> grad_out, std::span<const ImplPtr<T>> inputs)>;

template <typename T>
struct TapeNode {
  std::string op;
  std::vector<ImplPtr<T>> inputs;
  BackwardFn<T> backward;
  bool consumed = false;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  std::shared_ptr<TapeNode<T>> node;

  bool tracks_grad() const { return requires_grad || node != nullptr; }

  // Zero-initialised on first use.
  std::span<T> grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

bool grad_mode_enabled();
void set_grad_mode(bool enabled);

}  // namespace detail

/// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_enabled()) { detail::set_grad_mode(false); }
  ~NoGradGuard() { detail::set_grad_mode(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Handle to an N-dimensional row-major array with an optional gradient slot.
///
/// Copies share storage. Values produced by operations are never mutated; only
/// leaves (parameters, buffers) are written in place, by optimizers and loaders.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  BasicTensor(Shape shape, std::vector<T> values);

  static BasicTensor zeros(const Shape& shape);
  static BasicTensor constant(const Shape& shape, T value);
  /// Reproducible for equal seeds.
  static BasicTensor normal(const Shape& shape, T mean, T stddev, std::uint64_t seed);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.rank(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape[axis]; }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const T> data() const { return impl_->data; }
  std::span<T> mutable_data() { return impl_->data; }
  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return impl_->requires_grad; }
  BasicTensor& set_requires_grad(bool on);
  bool has_grad() const { return !impl_->grad.empty(); }
  /// Empty span when no gradient has been accumulated.
  std::span<const T> grad() const { return impl_->grad; }
  void zero_grad();
  bool has_node() const { return impl_->node != nullptr; }

  /// Runs reverse-mode differentiation from this single-element tensor.
  void backward() const;

  /// Deep copy detached from the tape; keeps the requires-grad flag.
  BasicTensor clone() const;
  template <typename U>
  BasicTensor<U> cast() const;

  const detail::ImplPtr<T>& impl() const { return impl_; }
  static BasicTensor from_impl(detail::ImplPtr<T> impl);

 private:
  detail::ImplPtr<T> impl_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

template <typename T>
template <typename U>
BasicTensor<U> BasicTensor<T>::cast() const {
  std::vector<U> values(impl_->data.begin(), impl_->data.end());
  BasicTensor<U> out(impl_->shape, std::move(values));
  out.set_requires_grad(impl_->requires_grad);
  return out;
}

namespace detail {

/// Wraps freshly computed values; records a tape node when grad mode is on and
/// any input participates in differentiation.
template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data, std::vector<ImplPtr<T>> inputs,
                           std::string op, BackwardFn<T> backward);

}  // namespace detail

}  // namespace tripse
