#include "tripse/tensor.hpp"

#include <random>
#include <unordered_set>

#include "tripse/errors.hpp"

namespace tripse {

namespace detail {

namespace {
thread_local bool g_grad_mode = true;
}

bool grad_mode_enabled() { return g_grad_mode; }
void set_grad_mode(bool enabled) { g_grad_mode = enabled; }

template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data, std::vector<ImplPtr<T>> inputs,
                           std::string op, BackwardFn<T> backward) {
  auto impl = std::make_shared<TensorImpl<T>>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  if (impl->data.size() != impl->shape.numel()) {
    throw ShapeError(op + ": produced " + std::to_string(impl->data.size()) + " values for shape " +
                     impl->shape.to_string());
  }
  bool track = false;
  if (grad_mode_enabled()) {
    for (const auto& in : inputs) track = track || in->tracks_grad();
  }
  if (track) {
    auto node = std::make_shared<TapeNode<T>>();
    node->op = std::move(op);
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    impl->node = std::move(node);
  }
  return BasicTensor<T>::from_impl(std::move(impl));
}

}  // namespace detail

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values) {
  if (values.size() != shape.numel()) {
    throw ShapeError("tensor of shape " + shape.to_string() + " needs " + std::to_string(shape.numel()) +
                     " values, got " + std::to_string(values.size()));
  }
  impl_ = std::make_shared<detail::TensorImpl<T>>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(const Shape& shape) {
  return BasicTensor(shape, std::vector<T>(shape.numel(), T(0)));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::constant(const Shape& shape, T value) {
  return BasicTensor(shape, std::vector<T>(shape.numel(), value));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::normal(const Shape& shape, T mean, T stddev, std::uint64_t seed) {
  std::mt19937_64 engine(seed);
  std::normal_distribution<double> dist(static_cast<double>(mean), static_cast<double>(stddev));
  std::vector<T> values(shape.numel());
  for (auto& v : values) v = static_cast<T>(dist(engine));
  return BasicTensor(shape, std::move(values));
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape().to_string());
  return impl_->data[0];
}

template <typename T>
T BasicTensor<T>::at(std::initializer_list<std::size_t> index) const {
  const Shape& s = shape();
  if (index.size() != s.rank()) throw ShapeError("index rank does not match " + s.to_string());
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= s[axis]) throw ShapeError("index out of range for " + s.to_string());
    flat = flat * s[axis] + i;
    ++axis;
  }
  return impl_->data[flat];
}

template <typename T>
BasicTensor<T>& BasicTensor<T>::set_requires_grad(bool on) {
  if (impl_->node) throw AutodiffError("requires_grad can only be set on leaf tensors");
  impl_->requires_grad = on;
  return *this;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  impl_->grad.clear();
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
  BasicTensor out(impl_->shape, impl_->data);
  out.impl_->requires_grad = impl_->requires_grad;
  return out;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::from_impl(detail::ImplPtr<T> impl) {
  BasicTensor t;
  t.impl_ = std::move(impl);
  return t;
}

template <typename T>
void BasicTensor<T>::backward() const {
  using detail::ImplPtr;
  if (numel() != 1) {
    throw AutodiffError("backward() requires a single-element root, got shape " + shape().to_string());
  }
  if (!impl_->node) throw AutodiffError("backward() root is not attached to a tape");
  if (impl_->node->consumed) throw AutodiffError("backward() called twice on the same graph");

  // Post-order DFS; reversed it is a topological order from the root. Owning
  // pointers keep intermediates alive while the tape is released below.
  std::vector<ImplPtr<T>> order;
  std::unordered_set<const detail::TensorImpl<T>*> seen;
  std::vector<std::pair<ImplPtr<T>, std::size_t>> stack;
  stack.emplace_back(impl_, 0);
  seen.insert(impl_.get());
  while (!stack.empty()) {
    auto& top = stack.back();
    const auto& node = top.first->node;
    if (node && top.second < node->inputs.size()) {
      ImplPtr<T> child = node->inputs[top.second++];
      if (child->node && child->node->consumed) {
        throw AutodiffError("backward() reached a graph consumed by an earlier backward()");
      }
      if (seen.insert(child.get()).second) stack.emplace_back(std::move(child), 0);
    } else {
      order.push_back(std::move(top.first));
      stack.pop_back();
    }
  }

  impl_->grad.assign(1, T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl<T>* cur = it->get();
    auto node = cur->node;
    if (!node) continue;
    if (!cur->grad.empty()) {
      node->backward(std::span<const T>(cur->grad), std::span<const ImplPtr<T>>(node->inputs));
    }
    node->consumed = true;
    node->backward = nullptr;
    node->inputs.clear();
    cur->grad.clear();
    cur->grad.shrink_to_fit();
  }
}

template class BasicTensor<float>;
template class BasicTensor<double>;

template BasicTensor<float> detail::make_result(Shape, std::vector<float>, std::vector<detail::ImplPtr<float>>,
                                                std::string, detail::BackwardFn<float>);
template BasicTensor<double> detail::make_result(Shape, std::vector<double>, std::vector<detail::ImplPtr<double>>,
                                                 std::string, detail::BackwardFn<double>);

}  // namespace tripse
