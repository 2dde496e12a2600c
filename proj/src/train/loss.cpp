#include <algorithm>
#include <cmath>

#include "tripse/errors.hpp"
#include "tripse/train.hpp"

namespace tripse {

template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy expects (N,K) logits, got " + logits.shape().to_string());
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  if (labels.size() != N) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(N) + " rows");
  }
  const T* z = logits.data().data();
  auto probs = std::make_shared<std::vector<double>>(N * K);
  double total = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    if (labels[n] >= K) {
      throw ArgumentError("label " + std::to_string(labels[n]) + " out of range for " + std::to_string(K) +
                          " classes");
    }
    const T* row = z + n * K;
    const double mx = static_cast<double>(*std::max_element(row, row + K));
    double denom = 0.0;
    for (std::size_t k = 0; k < K; ++k) denom += std::exp(static_cast<double>(row[k]) - mx);
    for (std::size_t k = 0; k < K; ++k) (*probs)[n * K + k] = std::exp(static_cast<double>(row[k]) - mx) / denom;
    total += std::log(denom) - (static_cast<double>(row[labels[n]]) - mx);
  }
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  detail::BackwardFn<T> bw = [probs, lab = std::move(lab), N, K](std::span<const T> g,
                                                                std::span<const detail::ImplPtr<T>> in) {
    if (!in[0]->tracks_grad()) return;
    auto gx = in[0]->grad_buffer();
    const double scale = static_cast<double>(g[0]) / static_cast<double>(N);
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t k = 0; k < K; ++k) {
        const double target = k == lab[n] ? 1.0 : 0.0;
        gx[n * K + k] += static_cast<T>(((*probs)[n * K + k] - target) * scale);
      }
    }
  };
  return detail::make_result(Shape{1}, std::vector<T>{static_cast<T>(total / static_cast<double>(N))},
                             {logits.impl()}, "cross_entropy", std::move(bw));
}

template BasicTensor<float> cross_entropy(const BasicTensor<float>&, std::span<const std::size_t>);
template BasicTensor<double> cross_entropy(const BasicTensor<double>&, std::span<const std::size_t>);

}  // namespace tripse
