#include <algorithm>
#include <numeric>

#include "tripse/data.hpp"
#include "tripse/errors.hpp"

namespace tripse {

BatchIterator::BatchIterator(const std::vector<Sample>& samples, std::size_t batch_size, std::uint64_t seed,
                             std::uint64_t epoch, bool shuffle, bool drop_last, SampleTransform transform)
    : samples_(&samples), batch_size_(batch_size), drop_last_(drop_last), transform_(std::move(transform)) {
  if (samples.empty()) throw DataError("cannot batch an empty dataset");
  if (batch_size == 0) throw ArgumentError("batch size must be at least 1");
  order_.resize(samples.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (shuffle) {
    std::mt19937_64 rng = sample_rng(seed, epoch, ~std::uint64_t{0});
    for (std::size_t i = order_.size() - 1; i > 0; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i);
      std::swap(order_[i], order_[pick(rng)]);
    }
  }
}

std::size_t BatchIterator::num_batches() const {
  const std::size_t n = order_.size();
  return drop_last_ ? n / batch_size_ : (n + batch_size_ - 1) / batch_size_;
}

std::optional<Batch> BatchIterator::next() {
  const std::size_t n = order_.size();
  if (cursor_ >= n) return std::nullopt;
  const std::size_t take = std::min(batch_size_, n - cursor_);
  if (drop_last_ && take < batch_size_) {
    cursor_ = n;
    return std::nullopt;
  }
  Batch b;
  std::vector<float> pixels;
  Shape image_shape{1};
  for (std::size_t k = 0; k < take; ++k) {
    const std::size_t idx = order_[cursor_ + k];
    const Sample& s = (*samples_)[idx];
    const Tensor img = transform_ ? transform_(s, idx) : s.image;
    if (k == 0) {
      image_shape = img.shape();
      if (image_shape.rank() != 3) throw DataError("sample image must be (C,H,W), got " + image_shape.to_string());
      pixels.reserve(take * img.numel());
    } else if (!(img.shape() == image_shape)) {
      throw DataError("sample " + std::to_string(idx) + " has shape " + img.shape().to_string() + ", expected " +
                      image_shape.to_string());
    }
    pixels.insert(pixels.end(), img.data().begin(), img.data().end());
    b.labels.push_back(s.label);
    b.indices.push_back(idx);
  }
  cursor_ += take;
  b.images = Tensor(Shape{take, image_shape[0], image_shape[1], image_shape[2]}, std::move(pixels));
  return b;
}

}  // namespace tripse
