#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "tripse/data.hpp"
#include "tripse/errors.hpp"

namespace tripse {

Tensor synth_pattern(std::size_t label, std::size_t num_classes, std::size_t height, std::size_t width) {
  if (num_classes < 2) throw DataError("synthetic dataset needs at least two classes");
  if (label >= num_classes) throw DataError("synthetic label out of range");
  if (height == 0 || width == 0) throw DataError("synthetic image size must be positive");
  // Radial frequency from 1 to 4 cycles across the classes.
  const double freq = 1.0 + 3.0 * static_cast<double>(label) / static_cast<double>(num_classes - 1);
  const double cy = (static_cast<double>(height) - 1.0) / 2.0;
  const double cx = (static_cast<double>(width) - 1.0) / 2.0;
  const double radius = static_cast<double>(std::min(height, width)) / 2.0;
  std::vector<float> v(height * width);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double r = std::hypot(static_cast<double>(y) - cy, static_cast<double>(x) - cx) / radius;
      v[y * width + x] = static_cast<float>(0.5 + 0.4 * std::cos(2.0 * std::numbers::pi * freq * r));
    }
  }
  return Tensor(Shape{1, height, width}, std::move(v));
}

std::vector<Sample> synth_dataset(const SynthConfig& cfg) {
  if (cfg.noise < 0.0) throw DataError("synthetic noise amplitude must be non-negative");
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> noise(-cfg.noise, cfg.noise);
  std::vector<Sample> out;
  out.reserve(cfg.num_classes * cfg.per_class);
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    const Tensor base = synth_pattern(c, cfg.num_classes, cfg.height, cfg.width);
    for (std::size_t i = 0; i < cfg.per_class; ++i) {
      Tensor img = base.clone();
      if (cfg.noise > 0.0) {
        for (auto& p : img.mutable_data()) {
          p = static_cast<float>(std::clamp(static_cast<double>(p) + noise(rng), 0.0, 1.0));
        }
      }
      out.push_back({std::move(img), c});
    }
  }
  return out;
}

}  // namespace tripse
