#include <algorithm>
#include <cmath>
#include <numbers>

#include "tripse/data.hpp"
#include "tripse/errors.hpp"

namespace tripse {

namespace {

void require_image(const Tensor& image) {
  if (image.rank() != 3) throw ShapeError("expected a (C,H,W) image, got " + image.shape().to_string());
}

struct Tap {
  std::size_t i0, i1;
  double frac;
};

Tap half_pixel_tap(std::size_t o, std::size_t in, std::size_t out) {
  double s = (static_cast<double>(o) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
  s = std::max(s, 0.0);
  const auto i0 = std::min(static_cast<std::size_t>(s), in - 1);
  const auto i1 = std::min(i0 + 1, in - 1);
  return {i0, i1, s - static_cast<double>(i0)};
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w) {
  require_image(image);
  if (out_h == 0 || out_w == 0) throw ArgumentError("resize target must be positive");
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  std::vector<Tap> ty(out_h), tx(out_w);
  for (std::size_t y = 0; y < out_h; ++y) ty[y] = half_pixel_tap(y, H, out_h);
  for (std::size_t x = 0; x < out_w; ++x) tx[x] = half_pixel_tap(x, W, out_w);
  const auto src = image.data();
  std::vector<float> out(C * out_h * out_w);
  for (std::size_t c = 0; c < C; ++c) {
    const float* plane = src.data() + c * H * W;
    for (std::size_t y = 0; y < out_h; ++y) {
      const Tap& a = ty[y];
      for (std::size_t x = 0; x < out_w; ++x) {
        const Tap& b = tx[x];
        const double top = (1.0 - b.frac) * plane[a.i0 * W + b.i0] + b.frac * plane[a.i0 * W + b.i1];
        const double bottom = (1.0 - b.frac) * plane[a.i1 * W + b.i0] + b.frac * plane[a.i1 * W + b.i1];
        out[(c * out_h + y) * out_w + x] = static_cast<float>((1.0 - a.frac) * top + a.frac * bottom);
      }
    }
  }
  return Tensor(Shape{C, out_h, out_w}, std::move(out));
}

Tensor hflip(const Tensor& image) {
  require_image(image);
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  const auto src = image.data();
  std::vector<float> out(src.size());
  for (std::size_t r = 0; r < C * H; ++r) {
    for (std::size_t x = 0; x < W; ++x) out[r * W + x] = src[r * W + (W - 1 - x)];
  }
  return Tensor(image.shape(), std::move(out));
}

Tensor rotate(const Tensor& image, double degrees) {
  require_image(image);
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  const double theta = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  const double cy = (static_cast<double>(H) - 1.0) / 2.0;
  const double cx = (static_cast<double>(W) - 1.0) / 2.0;
  const auto src = image.data();
  std::vector<float> out(src.size());
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const double dx = static_cast<double>(x) - cx;
      const double dy = static_cast<double>(y) - cy;
      const double sx = cx + cs * dx + sn * dy;
      const double sy = cy - sn * dx + cs * dy;
      const double fx0 = std::floor(sx), fy0 = std::floor(sy);
      const double fx = sx - fx0, fy = sy - fy0;
      const long x0 = static_cast<long>(fx0), y0 = static_cast<long>(fy0);
      for (std::size_t c = 0; c < C; ++c) {
        const float* plane = src.data() + c * H * W;
        auto at = [&](long yy, long xx) -> double {
          if (yy < 0 || xx < 0 || yy >= static_cast<long>(H) || xx >= static_cast<long>(W)) return 0.0;
          return plane[static_cast<std::size_t>(yy) * W + static_cast<std::size_t>(xx)];
        };
        double v = 0.0;
        if ((1.0 - fy) * (1.0 - fx) != 0.0) v += (1.0 - fy) * (1.0 - fx) * at(y0, x0);
        if ((1.0 - fy) * fx != 0.0) v += (1.0 - fy) * fx * at(y0, x0 + 1);
        if (fy * (1.0 - fx) != 0.0) v += fy * (1.0 - fx) * at(y0 + 1, x0);
        if (fy * fx != 0.0) v += fy * fx * at(y0 + 1, x0 + 1);
        out[(c * H + y) * W + x] = static_cast<float>(v);
      }
    }
  }
  return Tensor(image.shape(), std::move(out));
}

std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t epoch, std::uint64_t index) {
  return std::mt19937_64(splitmix64(splitmix64(splitmix64(seed) ^ epoch) ^ index));
}

Sample augment(const Sample& s, const AugmentConfig& cfg, std::mt19937_64& rng) {
  if (cfg.rotation_min > cfg.rotation_max) throw ArgumentError("rotation range min exceeds max");
  if (cfg.hflip_prob < 0.0 || cfg.hflip_prob > 1.0) throw ArgumentError("hflip probability outside [0,1]");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const bool flip = unit(rng) < cfg.hflip_prob;
  const double angle = cfg.rotation_min + (cfg.rotation_max - cfg.rotation_min) * unit(rng);
  Tensor img = flip ? hflip(s.image) : s.image;
  if (angle != 0.0) img = rotate(img, angle);
  if (img.dim(1) != cfg.target_h || img.dim(2) != cfg.target_w) img = resize_bilinear(img, cfg.target_h, cfg.target_w);
  return {std::move(img), s.label};
}

}  // namespace tripse
