#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <istream>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "tripse/tensor.hpp"

namespace tripse {

struct Sample {
  Tensor image;  // (C,H,W), values in [0,1]
  std::size_t label = 0;
};

// FER2013 ---------------------------------------------------------------------

enum class Split { training, public_test, private_test };

/// "Training", "PublicTest", "PrivateTest".
std::string to_string(Split split);
/// Accepts the Usage column spelling, case-insensitive.
Split parse_split(std::string_view name);

struct FerRecord {
  Sample sample;
  Split split = Split::training;
};

inline constexpr std::size_t kFerSide = 48;
inline constexpr std::size_t kFerClasses = 7;

/// Reads the standard FER2013 CSV (header "emotion,pixels,Usage"). Throws
/// DataError naming the offending line on any malformed row.
std::vector<FerRecord> load_fer_csv(std::istream& in);
std::vector<FerRecord> load_fer_csv(const std::string& path);

/// Space-separated 0-255 integers, the CSV pixel field for a (1,48,48) image.
std::string fer_pixel_field(const Tensor& image);

struct SplitCounts {
  std::size_t training = 0;
  std::size_t public_test = 0;
  std::size_t private_test = 0;
};

SplitCounts count_splits(const std::vector<FerRecord>& records);
std::vector<Sample> select_split(const std::vector<FerRecord>& records, Split split);

// Synthetic -------------------------------------------------------------------

struct SynthConfig {
  std::size_t num_classes = 7;
  std::size_t per_class = 200;
  std::size_t height = 32;
  std::size_t width = 32;
  double noise = 0.1;
  std::uint64_t seed = 0;
};

/// Concentric rings around the image centre; class c has its own radial
/// frequency. Uniform noise of the given amplitude is added and the result
/// clamped to [0,1]. Samples are ordered class by class.
std::vector<Sample> synth_dataset(const SynthConfig& cfg);

/// The noise-free pattern of one class, (1,H,W).
Tensor synth_pattern(std::size_t label, std::size_t num_classes, std::size_t height, std::size_t width);

// Transforms ------------------------------------------------------------------

/// Half-pixel (align_corners=false) bilinear resampling of a (C,H,W) image.
Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w);
/// Mirrors the width axis.
Tensor hflip(const Tensor& image);
/// Rotates counter-clockwise by `degrees` about the image centre. Bilinear
/// sampling; source positions outside the image contribute zero.
Tensor rotate(const Tensor& image, double degrees);

struct AugmentConfig {
  double hflip_prob = 0.5;
  double rotation_min = -30.0;
  double rotation_max = 30.0;
  std::size_t target_h = 32;
  std::size_t target_w = 32;
  std::uint64_t seed = 0;
};

/// Independent generator for (seed, epoch, sample index).
std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t epoch, std::uint64_t index);

/// Flip with probability hflip_prob, rotate by a uniform angle in
/// [rotation_min, rotation_max], then resize to the target size.
Sample augment(const Sample& s, const AugmentConfig& cfg, std::mt19937_64& rng);

// Batching --------------------------------------------------------------------

struct Batch {
  Tensor images;  // (B,C,H,W)
  std::vector<std::size_t> labels;
  std::vector<std::size_t> indices;  // positions in the source sample list
};

/// Produces the image fed to the network for sample `index`.
using SampleTransform = std::function<Tensor(const Sample& s, std::size_t index)>;

/// One epoch over `samples` in a Fisher-Yates order seeded by (seed, epoch).
class BatchIterator {
 public:
  BatchIterator(const std::vector<Sample>& samples, std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch,
                bool shuffle, bool drop_last, SampleTransform transform = {});

  std::optional<Batch> next();
  std::size_t num_batches() const;
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  const std::vector<Sample>* samples_;
  std::size_t batch_size_;
  bool drop_last_;
  SampleTransform transform_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

}  // namespace tripse
