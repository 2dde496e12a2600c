#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <vector>

#include "tripse/attention.hpp"
#include "tripse/layers.hpp"
#include "tripse/tensor.hpp"

namespace tripse {

struct StageSpec {
  std::size_t width = 16;
  std::size_t depth = 1;
  bool downsample = false;  // stride-2 entry block
};

struct BackboneConfig {
  std::size_t in_channels = 1;
  std::size_t num_classes = 7;
  std::array<StageSpec, 4> stages{{{16, 1, false}, {32, 1, true}, {64, 1, true}, {128, 1, true}}};
  std::size_t stem_stride = 1;
  AttentionConfig attention;
  std::size_t input_height = 32;
  std::size_t input_width = 32;
  std::uint64_t seed = 0;

  /// Output extents of each stage, i.e. the input each attention block sees.
  /// Throws ConfigError when the input size is not divisible by the cumulative stride.
  std::array<Dims3, 4> stage_dims() const;
};

/// conv3x3-BN-ReLU-conv3x3-BN plus identity or 1x1 projection shortcut, then ReLU.
template <typename T>
struct ResidualBlock {
  ConvParams<T> conv1;
  BatchNormState<T> bn1;
  ConvParams<T> conv2;
  BatchNormState<T> bn2;
  std::optional<ConvParams<T>> proj;
  std::optional<BatchNormState<T>> proj_bn;

  ResidualBlock(std::size_t in_channels, std::size_t out_channels, std::size_t stride, Initializer& init);

  BasicTensor<T> forward(const BasicTensor<T>& x, bool training);
  void collect_state(const std::string& prefix, StateList<T>& out) const;
};

struct ParamCount {
  std::size_t total = 0;
  std::size_t attention = 0;
};

/// Stem, four residual stages with an optional attention block after each,
/// global average pooling and a linear classifier.
template <typename T>
class MiniBackbone {
 public:
  /// Host weights come from cfg.seed; attention weights from a stream derived
  /// from it, so every attention variant shares identical host weights.
  static MiniBackbone build(const BackboneConfig& cfg);

  /// Logits (N, num_classes). When stage_shapes is given, it receives the
  /// output shape of each stage.
  BasicTensor<T> forward(const BasicTensor<T>& x, bool training, std::vector<Shape>* stage_shapes = nullptr);

  /// Every parameter and buffer in a fixed order, each exactly once.
  StateList<T> state() const;
  std::vector<BasicTensor<T>> parameters() const;
  ParamCount count_params() const;
  /// FNV-1a over the ordered (name, shape) list.
  std::uint64_t fingerprint() const;

  const BackboneConfig& config() const { return cfg_; }
  std::array<std::optional<AttentionBlock<T>>, 4>& attention() { return attn_; }
  const std::array<std::optional<AttentionBlock<T>>, 4>& attention() const { return attn_; }

 private:
  explicit MiniBackbone(const BackboneConfig& cfg);

  BackboneConfig cfg_;
  ConvParams<T> stem_;
  BatchNormState<T> stem_bn_;
  std::array<std::vector<ResidualBlock<T>>, 4> stages_;
  std::array<std::optional<AttentionBlock<T>>, 4> attn_;
  LinearParams<T> head_;
};

/// Host-only trainable parameter count, closed form.
std::size_t host_param_count(const BackboneConfig& cfg);

// Checkpoint container:
//   "TSEW" | version u32 | fingerprint u64 | tensor count u32
//   then per tensor: name length u16 | name bytes | TSR1 tensor
inline constexpr std::uint32_t kWeightsVersion = 1;
inline constexpr std::uint32_t kTrainingCheckpointVersion = 2;

void save_weights(const MiniBackbone<float>& model, std::ostream& out, std::uint32_t version = kWeightsVersion);
/// Returns the container version. Throws CheckpointError on fingerprint or
/// layout mismatch and FormatError on malformed or truncated input.
std::uint32_t load_weights(MiniBackbone<float>& model, std::istream& in);

}  // namespace tripse
