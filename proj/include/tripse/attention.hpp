#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "tripse/init.hpp"
#include "tripse/layers.hpp"
#include "tripse/tensor.hpp"

namespace tripse {

enum class AttentionKind { none, se, ta, tripse1, tripse2, tripse3, tripse4 };

std::string to_string(AttentionKind kind);
/// Accepts none, se, ta, tripse1..tripse4 (case-insensitive).
AttentionKind parse_attention_kind(std::string_view name);

struct AttentionConfig {
  AttentionKind kind = AttentionKind::none;
  std::size_t reduction = 0;  // 0 picks the per-variant default
  std::size_t kernel = 7;

  /// 1 for TripSE4, 16 otherwise, unless set explicitly.
  std::size_t resolved_reduction() const;
};

/// Per-sample extents an attention block is built for.
struct Dims3 {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  friend bool operator==(const Dims3&, const Dims3&) = default;
};

template <typename T>
struct NamedTensor {
  std::string name;
  BasicTensor<T> tensor;
  bool trainable = true;  // false for running statistics
};

template <typename T>
using StateList = std::vector<NamedTensor<T>>;

template <typename T>
std::size_t count_trainable(const StateList<T>& state) {
  std::size_t n = 0;
  for (const auto& e : state) {
    if (e.trainable) n += e.tensor.numel();
  }
  return n;
}

/// Concatenates the max and the mean over axis 1: (N,D,A,B) -> (N,2,A,B).
template <typename T>
BasicTensor<T> zpool(const BasicTensor<T>& x);

/// Squeeze-and-excitation: gate = sigmoid(fc2(relu(fc1(gap(x))))).
template <typename T>
struct SEBlock {
  std::size_t channels = 0;
  std::size_t reduction = 1;
  std::size_t mid = 1;  // max(1, channels / reduction)
  LinearParams<T> fc1;
  LinearParams<T> fc2;

  SEBlock(std::size_t channels, std::size_t reduction, Initializer& init);

  struct Output {
    BasicTensor<T> gated;  // (N,C,H,W)
    BasicTensor<T> gate;   // (N,C)
  };

  Output forward(const BasicTensor<T>& x) const;
  /// fc2 output before its sigmoid, (N,C).
  BasicTensor<T> excitation(const BasicTensor<T>& x) const;

  void collect_state(const std::string& prefix, StateList<T>& out) const;
  std::size_t param_count() const { return channels * mid + mid + mid * channels + channels; }
};

enum class BranchRole { channel, width, height };

std::string to_string(BranchRole role);

/// One triplet-attention pathway. The permutation moves the branch's
/// rotational channel (C, W or H) to axis 1 of an (N,C,H,W) tensor.
template <typename T>
struct TABranch {
  BranchRole role = BranchRole::channel;
  std::array<std::size_t, 4> perm{0, 1, 2, 3};
  std::array<std::size_t, 4> inv_perm{0, 1, 2, 3};
  ConvParams<T> gate_conv;  // 2 -> 1 channels, k x k, padding (k-1)/2, no bias
  BatchNormState<T> gate_bn;
  /// Replaces the sigmoid gate with exact ones. Test hook.
  bool force_unit_gate = false;

  TABranch(BranchRole role, std::size_t kernel, Initializer& init);

  BasicTensor<T> rotate(const BasicTensor<T>& x) const;
  BasicTensor<T> rotate_back(const BasicTensor<T>& x) const;

  /// bn(conv(zpool(x_rot))), shape (N,1,A,B).
  BasicTensor<T> gate_logits(const BasicTensor<T>& x_rot, bool training);
  /// sigmoid(gate_logits), or ones when force_unit_gate is set.
  BasicTensor<T> gate(const BasicTensor<T>& x_rot, bool training);

  struct Output {
    BasicTensor<T> out;    // (N,C,H,W)
    BasicTensor<T> map2d;  // (N,1,A,B) over the permuted plane
  };

  Output forward(const BasicTensor<T>& x, bool training);

  void collect_state(const std::string& prefix, StateList<T>& out) const;
};

template <typename T>
struct TripletAttention {
  std::array<TABranch<T>, 3> branches;

  TripletAttention(std::size_t kernel, Initializer& init);

  /// Mean of the three branch outputs.
  BasicTensor<T> forward(const BasicTensor<T>& x, bool training);
  void collect_state(const std::string& prefix, StateList<T>& out) const;
};

enum class TripSEVariant { tripse1 = 1, tripse2 = 2, tripse3 = 3, tripse4 = 4 };

/// Triplet attention combined with squeeze-and-excitation.
///  1: TA, then an SE over C on the averaged result.
///  2: per branch, SE over the rotational channels before the TA gate.
///  3: per branch, TA gate and rotational SE gate in parallel, multiplied.
///  4: per branch, sigmoid(conv plane + rotational excitation) as a 3-D gate,
///     then an SE over C on the averaged result.
template <typename T>
struct TripSEBlock {
  TripSEVariant variant;
  Dims3 declared;
  std::array<TABranch<T>, 3> branches;
  std::vector<SEBlock<T>> branch_se;  // empty, or sized C, W, H in branch order
  std::optional<SEBlock<T>> unify_se;

  TripSEBlock(TripSEVariant variant, Dims3 declared, std::size_t reduction, std::size_t kernel, Initializer& init);

  BasicTensor<T> forward(const BasicTensor<T>& x, bool training);
  void collect_state(const std::string& prefix, StateList<T>& out) const;

 private:
  BasicTensor<T> branch_forward(std::size_t b, const BasicTensor<T>& x, bool training);
};

/// Tagged union over the block family.
template <typename T>
class AttentionBlock {
 public:
  using Storage = std::variant<SEBlock<T>, TripletAttention<T>, TripSEBlock<T>>;

  AttentionBlock(AttentionKind kind, Storage storage) : kind_(kind), storage_(std::move(storage)) {}

  AttentionKind kind() const { return kind_; }
  BasicTensor<T> forward(const BasicTensor<T>& x, bool training);
  void collect_state(const std::string& prefix, StateList<T>& out) const;
  std::size_t param_count() const;

  template <typename B>
  B* as() {
    return std::get_if<B>(&storage_);
  }
  template <typename B>
  const B* as() const {
    return std::get_if<B>(&storage_);
  }

 private:
  AttentionKind kind_;
  Storage storage_;
};

/// nullopt for AttentionKind::none.
template <typename T>
std::optional<AttentionBlock<T>> make_attention(const AttentionConfig& cfg, Dims3 dims, Initializer& init);

template <typename T>
std::size_t attention_param_count(const AttentionBlock<T>& block) {
  return block.param_count();
}

/// Closed-form trainable-parameter count; no tensors are allocated.
std::size_t attention_param_count(const AttentionConfig& cfg, Dims3 dims);

}  // namespace tripse
