#include "tripse/attention.hpp"

#include <algorithm>
#include <cctype>

#include "tripse/errors.hpp"
#include "tripse/ops.hpp"

namespace tripse {

std::string to_string(AttentionKind kind) {
  switch (kind) {
    case AttentionKind::none: return "none";
    case AttentionKind::se: return "se";
    case AttentionKind::ta: return "ta";
    case AttentionKind::tripse1: return "tripse1";
    case AttentionKind::tripse2: return "tripse2";
    case AttentionKind::tripse3: return "tripse3";
    case AttentionKind::tripse4: return "tripse4";
  }
  return "none";
}

AttentionKind parse_attention_kind(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  for (AttentionKind k : {AttentionKind::none, AttentionKind::se, AttentionKind::ta, AttentionKind::tripse1,
                          AttentionKind::tripse2, AttentionKind::tripse3, AttentionKind::tripse4}) {
    if (lower == to_string(k)) return k;
  }
  throw ArgumentError("unknown attention variant '" + std::string(name) + "'");
}

std::size_t AttentionConfig::resolved_reduction() const {
  if (reduction != 0) return reduction;
  return kind == AttentionKind::tripse4 ? 1 : 16;
}

std::string to_string(BranchRole role) {
  switch (role) {
    case BranchRole::channel: return "c";
    case BranchRole::width: return "w";
    case BranchRole::height: return "h";
  }
  return "c";
}

namespace {

constexpr std::array<BranchRole, 3> kRoles{BranchRole::channel, BranchRole::width, BranchRole::height};

std::size_t se_mid(std::size_t channels, std::size_t reduction) {
  if (reduction == 0) throw ArgumentError("SE reduction ratio must be positive");
  return std::max<std::size_t>(1, channels / reduction);
}

std::size_t se_count(std::size_t channels, std::size_t reduction) {
  const std::size_t mid = se_mid(channels, reduction);
  return channels * mid + mid + mid * channels + channels;
}

std::size_t rotational_channels(BranchRole role, Dims3 d) {
  switch (role) {
    case BranchRole::channel: return d.channels;
    case BranchRole::width: return d.width;
    case BranchRole::height: return d.height;
  }
  return d.channels;
}

template <typename T>
BasicTensor<T> to_nchw11(const BasicTensor<T>& v) {
  return reshape(v, Shape{v.dim(0), v.dim(1), 1, 1});
}

template <typename T>
void push_linear(const std::string& prefix, const LinearParams<T>& p, StateList<T>& out) {
  out.push_back({prefix + ".weight", p.weight, true});
  out.push_back({prefix + ".bias", p.bias, true});
}

}  // namespace

template <typename T>
BasicTensor<T> zpool(const BasicTensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("zpool expects a rank-4 tensor, got " + x.shape().to_string());
  const std::array<BasicTensor<T>, 2> parts{reduce_over_axis(x, 1, ReduceMode::max, true),
                                            reduce_over_axis(x, 1, ReduceMode::mean, true)};
  return concat(std::span<const BasicTensor<T>>(parts), 1);
}

// SE ----------------------------------------------------------------------

template <typename T>
SEBlock<T>::SEBlock(std::size_t channels_, std::size_t reduction_, Initializer& init)
    : channels(channels_), reduction(reduction_), mid(se_mid(channels_, reduction_)) {
  if (channels == 0) throw ArgumentError("SE block needs at least one channel");
  fc1.weight = init.he_normal<T>({mid, channels}, channels);
  fc1.bias = init.zeros_param<T>({mid});
  fc2.weight = init.he_normal<T>({channels, mid}, mid);
  fc2.bias = init.zeros_param<T>({channels});
}

template <typename T>
BasicTensor<T> SEBlock<T>::excitation(const BasicTensor<T>& x) const {
  if (x.rank() != 4 || x.dim(1) != channels) {
    throw ShapeError("SE block over " + std::to_string(channels) + " channels got input " + x.shape().to_string());
  }
  return linear(relu(linear(global_avg_pool(x), fc1)), fc2);
}

template <typename T>
typename SEBlock<T>::Output SEBlock<T>::forward(const BasicTensor<T>& x) const {
  auto gate = sigmoid(excitation(x));
  auto gated = mul(x, to_nchw11(gate));
  return {std::move(gated), std::move(gate)};
}

template <typename T>
void SEBlock<T>::collect_state(const std::string& prefix, StateList<T>& out) const {
  push_linear(prefix + ".fc1", fc1, out);
  push_linear(prefix + ".fc2", fc2, out);
}

// TA branch ---------------------------------------------------------------

template <typename T>
TABranch<T>::TABranch(BranchRole role_, std::size_t kernel, Initializer& init) : role(role_) {
  if (kernel % 2 == 0) throw ArgumentError("gate kernel size must be odd, got " + std::to_string(kernel));
  switch (role) {
    case BranchRole::channel: perm = {0, 1, 2, 3}; break;
    case BranchRole::width: perm = {0, 3, 2, 1}; break;
    case BranchRole::height: perm = {0, 2, 1, 3}; break;
  }
  const auto inv = inverse_permutation(perm);
  std::copy(inv.begin(), inv.end(), inv_perm.begin());
  gate_conv.weight = init.he_normal<T>({1, 2, kernel, kernel}, 2 * kernel * kernel);
  gate_conv.stride = 1;
  gate_conv.padding = (kernel - 1) / 2;
  gate_bn = BatchNormState<T>::identity(1);
}

template <typename T>
BasicTensor<T> TABranch<T>::rotate(const BasicTensor<T>& x) const {
  if (role == BranchRole::channel) return x;
  return permute(x, std::span<const std::size_t>(perm));
}

template <typename T>
BasicTensor<T> TABranch<T>::rotate_back(const BasicTensor<T>& x) const {
  if (role == BranchRole::channel) return x;
  return permute(x, std::span<const std::size_t>(inv_perm));
}

template <typename T>
BasicTensor<T> TABranch<T>::gate_logits(const BasicTensor<T>& x_rot, bool training) {
  return batchnorm2d(conv2d(zpool(x_rot), gate_conv), gate_bn, training);
}

template <typename T>
BasicTensor<T> TABranch<T>::gate(const BasicTensor<T>& x_rot, bool training) {
  if (force_unit_gate) {
    return BasicTensor<T>::constant({x_rot.dim(0), 1, x_rot.dim(2), x_rot.dim(3)}, T(1));
  }
  return sigmoid(gate_logits(x_rot, training));
}

template <typename T>
typename TABranch<T>::Output TABranch<T>::forward(const BasicTensor<T>& x, bool training) {
  if (x.rank() != 4) throw ShapeError("attention expects (N,C,H,W), got " + x.shape().to_string());
  auto x_rot = rotate(x);
  auto m = gate(x_rot, training);
  return {rotate_back(mul(x_rot, m)), m};
}

template <typename T>
void TABranch<T>::collect_state(const std::string& prefix, StateList<T>& out) const {
  out.push_back({prefix + ".conv.weight", gate_conv.weight, true});
  out.push_back({prefix + ".bn.gamma", gate_bn.gamma, true});
  out.push_back({prefix + ".bn.beta", gate_bn.beta, true});
  out.push_back({prefix + ".bn.running_mean", gate_bn.running_mean, false});
  out.push_back({prefix + ".bn.running_var", gate_bn.running_var, false});
}

// Triplet attention -------------------------------------------------------

template <typename T>
TripletAttention<T>::TripletAttention(std::size_t kernel, Initializer& init)
    : branches{TABranch<T>(BranchRole::channel, kernel, init), TABranch<T>(BranchRole::width, kernel, init),
               TABranch<T>(BranchRole::height, kernel, init)} {}

template <typename T>
BasicTensor<T> TripletAttention<T>::forward(const BasicTensor<T>& x, bool training) {
  std::array<BasicTensor<T>, 3> outs;
  for (std::size_t b = 0; b < 3; ++b) outs[b] = branches[b].forward(x, training).out;
  return average(std::span<const BasicTensor<T>>(outs));
}

template <typename T>
void TripletAttention<T>::collect_state(const std::string& prefix, StateList<T>& out) const {
  for (const auto& br : branches) br.collect_state(prefix + ".branch_" + to_string(br.role), out);
}

// TripSE ------------------------------------------------------------------

template <typename T>
TripSEBlock<T>::TripSEBlock(TripSEVariant variant_, Dims3 declared_, std::size_t reduction, std::size_t kernel,
                            Initializer& init)
    : variant(variant_),
      declared(declared_),
      branches{TABranch<T>(BranchRole::channel, kernel, init), TABranch<T>(BranchRole::width, kernel, init),
               TABranch<T>(BranchRole::height, kernel, init)} {
  if (declared.channels == 0 || declared.height == 0 || declared.width == 0) {
    throw ArgumentError("TripSE block needs a positive declared input size");
  }
  if (variant != TripSEVariant::tripse1) {
    for (BranchRole role : kRoles) branch_se.emplace_back(rotational_channels(role, declared), reduction, init);
  }
  if (variant == TripSEVariant::tripse1 || variant == TripSEVariant::tripse4) {
    unify_se.emplace(declared.channels, reduction, init);
  }
}

template <typename T>
BasicTensor<T> TripSEBlock<T>::branch_forward(std::size_t b, const BasicTensor<T>& x, bool training) {
  TABranch<T>& br = branches[b];
  switch (variant) {
    case TripSEVariant::tripse1:
      return br.forward(x, training).out;
    case TripSEVariant::tripse2: {
      auto x_rot = br.rotate(x);
      auto weighted = branch_se[b].forward(x_rot).gated;
      return br.rotate_back(mul(weighted, br.gate(weighted, training)));
    }
    case TripSEVariant::tripse3: {
      auto x_rot = br.rotate(x);
      auto se_gate = branch_se[b].forward(x_rot).gate;
      auto t = mul(x_rot, br.gate(x_rot, training));
      return br.rotate_back(mul(t, to_nchw11(se_gate)));
    }
    case TripSEVariant::tripse4: {
      auto x_rot = br.rotate(x);
      auto plane = br.gate_logits(x_rot, training);
      auto shift = to_nchw11(branch_se[b].excitation(x_rot));
      auto gate3d = sigmoid(add(plane, shift));
      return br.rotate_back(mul(x_rot, gate3d));
    }
  }
  throw ArgumentError("unknown TripSE variant");
}

template <typename T>
BasicTensor<T> TripSEBlock<T>::forward(const BasicTensor<T>& x, bool training) {
  if (x.rank() != 4 || x.dim(1) != declared.channels || x.dim(2) != declared.height ||
      x.dim(3) != declared.width) {
    throw ShapeError("TripSE block declared for (N," + std::to_string(declared.channels) + "," +
                     std::to_string(declared.height) + "," + std::to_string(declared.width) + ") got " +
                     x.shape().to_string());
  }
  std::array<BasicTensor<T>, 3> outs;
  for (std::size_t b = 0; b < 3; ++b) outs[b] = branch_forward(b, x, training);
  auto y = average(std::span<const BasicTensor<T>>(outs));
  if (unify_se) return unify_se->forward(y).gated;
  return y;
}

template <typename T>
void TripSEBlock<T>::collect_state(const std::string& prefix, StateList<T>& out) const {
  for (const auto& br : branches) br.collect_state(prefix + ".branch_" + to_string(br.role), out);
  for (std::size_t b = 0; b < branch_se.size(); ++b) {
    branch_se[b].collect_state(prefix + ".se_" + to_string(kRoles[b]), out);
  }
  if (unify_se) unify_se->collect_state(prefix + ".unify", out);
}

// Tagged union ------------------------------------------------------------

template <typename T>
BasicTensor<T> AttentionBlock<T>::forward(const BasicTensor<T>& x, bool training) {
  return std::visit(
      [&](auto& blk) -> BasicTensor<T> {
        using B = std::decay_t<decltype(blk)>;
        if constexpr (std::is_same_v<B, SEBlock<T>>) {
          return blk.forward(x).gated;
        } else {
          return blk.forward(x, training);
        }
      },
      storage_);
}

template <typename T>
void AttentionBlock<T>::collect_state(const std::string& prefix, StateList<T>& out) const {
  std::visit([&](const auto& blk) { blk.collect_state(prefix, out); }, storage_);
}

template <typename T>
std::size_t AttentionBlock<T>::param_count() const {
  StateList<T> state;
  collect_state("", state);
  return count_trainable(state);
}

template <typename T>
std::optional<AttentionBlock<T>> make_attention(const AttentionConfig& cfg, Dims3 dims, Initializer& init) {
  const std::size_t r = cfg.resolved_reduction();
  switch (cfg.kind) {
    case AttentionKind::none:
      return std::nullopt;
    case AttentionKind::se:
      return AttentionBlock<T>(cfg.kind, SEBlock<T>(dims.channels, r, init));
    case AttentionKind::ta:
      return AttentionBlock<T>(cfg.kind, TripletAttention<T>(cfg.kernel, init));
    case AttentionKind::tripse1:
    case AttentionKind::tripse2:
    case AttentionKind::tripse3:
    case AttentionKind::tripse4: {
      const int index = static_cast<int>(cfg.kind) - static_cast<int>(AttentionKind::tripse1) + 1;
      return AttentionBlock<T>(cfg.kind, TripSEBlock<T>(static_cast<TripSEVariant>(index), dims, r, cfg.kernel, init));
    }
  }
  return std::nullopt;
}

std::size_t attention_param_count(const AttentionConfig& cfg, Dims3 dims) {
  const std::size_t r = cfg.resolved_reduction();
  const std::size_t ta = 3 * (2 * cfg.kernel * cfg.kernel + 2);
  const std::size_t rotational = se_count(dims.channels, r) + se_count(dims.width, r) + se_count(dims.height, r);
  switch (cfg.kind) {
    case AttentionKind::none: return 0;
    case AttentionKind::se: return se_count(dims.channels, r);
    case AttentionKind::ta: return ta;
    case AttentionKind::tripse1: return ta + se_count(dims.channels, r);
    case AttentionKind::tripse2:
    case AttentionKind::tripse3: return ta + rotational;
    case AttentionKind::tripse4: return ta + rotational + se_count(dims.channels, r);
  }
  return 0;
}

#define TRIPSE_INSTANTIATE_ATTENTION(T)                                                                       \
  template BasicTensor<T> zpool(const BasicTensor<T>&);                                                      \
  template struct SEBlock<T>;                                                                                \
  template struct TABranch<T>;                                                                               \
  template struct TripletAttention<T>;                                                                       \
  template struct TripSEBlock<T>;                                                                            \
  template class AttentionBlock<T>;                                                                          \
  template std::optional<AttentionBlock<T>> make_attention(const AttentionConfig&, Dims3, Initializer&);

TRIPSE_INSTANTIATE_ATTENTION(float)
TRIPSE_INSTANTIATE_ATTENTION(double)

#undef TRIPSE_INSTANTIATE_ATTENTION

}  // namespace tripse
