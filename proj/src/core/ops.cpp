#include "tripse/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <string>

#include "tripse/errors.hpp"
#include "tripse/parallel.hpp"

namespace tripse {

namespace testing {
namespace {
std::atomic<bool> g_fault{false};
}
void inject_backward_fault(bool on) { g_fault = on; }
bool backward_fault_injected() { return g_fault; }
}  // namespace testing

namespace {

using detail::BackwardFn;
using detail::ImplPtr;
using detail::make_result;

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

// Visits every multi-index of `dims` in row-major order, passing the flat
// offsets of two strided operands.
template <typename F>
void for_each_offset(std::span<const std::size_t> dims, std::span<const std::size_t> stride_a,
                     std::span<const std::size_t> stride_b, F&& fn) {
  const std::size_t rank = dims.size();
  std::size_t total = 1;
  for (std::size_t d : dims) total *= d;
  std::vector<std::size_t> idx(rank, 0);
  std::size_t off_a = 0;
  std::size_t off_b = 0;
  const std::size_t inner = dims[rank - 1];
  const std::size_t sa = stride_a[rank - 1];
  const std::size_t sb = stride_b[rank - 1];
  for (std::size_t flat = 0; flat < total; flat += inner) {
    for (std::size_t i = 0; i < inner; ++i) fn(flat + i, off_a + i * sa, off_b + i * sb);
    for (std::size_t ax = rank - 1; ax-- > 0;) {
      off_a += stride_a[ax];
      off_b += stride_b[ax];
      if (++idx[ax] < dims[ax]) break;
      off_a -= stride_a[ax] * dims[ax];
      off_b -= stride_b[ax] * dims[ax];
      idx[ax] = 0;
    }
  }
}

template <typename T>
void im2col(const T* x, std::size_t C, std::size_t H, std::size_t W, std::size_t k, std::size_t stride,
            std::size_t pad, std::size_t Ho, std::size_t Wo, T* cols) {
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        T* row = cols + ((c * k + ki) * k + kj) * Ho * Wo;
        for (std::size_t oh = 0; oh < Ho; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + ki) - static_cast<std::ptrdiff_t>(pad);
          T* dst = row + oh * Wo;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) {
            std::fill(dst, dst + Wo, T(0));
            continue;
          }
          const T* src = x + (c * H + static_cast<std::size_t>(ih)) * W;
          for (std::size_t ow = 0; ow < Wo; ++ow) {
            const std::ptrdiff_t iw =
                static_cast<std::ptrdiff_t>(ow * stride + kj) - static_cast<std::ptrdiff_t>(pad);
            dst[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) ? T(0) : src[iw];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, std::size_t C, std::size_t H, std::size_t W, std::size_t k, std::size_t stride,
                std::size_t pad, std::size_t Ho, std::size_t Wo, T* dx) {
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const T* row = cols + ((c * k + ki) * k + kj) * Ho * Wo;
        for (std::size_t oh = 0; oh < Ho; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + ki) - static_cast<std::ptrdiff_t>(pad);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
          T* dst = dx + (c * H + static_cast<std::size_t>(ih)) * W;
          for (std::size_t ow = 0; ow < Wo; ++ow) {
            const std::ptrdiff_t iw =
                static_cast<std::ptrdiff_t>(ow * stride + kj) - static_cast<std::ptrdiff_t>(pad);
            if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(W)) dst[iw] += row[oh * Wo + ow];
          }
        }
      }
    }
  }
}

template <typename T>
T stable_sigmoid(T v) {
  // Clamped so the gate never reaches exactly 0 or 1.
  constexpr T lo = std::numeric_limits<T>::min();
  constexpr T hi = T(1) - std::numeric_limits<T>::epsilon() / T(2);
  T s;
  if (v >= T(0)) {
    s = T(1) / (T(1) + std::exp(-v));
  } else {
    const T e = std::exp(v);
    s = e / (T(1) + e);
  }
  return std::clamp(s, lo, hi);
}

}  // namespace

std::vector<std::size_t> inverse_permutation(std::span<const std::size_t> order) {
  std::vector<std::size_t> inv(order.size(), order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (order[i] >= order.size() || inv[order[i]] != order.size()) {
      throw ArgumentError("invalid permutation");
    }
    inv[order[i]] = i;
  }
  return inv;
}

template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& x, std::span<const std::size_t> order) {
  const std::size_t rank = x.rank();
  if (order.size() != rank) throw ArgumentError("permutation length does not match rank");
  (void)inverse_permutation(order);

  const auto in_strides = x.shape().strides();
  std::vector<std::size_t> out_dims(rank), src_strides(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_dims[i] = x.dim(order[i]);
    src_strides[i] = in_strides[order[i]];
  }
  Shape out_shape(out_dims);
  const auto out_strides = out_shape.strides();

  std::vector<T> out(x.numel());
  const auto src = x.data();
  for_each_offset(std::span<const std::size_t>(out_dims), src_strides, out_strides,
                  [&](std::size_t, std::size_t s, std::size_t d) { out[d] = src[s]; });

  BackwardFn<T> bw = [out_dims, src_strides, out_strides](std::span<const T> g, std::span<const ImplPtr<T>> in) {
    if (!in[0]->tracks_grad()) return;
    auto gx = in[0]->grad_buffer();
    for_each_offset(std::span<const std::size_t>(out_dims), src_strides, out_strides,
                    [&](std::size_t, std::size_t s, std::size_t d) { gx[s] += g[d]; });
  };
  return make_result(std::move(out_shape), std::move(out), {x.impl()}, "permute", std::move(bw));
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, const Shape& shape) {
  require(shape.numel() == x.numel(), "reshape " + x.shape().to_string() + " -> " + shape.to_string());
  std::vector<T> out(x.data().begin(), x.data().end());
  BackwardFn<T> bw = [](std::span<const T> g, std::span<const ImplPtr<T>> in) {
    if (!in[0]->tracks_grad()) return;
    auto gx = in[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  };
  return make_result(shape, std::move(out), {x.impl()}, "reshape", std::move(bw));
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const ConvParams<T>& p) {
  require(x.rank() == 4, "conv2d expects (N,C,H,W), got " + x.shape().to_string());
  require(p.weight.rank() == 4 && p.weight.dim(2) == p.weight.dim(3), "conv2d weight must be (outC,inC,k,k)");
  require(p.stride >= 1, "conv2d stride must be positive");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t outC = p.out_channels(), k = p.kernel(), s = p.stride, pad = p.padding;
  require(p.in_channels() == C, "conv2d channel mismatch: input has " + std::to_string(C) + ", weight expects " +
                                    std::to_string(p.in_channels()));
  require(H + 2 * pad >= k && W + 2 * pad >= k, "conv2d kernel larger than padded input");
  const bool has_bias = p.bias.defined();
  if (has_bias) require(p.bias.numel() == outC, "conv2d bias size mismatch");

  const std::size_t Ho = (H + 2 * pad - k) / s + 1;
  const std::size_t Wo = (W + 2 * pad - k) / s + 1;
  const std::size_t ckk = C * k * k;
  const std::size_t hw = Ho * Wo;

  std::vector<T> out(N * outC * hw);
  const T* xd = x.data().data();
  const T* wd = p.weight.data().data();
  const T* bd = has_bias ? p.bias.data().data() : nullptr;
  parallel_for(N, [&](std::size_t n) {
    std::vector<T> cols(ckk * hw);
    im2col(xd + n * C * H * W, C, H, W, k, s, pad, Ho, Wo, cols.data());
    MatMap<T> o(out.data() + n * outC * hw, outC, hw);
    o.noalias() = ConstMatMap<T>(wd, outC, ckk) * ConstMatMap<T>(cols.data(), ckk, hw);
    if (bd) {
      for (std::size_t oc = 0; oc < outC; ++oc) o.row(oc).array() += bd[oc];
    }
  });

  std::vector<ImplPtr<T>> inputs{x.impl(), p.weight.impl()};
  if (has_bias) inputs.push_back(p.bias.impl());
  BackwardFn<T> bw = [N, C, H, W, outC, k, s, pad, Ho, Wo, ckk, hw, has_bias](std::span<const T> g,
                                                                               std::span<const ImplPtr<T>> in) {
    const auto& xi = in[0];
    const auto& wi = in[1];
    const T* gd = g.data();
    if (xi->tracks_grad()) {
      T* gx = xi->grad_buffer().data();
      const T* wd = wi->data.data();
      parallel_for(N, [&](std::size_t n) {
        std::vector<T> dcols(ckk * hw);
        MatMap<T>(dcols.data(), ckk, hw).noalias() =
            ConstMatMap<T>(wd, outC, ckk).transpose() * ConstMatMap<T>(gd + n * outC * hw, outC, hw);
        col2im_add(dcols.data(), C, H, W, k, s, pad, Ho, Wo, gx + n * C * H * W);
      });
    }
    if (wi->tracks_grad()) {
      MatMap<T> gw(wi->grad_buffer().data(), outC, ckk);
      std::vector<T> cols(ckk * hw);
      for (std::size_t n = 0; n < N; ++n) {
        im2col(xi->data.data() + n * C * H * W, C, H, W, k, s, pad, Ho, Wo, cols.data());
        gw.noalias() += ConstMatMap<T>(gd + n * outC * hw, outC, hw) * ConstMatMap<T>(cols.data(), ckk, hw).transpose();
      }
    }
    if (has_bias && in[2]->tracks_grad()) {
      auto gb = in[2]->grad_buffer();
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t oc = 0; oc < outC; ++oc) {
          const T* row = gd + (n * outC + oc) * hw;
          T acc = T(0);
          for (std::size_t i = 0; i < hw; ++i) acc += row[i];
          gb[oc] += acc;
        }
      }
    }
  };
  return make_result(Shape{N, outC, Ho, Wo}, std::move(out), std::move(inputs), "conv2d", std::move(bw));
}

template <typename T>
BasicTensor<T> batchnorm2d(const BasicTensor<T>& x, BatchNormState<T>& st, bool training) {
  require(x.rank() == 4, "batchnorm2d expects (N,C,H,W), got " + x.shape().to_string());
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  require(st.channels() == C, "batchnorm2d channel mismatch: input has " + std::to_string(C) + ", state has " +
                                  std::to_string(st.channels()));
  const std::size_t count = N * HW;
  if (training && count == 1) {
    throw DegenerateBatchError("batchnorm2d in training mode needs more than one value per channel");
  }

  const T* xd = x.data().data();
  const T* gamma = st.gamma.data().data();
  const T* beta = st.beta.data().data();
  std::vector<T> mean(C), invstd(C);
  if (training) {
    auto rm = st.running_mean.mutable_data();
    auto rv = st.running_var.mutable_data();
    for (std::size_t c = 0; c < C; ++c) {
      double acc = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = xd + (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) acc += p[i];
      }
      const double mu = acc / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = xd + (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) {
          const double d = p[i] - mu;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(count);
      mean[c] = static_cast<T>(mu);
      invstd[c] = static_cast<T>(1.0 / std::sqrt(var + st.eps));
      const double unbiased = sq / static_cast<double>(count - 1);
      rm[c] = static_cast<T>((1.0 - st.momentum) * rm[c] + st.momentum * mu);
      rv[c] = static_cast<T>((1.0 - st.momentum) * rv[c] + st.momentum * unbiased);
    }
  } else {
    const auto rm = st.running_mean.data();
    const auto rv = st.running_var.data();
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = rm[c];
      invstd[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(rv[c]) + st.eps));
    }
  }

  std::vector<T> xhat(x.numel()), out(x.numel());
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        const T h = (xd[base + i] - mean[c]) * invstd[c];
        xhat[base + i] = h;
        out[base + i] = gamma[c] * h + beta[c];
      }
    }
  }

  BackwardFn<T> bw = [N, C, HW, count, training, xhat = std::move(xhat), invstd](std::span<const T> g,
                                                                                 std::span<const ImplPtr<T>> in) {
    const auto& xi = in[0];
    const auto& gi = in[1];
    const auto& bi = in[2];
    std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0);
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t base = (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) {
          sum_g[c] += g[base + i];
          sum_gx[c] += static_cast<double>(g[base + i]) * xhat[base + i];
        }
      }
    }
    if (gi->tracks_grad()) {
      auto gg = gi->grad_buffer();
      for (std::size_t c = 0; c < C; ++c) gg[c] += static_cast<T>(sum_gx[c]);
    }
    if (bi->tracks_grad()) {
      auto gb = bi->grad_buffer();
      for (std::size_t c = 0; c < C; ++c) gb[c] += static_cast<T>(sum_g[c]);
    }
    if (!xi->tracks_grad()) return;
    auto gx = xi->grad_buffer();
    const T* gamma = gi->data.data();
    const double m = static_cast<double>(count);
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t base = (n * C + c) * HW;
        const T scale = gamma[c] * invstd[c];
        if (training) {
          const T mg = static_cast<T>(sum_g[c] / m);
          const T mgx = static_cast<T>(sum_gx[c] / m);
          for (std::size_t i = 0; i < HW; ++i) gx[base + i] += scale * (g[base + i] - mg - xhat[base + i] * mgx);
        } else {
          for (std::size_t i = 0; i < HW; ++i) gx[base + i] += scale * g[base + i];
        }
      }
    }
  };
  return make_result(x.shape(), std::move(out), {x.impl(), st.gamma.impl(), st.beta.impl()}, "batchnorm2d",
                     std::move(bw));
}

template <typename T>
BasicTensor<T> reduce_over_axis(const BasicTensor<T>& x, std::size_t axis, ReduceMode mode, bool keepdim) {
  if (axis >= x.rank()) throw ArgumentError("reduce axis out of range for " + x.shape().to_string());
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t len = x.dim(axis);

  std::vector<std::size_t> dims(x.shape().dims().begin(), x.shape().dims().end());
  if (keepdim || x.rank() == 1) {
    dims[axis] = 1;
  } else {
    dims.erase(dims.begin() + static_cast<std::ptrdiff_t>(axis));
  }

  const T* xd = x.data().data();
  std::vector<T> out(outer * inner);
  if (mode == ReduceMode::max) {
    std::vector<std::size_t> arg(outer * inner);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const T* p = xd + o * len * inner + i;
        std::size_t best = 0;
        for (std::size_t a = 1; a < len; ++a) {
          if (p[a * inner] > p[best * inner]) best = a;
        }
        out[o * inner + i] = p[best * inner];
        arg[o * inner + i] = o * len * inner + best * inner + i;
      }
    }
    BackwardFn<T> bw = [arg = std::move(arg)](std::span<const T> g, std::span<const ImplPtr<T>> in) {
      if (!in[0]->tracks_grad()) return;
      auto gx = in[0]->grad_buffer();
      for (std::size_t j = 0; j < g.size(); ++j) gx[arg[j]] += g[j];
    };
    return make_result(Shape(dims), std::move(out), {x.impl()}, "reduce_max", std::move(bw));
  }

  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const T* p = xd + o * len * inner + i;
      double acc = 0.0;
      for (std::size_t a = 0; a < len; ++a) acc += p[a * inner];
      out[o * inner + i] = static_cast<T>(acc / static_cast<double>(len));
    }
  }
  BackwardFn<T> bw = [outer, inner, len](std::span<const T> g, std::span<const ImplPtr<T>> in) {
    if (!in[0]->tracks_grad()) return;
    auto gx = in[0]->grad_buffer();
    const T inv = T(1) / static_cast<T>(len);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t a = 0; a < len; ++a) {
        for (std::size_t i = 0; i < inner; ++i) gx[(o * len + a) * inner + i] += g[o * inner + i] * inv;
      }
    }
  };
  return make_result(Shape(dims), std::move(out), {x.impl()}, "reduce_mean", std::move(bw));
}

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x) {
  require(x.rank() == 4, "global_avg_pool expects (N,C,H,W), got " + x.shape().to_string());
  const std::size_t NC = x.dim(0) * x.dim(1), HW = x.dim(2) * x.dim(3);
  const T* xd = x.data().data();
  std::vector<T> out(NC);
  for (std::size_t j = 0; j < NC; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < HW; ++i) acc += xd[j * HW + i];
    out[j] = static_cast<T>(acc / static_cast<double>(HW));
  }
  BackwardFn<T> bw = [NC, HW](std::span<const T> g, std::span<const ImplPtr<T>> in) {
    if (!in[0]->tracks_grad()) return;
    auto gx = in[0]->grad_buffer();
    const T inv = T(1) / static_cast<T>(HW);
    for (std::size_t j = 0; j < NC; ++j) {
      const T v = g[j] * inv;
      for (std::size_t i = 0; i < HW; ++i) gx[j * HW + i] += v;
    }
  };
  return make_result(Shape{x.dim(0), x.dim(1)}, std::move(out), {x.impl()}, "global_avg_pool", std::move(bw));
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const LinearParams<T>& p) {
  require(x.rank() == 2, "linear expects (N,in), got " + x.shape().to_string());
  const std::size_t N = x.dim(0), in_f = p.in_features(), out_f = p.out_features();
  require(x.dim(1) == in_f, "linear input has " + std::to_string(x.dim(1)) + " features, weight expects " +
                                std::to_string(in_f));
  require(p.bias.numel() == out_f, "linear bias size mismatch");
  std::vector<T> out(N * out_f);
  MatMap<T> o(out.data(), N, out_f);
  o.noalias() = ConstMatMap<T>(x.data().data(), N, in_f) * ConstMatMap<T>(p.weight.data().data(), out_f, in_f).transpose();
  const T* b = p.bias.data().data();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t j = 0; j < out_f; ++j) out[n * out_f + j] += b[j];
  }
  BackwardFn<T> bw = [N, in_f, out_f](std::span<const T> g, std::span<const ImplPtr<T>> in) {
    ConstMatMap<T> gm(g.data(), N, out_f);
    if (in[0]->tracks_grad()) {
      MatMap<T>(in[0]->grad_buffer().data(), N, in_f).noalias() += gm * ConstMatMap<T>(in[1]->data.data(), out_f, in_f);
    }
    if (in[1]->tracks_grad()) {
      MatMap<T>(in[1]->grad_buffer().data(), out_f, in_f).noalias() +=
          gm.transpose() * ConstMatMap<T>(in[0]->data.data(), N, in_f);
    }
    if (in[2]->tracks_grad()) {
      auto gb = in[2]->grad_buffer();
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t j = 0; j < out_f; ++j) gb[j] += g[n * out_f + j];
      }
    }
  };
  return make_result(Shape{N, out_f}, std::move(out), {x.impl(), p.weight.impl(), p.bias.impl()}, "linear",
                     std::move(bw));
}

template <typename T>
BasicTensor<T> activation(const BasicTensor<T>& x, Activation kind) {
  const auto xd = x.data();
  std::vector<T> out(xd.size());
  if (kind == Activation::relu) {
    for (std::size_t i = 0; i < xd.size(); ++i) out[i] = xd[i] > T(0) ? xd[i] : T(0);
    BackwardFn<T> bw = [](std::span<const T> g, std::span<const ImplPtr<T>> in) {
      if (!in[0]->tracks_grad()) return;
      auto gx = in[0]->grad_buffer();
      const auto& v = in[0]->data;
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (v[i] > T(0)) gx[i] += g[i];
      }
    };
    return make_result(x.shape(), std::move(out), {x.impl()}, "relu", std::move(bw));
  }
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = stable_sigmoid(xd[i]);
  BackwardFn<T> bw = [s = out](std::span<const T> g, std::span<const ImplPtr<T>> in) {
    if (!in[0]->tracks_grad()) return;
    auto gx = in[0]->grad_buffer();
    const T fault = testing::backward_fault_injected() ? T(1.01) : T(1);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += fault * g[i] * s[i] * (T(1) - s[i]);
  };
  return make_result(x.shape(), std::move(out), {x.impl()}, "sigmoid", std::move(bw));
}

template <typename T>
BasicTensor<T> ew(const BasicTensor<T>& x, const BasicTensor<T>& y, Binary kind) {
  const bool is_mul = kind == Binary::mul;
  const char* name = is_mul ? "mul" : "add";
  if (x.shape() == y.shape()) {
    const auto a = x.data();
    const auto b = y.data();
    std::vector<T> out(a.size());
    if (is_mul) {
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    } else {
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    }
    BackwardFn<T> bw = [is_mul](std::span<const T> g, std::span<const ImplPtr<T>> in) {
      for (int side = 0; side < 2; ++side) {
        if (!in[side]->tracks_grad()) continue;
        auto gs = in[side]->grad_buffer();
        if (is_mul) {
          const auto& other = in[1 - side]->data;
          for (std::size_t i = 0; i < g.size(); ++i) gs[i] += g[i] * other[i];
        } else {
          for (std::size_t i = 0; i < g.size(); ++i) gs[i] += g[i];
        }
      }
    };
    return make_result(x.shape(), std::move(out), {x.impl(), y.impl()}, name, std::move(bw));
  }

  const std::size_t rank = x.rank();
  if (y.rank() != rank) {
    throw ShapeError(std::string(name) + ": cannot broadcast " + x.shape().to_string() + " with " +
                     y.shape().to_string());
  }
  std::vector<std::size_t> dims(rank), sx(rank), sy(rank);
  const auto xs = x.shape().strides();
  const auto ys = y.shape().strides();
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t a = x.dim(i), b = y.dim(i);
    if (a != b && a != 1 && b != 1) {
      throw ShapeError(std::string(name) + ": cannot broadcast " + x.shape().to_string() + " with " +
                       y.shape().to_string());
    }
    dims[i] = std::max(a, b);
    sx[i] = a == 1 ? 0 : xs[i];
    sy[i] = b == 1 ? 0 : ys[i];
  }
  Shape out_shape(dims);
  std::vector<T> out(out_shape.numel());
  const auto a = x.data();
  const auto b = y.data();
  if (is_mul) {
    for_each_offset(std::span<const std::size_t>(dims), sx, sy,
                    [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = a[i] * b[j]; });
  } else {
    for_each_offset(std::span<const std::size_t>(dims), sx, sy,
                    [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = a[i] + b[j]; });
  }
  BackwardFn<T> bw = [is_mul, dims, sx, sy](std::span<const T> g, std::span<const ImplPtr<T>> in) {
    const auto& xi = in[0];
    const auto& yi = in[1];
    const bool gx_on = xi->tracks_grad();
    const bool gy_on = yi->tracks_grad();
    if (!gx_on && !gy_on) return;
    std::span<T> gx = gx_on ? xi->grad_buffer() : std::span<T>();
    std::span<T> gy = gy_on ? yi->grad_buffer() : std::span<T>();
    const auto& a = xi->data;
    const auto& b = yi->data;
    for_each_offset(std::span<const std::size_t>(dims), sx, sy, [&](std::size_t o, std::size_t i, std::size_t j) {
      if (is_mul) {
        if (gx_on) gx[i] += g[o] * b[j];
        if (gy_on) gy[j] += g[o] * a[i];
      } else {
        if (gx_on) gx[i] += g[o];
        if (gy_on) gy[j] += g[o];
      }
    });
  };
  return make_result(std::move(out_shape), std::move(out), {x.impl(), y.impl()}, name, std::move(bw));
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor) {
  const auto xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = xd[i] * factor;
  BackwardFn<T> bw = [factor](std::span<const T> g, std::span<const ImplPtr<T>> in) {
    if (!in[0]->tracks_grad()) return;
    auto gx = in[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
  };
  return make_result(x.shape(), std::move(out), {x.impl()}, "scale", std::move(bw));
}

template <typename T>
BasicTensor<T> average(std::span<const BasicTensor<T>> xs) {
  if (xs.empty()) throw ArgumentError("average of an empty list");
  const Shape& shape = xs[0].shape();
  for (const auto& t : xs) require(t.shape() == shape, "average: shapes differ");
  std::vector<T> out(xs[0].data().begin(), xs[0].data().end());
  for (std::size_t k = 1; k < xs.size(); ++k) {
    const auto d = xs[k].data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += d[i];
  }
  const T count = static_cast<T>(xs.size());
  for (auto& v : out) v /= count;
  std::vector<ImplPtr<T>> inputs;
  for (const auto& t : xs) inputs.push_back(t.impl());
  BackwardFn<T> bw = [count](std::span<const T> g, std::span<const ImplPtr<T>> in) {
    for (const auto& impl : in) {
      if (!impl->tracks_grad()) continue;
      auto gx = impl->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / count;
    }
  };
  return make_result(shape, std::move(out), std::move(inputs), "average", std::move(bw));
}

template <typename T>
BasicTensor<T> concat(std::span<const BasicTensor<T>> xs, std::size_t axis) {
  if (xs.empty()) throw ArgumentError("concat of an empty list");
  const std::size_t rank = xs[0].rank();
  if (axis >= rank) throw ArgumentError("concat axis out of range");
  std::vector<std::size_t> dims(xs[0].shape().dims().begin(), xs[0].shape().dims().end());
  dims[axis] = 0;
  for (const auto& t : xs) {
    require(t.rank() == rank, "concat: rank mismatch");
    for (std::size_t i = 0; i < rank; ++i) {
      if (i != axis) {
        require(t.dim(i) == xs[0].dim(i),
                "concat: incompatible shapes " + xs[0].shape().to_string() + " and " + t.shape().to_string());
      }
    }
    dims[axis] += t.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= dims[i];
  for (std::size_t i = axis + 1; i < rank; ++i) inner *= dims[i];
  const std::size_t total_len = dims[axis];

  std::vector<T> out(outer * total_len * inner);
  std::vector<std::size_t> lens;
  std::vector<ImplPtr<T>> inputs;
  std::size_t offset = 0;
  for (const auto& t : xs) {
    const std::size_t len = t.dim(axis);
    const T* src = t.data().data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(src + o * len * inner, src + (o + 1) * len * inner, out.data() + (o * total_len + offset) * inner);
    }
    offset += len;
    lens.push_back(len);
    inputs.push_back(t.impl());
  }
  BackwardFn<T> bw = [outer, inner, total_len, lens](std::span<const T> g, std::span<const ImplPtr<T>> in) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < in.size(); ++k) {
      const std::size_t len = lens[k];
      if (in[k]->tracks_grad()) {
        auto gx = in[k]->grad_buffer();
        for (std::size_t o = 0; o < outer; ++o) {
          const T* src = g.data() + (o * total_len + off) * inner;
          T* dst = gx.data() + o * len * inner;
          for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
        }
      }
      off += len;
    }
  };
  return make_result(Shape(dims), std::move(out), std::move(inputs), "concat", std::move(bw));
}

template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= x.rank()) throw ArgumentError("slice axis out of range");
  if (length == 0 || start + length > x.dim(axis)) throw ArgumentError("slice range out of bounds");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t len = x.dim(axis);
  std::vector<std::size_t> dims(x.shape().dims().begin(), x.shape().dims().end());
  dims[axis] = length;
  std::vector<T> out(outer * length * inner);
  const T* src = x.data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy(src + (o * len + start) * inner, src + (o * len + start + length) * inner,
              out.data() + o * length * inner);
  }
  BackwardFn<T> bw = [outer, inner, len, start, length](std::span<const T> g, std::span<const ImplPtr<T>> in) {
    if (!in[0]->tracks_grad()) return;
    auto gx = in[0]->grad_buffer();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < length * inner; ++i) gx[(o * len + start) * inner + i] += g[o * length * inner + i];
    }
  };
  return make_result(Shape(dims), std::move(out), {x.impl()}, "slice", std::move(bw));
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  double acc = 0.0;
  for (T v : x.data()) acc += v;
  BackwardFn<T> bw = [](std::span<const T> g, std::span<const ImplPtr<T>> in) {
    if (!in[0]->tracks_grad()) return;
    auto gx = in[0]->grad_buffer();
    for (auto& v : gx) v += g[0];
  };
  return make_result(Shape{1}, std::vector<T>{static_cast<T>(acc)}, {x.impl()}, "sum", std::move(bw));
}

#define TRIPSE_INSTANTIATE_OPS(T)                                                                              \
  template BasicTensor<T> permute(const BasicTensor<T>&, std::span<const std::size_t>);                       \
  template BasicTensor<T> reshape(const BasicTensor<T>&, const Shape&);                                       \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const ConvParams<T>&);                                \
  template BasicTensor<T> batchnorm2d(const BasicTensor<T>&, BatchNormState<T>&, bool);                       \
  template BasicTensor<T> reduce_over_axis(const BasicTensor<T>&, std::size_t, ReduceMode, bool);             \
  template BasicTensor<T> global_avg_pool(const BasicTensor<T>&);                                             \
  template BasicTensor<T> linear(const BasicTensor<T>&, const LinearParams<T>&);                              \
  template BasicTensor<T> activation(const BasicTensor<T>&, Activation);                                      \
  template BasicTensor<T> ew(const BasicTensor<T>&, const BasicTensor<T>&, Binary);                           \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                                    \
  template BasicTensor<T> average(std::span<const BasicTensor<T>>);                                           \
  template BasicTensor<T> concat(std::span<const BasicTensor<T>>, std::size_t);                               \
  template BasicTensor<T> slice(const BasicTensor<T>&, std::size_t, std::size_t, std::size_t);                \
  template BasicTensor<T> sum(const BasicTensor<T>&);

TRIPSE_INSTANTIATE_OPS(float)
TRIPSE_INSTANTIATE_OPS(double)

#undef TRIPSE_INSTANTIATE_OPS

}  // namespace tripse
