#pragma once

// Shift-invariance-oriented pooling.
//
// A max-pooling layer of size k and stride s is decomposed into a densely
// evaluated (unit-stride) max and a subsampling step. The subsampler is one of
//   - naive: keep the grid anchored at (0,0);
//   - low-pass: blur with a non-negative unit-sum kernel, then subsample
//     (fused into one strided depthwise convolution);
//   - adaptive polyphase sampling (APS): keep the polyphase component with the
//     largest l_p norm, optionally after a stride-1 low-pass blur.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "aapool/errors.hpp"
#include "aapool/ops.hpp"
#include "aapool/tensor.hpp"

namespace aapool::pooling {

// ---------------------------------------------------------------------------
// Filter kernels

enum class KernelKind { Binomial, Trainable };

template <typename T = float>
struct BasicFilterKernel {
  std::size_t rows = 0;
  std::size_t cols = 0;
  KernelKind kind = KernelKind::Binomial;
  BasicTensor<T> weights;                    // [m,n] shared, or [C,m,n] one kernel per channel
  std::optional<BasicTensor<T>> raw_params;  // pre-softmax logits, same shape as weights
};

using FilterKernel = BasicFilterKernel<float>;

// [1,1] convolved with itself `order` times, normalized to unit sum.
inline std::vector<double> binomial1d(int order) {
  if (order < 0) throw ArgumentError("binomial1d: order must be >= 0, got " + std::to_string(order));
  std::vector<double> taps{1.0, 1.0};
  for (int i = 0; i < order; ++i) {
    std::vector<double> next(taps.size() + 1, 0.0);
    for (std::size_t j = 0; j < taps.size(); ++j) {
      next[j] += taps[j];
      next[j + 1] += taps[j];
    }
    taps = std::move(next);
  }
  const double total = std::ldexp(1.0, order + 1);
  for (double& t : taps) t /= total;
  return taps;
}

// Unnormalized taps (the integer mask) for a given order.
inline std::vector<double> binomial1d_mask(int order) {
  auto taps = binomial1d(order);
  const double total = std::ldexp(1.0, order + 1);
  for (double& t : taps) t *= total;
  return taps;
}

// Outer product of binomial1d(size-2) with itself.
inline FilterKernel binomial2d(std::size_t size) {
  if (size < 2) throw ArgumentError("binomial2d: size must be >= 2, got " + std::to_string(size));
  const auto taps = binomial1d(static_cast<int>(size) - 2);
  std::vector<float> w(size * size);
  for (std::size_t r = 0; r < size; ++r) {
    for (std::size_t c = 0; c < size; ++c) w[r * size + c] = static_cast<float>(taps[r] * taps[c]);
  }
  return {size, size, KernelKind::Binomial, Tensor({size, size}, std::move(w)), std::nullopt};
}

// Softmax over every m*n block of logits. Accepts [m,n] or [C,m,n].
template <typename T>
BasicFilterKernel<T> tlpf_materialize(const BasicTensor<T>& raw_params) {
  if (raw_params.rank() != 2 && raw_params.rank() != 3) {
    throw DimensionError("tlpf_materialize: logits must be [m,n] or [C,m,n], got " +
                         shape_str(raw_params.shape()));
  }
  const std::size_t m = raw_params.dim(raw_params.rank() - 2);
  const std::size_t n = raw_params.dim(raw_params.rank() - 1);
  if (m < 1 || n < 1) throw DimensionError("tlpf_materialize: empty kernel");
  return {m, n, KernelKind::Trainable, softmax_groups(raw_params, m * n), raw_params};
}

// ---------------------------------------------------------------------------
// Subsampling primitives

struct PolyphaseIndex {
  std::size_t i = 0;
  std::size_t j = 0;
  friend auto operator<=>(const PolyphaseIndex&, const PolyphaseIndex&) = default;
};

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

inline void check_stride(Stride2 s, const char* op) {
  if (s.h < 1 || s.w < 1) throw ArgumentError(std::string(op) + ": stride must be >= 1");
}

// Sliding k x k maximum, unit stride, output geometry equal to the input.
template <typename T>
BasicTensor<T> dense_maxpool(const BasicTensor<T>& x, std::size_t k) {
  if (k < 1) throw ArgumentError("dense_maxpool: k must be >= 1");
  if (k == 1) return x;
  return max_pool2d(x, k, {1, 1}, PaddingMode::Same);
}

// Keeps bins (r*s_h, q*s_w): output [N,C,ceil(H/s_h),ceil(W/s_w)].
template <typename T>
BasicTensor<T> naive_subsample(const BasicTensor<T>& x, Stride2 s) {
  check_stride(s, "naive_subsample");
  if (s.h == 1 && s.w == 1) return x;
  return gather_grid(x, s, std::vector<std::pair<std::size_t, std::size_t>>(x.dim(0), {0, 0}),
                     ceil_div(x.dim(2), s.h), ceil_div(x.dim(3), s.w));
}

// Blur with `kernel` and subsample with stride s in one depthwise pass. Borders
// replicate the edge bins, so any unit-sum kernel maps constants to constants.
template <typename T>
BasicTensor<T> lpf_subsample(const BasicTensor<T>& x, const BasicTensor<T>& kernel, Stride2 s) {
  check_stride(s, "lpf_subsample");
  return depthwise_conv2d(x, kernel, s, PaddingMode::Replicate);
}

template <typename T>
BasicTensor<T> lpf_subsample(const BasicTensor<T>& x, const BasicFilterKernel<T>& kernel, Stride2 s) {
  return lpf_subsample(x, kernel.weights, s);
}

// Component (i,j) is x[..., i::s_h, j::s_w]; tails are ragged when H or W is not
// a multiple of the stride.
template <typename T>
std::map<PolyphaseIndex, BasicTensor<T>> polyphase_components(const BasicTensor<T>& x, Stride2 s) {
  check_stride(s, "polyphase_components");
  if (x.rank() != 4) throw DimensionError("polyphase_components: expected NCHW input");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::map<PolyphaseIndex, BasicTensor<T>> out;
  for (std::size_t i = 0; i < s.h; ++i) {
    for (std::size_t j = 0; j < s.w; ++j) {
      const std::size_t rh = i < h ? ceil_div(h - i, s.h) : 0;
      const std::size_t rw = j < w ? ceil_div(w - j, s.w) : 0;
      std::vector<T> data(n * c * rh * rw);
      for (std::size_t p = 0; p < n * c; ++p) {
        for (std::size_t r = 0; r < rh; ++r) {
          for (std::size_t q = 0; q < rw; ++q) {
            data[(p * rh + r) * rw + q] = x[(p * h + i + r * s.h) * w + j + q * s.w];
          }
        }
      }
      out.emplace(PolyphaseIndex{i, j}, BasicTensor<T>({n, c, rh, rw}, std::move(data)));
    }
  }
  return out;
}

template <typename T = float>
struct ApsResult {
  BasicTensor<T> output;                        // [N,C,ceil(H/s_h),ceil(W/s_w)]
  std::vector<PolyphaseIndex> selected;  // one per batch element
};

// l_p norm (p = 1 or 2) of one polyphase component of batch element b, jointly
// over all channels. Grids are extended circularly to ceil(H/s_h) x ceil(W/s_w).
template <typename T>
double component_norm(const BasicTensor<T>& x, std::size_t b, PolyphaseIndex idx, Stride2 s,
                             int p) {
  const std::size_t c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = ceil_div(h, s.h), ow = ceil_div(w, s.w);
  double acc = 0.0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* plane = &x[(b * c + ch) * h * w];
    for (std::size_t r = 0; r < oh; ++r) {
      const std::size_t y = (idx.i + r * s.h) % h;
      for (std::size_t q = 0; q < ow; ++q) {
        const double v = plane[y * w + (idx.j + q * s.w) % w];
        acc += p == 1 ? std::abs(v) : v * v;
      }
    }
  }
  return p == 1 ? acc : std::sqrt(acc);
}

// Selects, per batch element, the polyphase component with the largest l_p norm.
// Ties go to the smallest (i,j) in row-major order. The selection is treated as
// a constant for differentiation: gradients reach only the selected bins.
template <typename T>
ApsResult<T> aps_subsample(const BasicTensor<T>& x, Stride2 s, int p) {
  check_stride(s, "aps_subsample");
  if (p != 1 && p != 2) throw ArgumentError("aps_subsample: p must be 1 or 2");
  if (x.rank() != 4) throw DimensionError("aps_subsample: expected NCHW input");
  const std::size_t n = x.dim(0);
  ApsResult<T> res;
  std::vector<std::pair<std::size_t, std::size_t>> offsets(n);
  for (std::size_t b = 0; b < n; ++b) {
    PolyphaseIndex best{0, 0};
    double best_norm = -1.0;
    for (std::size_t i = 0; i < s.h; ++i) {
      for (std::size_t j = 0; j < s.w; ++j) {
        const double norm = component_norm(x, b, {i, j}, s, p);
        if (norm > best_norm) {
          best_norm = norm;
          best = {i, j};
        }
      }
    }
    res.selected.push_back(best);
    offsets[b] = {best.i, best.j};
  }
  res.output = gather_grid(x, s, offsets, ceil_div(x.dim(2), s.h), ceil_div(x.dim(3), s.w));
  return res;
}

// ---------------------------------------------------------------------------
// Pooling layer description

enum class SubsamplerKind { Naive, Lpf, Aps };

struct LpfSpec {
  std::size_t rows = 3;
  std::size_t cols = 3;
  bool trainable = false;
  bool shared_across_channels = false;  // false: one kernel per channel (same shape)
};

struct PoolingSpec {
  std::size_t dense_k = 2;
  SubsamplerKind kind = SubsamplerKind::Naive;
  std::optional<LpfSpec> lpf;  // required for Lpf; optional blur before Aps
  int aps_p = 1;
  Stride2 stride{2, 2};

  static PoolingSpec naive(std::size_t k = 2, Stride2 s = {2, 2}) {
    return {k, SubsamplerKind::Naive, std::nullopt, 1, s};
  }
  static PoolingSpec blurpool(std::size_t size, std::size_t k = 2, Stride2 s = {2, 2}) {
    return {k, SubsamplerKind::Lpf, LpfSpec{size, size, false, true}, 1, s};
  }
  static PoolingSpec tlpf(std::size_t rows, std::size_t cols, std::size_t k = 2,
                          Stride2 s = {2, 2}) {
    return {k, SubsamplerKind::Lpf, LpfSpec{rows, cols, true, false}, 1, s};
  }
  static PoolingSpec aps(int p, std::size_t k = 2, Stride2 s = {2, 2}) {
    return {k, SubsamplerKind::Aps, std::nullopt, p, s};
  }
  static PoolingSpec tlpf_aps(std::size_t rows, std::size_t cols, int p, std::size_t k = 2,
                              Stride2 s = {2, 2}) {
    return {k, SubsamplerKind::Aps, LpfSpec{rows, cols, true, false}, p, s};
  }

  bool has_filter() const { return lpf.has_value(); }
};

// Empty when valid; otherwise one message per violated constraint.
inline std::vector<std::string> validate(const PoolingSpec& spec) {
  std::vector<std::string> errs;
  if (spec.dense_k < 1) errs.emplace_back("dense_k must be >= 1");
  if (spec.stride.h < 1 || spec.stride.w < 1) errs.emplace_back("stride must be >= 1");
  if (spec.kind != SubsamplerKind::Naive && (spec.stride.h < 2 || spec.stride.w < 2)) {
    errs.emplace_back("LPF/APS subsamplers need stride >= (2,2)");
  }
  if (spec.kind == SubsamplerKind::Lpf && !spec.lpf) errs.emplace_back("LPF subsampler needs a kernel");
  if (spec.kind == SubsamplerKind::Naive && spec.lpf) {
    errs.emplace_back("naive subsampler takes no kernel");
  }
  if (spec.lpf && (spec.lpf->rows < 1 || spec.lpf->cols < 1)) errs.emplace_back("kernel must be at least 1x1");
  if (spec.lpf && !spec.lpf->trainable && spec.lpf->rows != spec.lpf->cols) {
    errs.emplace_back("binomial kernels are square");
  }
  if (spec.lpf && !spec.lpf->trainable && spec.lpf->rows < 2) {
    errs.emplace_back("binomial kernel size must be >= 2");
  }
  if (spec.kind == SubsamplerKind::Aps && spec.aps_p != 1 && spec.aps_p != 2) {
    errs.emplace_back("APS norm must be l1 or l2");
  }
  return errs;
}

// dense max (k) then the configured subsampler. `kernel` holds the materialized
// low-pass weights whenever spec.lpf is set.
template <typename T>
BasicTensor<T> pooling_layer(const BasicTensor<T>& x, const PoolingSpec& spec,
                              const std::optional<BasicTensor<T>>& kernel = std::nullopt) {
  if (auto errs = validate(spec); !errs.empty()) throw ConfigError("pooling spec: " + errs.front());
  if (spec.lpf && !kernel) throw ArgumentError("pooling_layer: spec needs a low-pass kernel");
  BasicTensor<T> y = dense_maxpool(x, spec.dense_k);
  switch (spec.kind) {
    case SubsamplerKind::Naive:
      return naive_subsample(y, spec.stride);
    case SubsamplerKind::Lpf:
      return lpf_subsample(y, *kernel, spec.stride);
    case SubsamplerKind::Aps:
      if (kernel) y = lpf_subsample(y, *kernel, {1, 1});
      return aps_subsample(y, spec.stride, spec.aps_p).output;
  }
  throw ConfigError("pooling spec: unknown subsampler");
}

}  // namespace aapool::pooling
