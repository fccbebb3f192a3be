#pragma once

// Differentiable tensor operations: elementwise arithmetic, reductions,
// activations, dense layers, 2D (depthwise) convolution, batch norm and
// max pooling. Spatial tensors are NCHW.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <cstddef>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "aapool/errors.hpp"
#include "aapool/tensor.hpp"

namespace aapool {

// Same: output covers every input position (pad k-1, split floor/ceil around it)
// with zeros. Replicate: same geometry, padded bins copy the nearest edge bin.
enum class PaddingMode { Valid, Same, Replicate };

enum class Mode { Train, Eval };

struct Stride2 {
  std::size_t h = 1;
  std::size_t w = 1;
  friend bool operator==(const Stride2&, const Stride2&) = default;
};

namespace detail {

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
}

template <typename T>
void require_rank(const BasicTensor<T>& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + what + " must have rank " +
                         std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

// Padding before the first element along one axis; the remainder goes after.
struct AxisGeometry {
  std::size_t pad_before = 0;
  std::size_t out = 0;
};

inline AxisGeometry axis_geometry(std::size_t in, std::size_t k, std::size_t stride,
                                  PaddingMode padding, const char* op, const char* axis) {
  if (stride < 1) throw ArgumentError(std::string(op) + ": stride must be >= 1");
  if (k < 1) throw ArgumentError(std::string(op) + ": kernel size must be >= 1");
  const std::size_t pad_total = padding == PaddingMode::Valid ? 0 : k - 1;
  if (in + pad_total < k) {
    throw DimensionError(std::string(op) + ": kernel " + std::to_string(k) +
                         " does not fit padded input " + std::to_string(in + pad_total) +
                         " along " + axis);
  }
  return {pad_total / 2, (in + pad_total - k) / stride + 1};
}

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
  }
  T tail = 0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) +
         tail;
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// 512-bit GCC vector of T; loads and stores go through memcpy (unaligned).
template <typename T>
struct Vec {
  typedef T type __attribute__((vector_size(64)));
  static constexpr std::size_t width = 64 / sizeof(T);
  static type load(const T* p) {
    type v;
    std::memcpy(&v, p, sizeof v);
    return v;
  }
  static void store(T* p, type v) { std::memcpy(p, &v, sizeof v); }
};

template <std::size_t MR, typename T>
void gemm_nn_rows(std::size_t i, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
                  std::size_t ldb, T* c, std::size_t ldc) {
  using V = Vec<T>;
  constexpr std::size_t W = V::width, NV = 2;
  std::size_t j = 0;
  for (; j + NV * W <= n; j += NV * W) {
    typename V::type acc[MR][NV] = {};
    for (std::size_t kk = 0; kk < k; ++kk) {
      typename V::type bv[NV];
      for (std::size_t v = 0; v < NV; ++v) bv[v] = V::load(b + kk * ldb + j + v * W);
      for (std::size_t r = 0; r < MR; ++r) {
        const T av = a[(i + r) * lda + kk];
        for (std::size_t v = 0; v < NV; ++v) acc[r][v] += av * bv[v];
      }
    }
    for (std::size_t r = 0; r < MR; ++r) {
      for (std::size_t v = 0; v < NV; ++v) {
        T* cp = c + (i + r) * ldc + j + v * W;
        V::store(cp, V::load(cp) + acc[r][v]);
      }
    }
  }
  if (j < n) {
    for (std::size_t r = 0; r < MR; ++r) {
      T* crow = c + (i + r) * ldc;
      for (std::size_t kk = 0; kk < k; ++kk) {
        const T av = a[(i + r) * lda + kk];
        const T* brow = b + kk * ldb;
        for (std::size_t jj = j; jj < n; ++jj) crow[jj] += av * brow[jj];
      }
    }
  }
}

// C[M,N] += A[M,K] * B[K,N] (row-major, leading dimensions lda/ldb/ldc).
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b, std::size_t ldb,
             T* c, std::size_t ldc) {
  std::size_t i = 0;
  for (; i + 8 <= m; i += 8) gemm_nn_rows<8>(i, n, k, a, lda, b, ldb, c, ldc);
  for (; i + 4 <= m; i += 4) gemm_nn_rows<4>(i, n, k, a, lda, b, ldb, c, ldc);
  for (; i < m; ++i) gemm_nn_rows<1>(i, n, k, a, lda, b, ldb, c, ldc);
}

// C[M,N] += A[M,P] * B[N,P]^T, i.e. C[i][j] += dot(A row i, B row j).
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t p, const T* a, std::size_t lda, const T* b, std::size_t ldb,
             T* c, std::size_t ldc) {
  using V = Vec<T>;
  constexpr std::size_t R = 4, W = V::width;
  std::size_t i = 0;
  for (; i + R <= m; i += R) {
    std::size_t j = 0;
    for (; j + R <= n; j += R) {
      typename V::type acc[R][R] = {};
      std::size_t q = 0;
      for (; q + W <= p; q += W) {
        typename V::type av[R], bv[R];
        for (std::size_t r = 0; r < R; ++r) av[r] = V::load(a + (i + r) * lda + q);
        for (std::size_t r = 0; r < R; ++r) bv[r] = V::load(b + (j + r) * ldb + q);
        for (std::size_t r = 0; r < R; ++r)
          for (std::size_t s = 0; s < R; ++s) acc[r][s] += av[r] * bv[s];
      }
      for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t s = 0; s < R; ++s) {
          T sum = 0;
          for (std::size_t l = 0; l < W; ++l) sum += acc[r][s][l];
          for (std::size_t qq = q; qq < p; ++qq) sum += a[(i + r) * lda + qq] * b[(j + s) * ldb + qq];
          c[(i + r) * ldc + j + s] += sum;
        }
      }
    }
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t jj = j; jj < n; ++jj) c[(i + r) * ldc + jj] += dot(a + (i + r) * lda, b + jj * ldb, p);
  }
  for (; i < m; ++i)
    for (std::size_t jj = 0; jj < n; ++jj) c[i * ldc + jj] += dot(a + i * lda, b + jj * ldb, p);
}

struct ConvGeometry {
  std::size_t channels, height, width, kh, kw;
  Stride2 stride;
  AxisGeometry gh, gw;
  std::size_t patch() const { return channels * kh * kw; }
  std::size_t out_pixels() const { return gh.out * gw.out; }
};

// cols[(c*kh + u)*kw + v][oy*ow + ox] = x[c][oy*sh + u - pad_h][ox*sw + v - pad_w] (0 outside).
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const std::size_t op = g.out_pixels();
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* xc = x + c * g.height * g.width;
    for (std::size_t u = 0; u < g.kh; ++u) {
      for (std::size_t v = 0; v < g.kw; ++v) {
        T* row = cols + ((c * g.kh + u) * g.kw + v) * op;
        for (std::size_t oy = 0; oy < g.gh.out; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride.h + u) -
                                    static_cast<std::ptrdiff_t>(g.gh.pad_before);
          T* dst = row + oy * g.gw.out;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(dst, dst + g.gw.out, T{0});
            continue;
          }
          const T* src = xc + static_cast<std::size_t>(iy) * g.width;
          // ox in [lo, hi) reads inside the row; the rest is padding.
          const std::size_t off = g.gw.pad_before;
          const std::size_t lo = v >= off ? 0 : (off - v + g.stride.w - 1) / g.stride.w;
          std::size_t hi = g.width + off > v ? (g.width + off - v + g.stride.w - 1) / g.stride.w : 0;
          hi = std::min(std::max(hi, lo), g.gw.out);
          std::fill(dst, dst + std::min(lo, g.gw.out), T{0});
          if (g.stride.w == 1) {
            if (hi > lo) std::memcpy(dst + lo, src + (lo + v - off), (hi - lo) * sizeof(T));
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = src[ox * g.stride.w + v - off];
          }
          std::fill(dst + hi, dst + g.gw.out, T{0});
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* dx) {
  const std::size_t op = g.out_pixels();
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* dxc = dx + c * g.height * g.width;
    for (std::size_t u = 0; u < g.kh; ++u) {
      for (std::size_t v = 0; v < g.kw; ++v) {
        const T* row = cols + ((c * g.kh + u) * g.kw + v) * op;
        for (std::size_t oy = 0; oy < g.gh.out; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride.h + u) -
                                    static_cast<std::ptrdiff_t>(g.gh.pad_before);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          T* dst = dxc + static_cast<std::size_t>(iy) * g.width;
          const T* src = row + oy * g.gw.out;
          for (std::size_t ox = 0; ox < g.gw.out; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride.w + v) -
                                      static_cast<std::ptrdiff_t>(g.gw.pad_before);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width)) {
              dst[static_cast<std::size_t>(ix)] += src[ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  auto na = a.node_ptr(), nb = b.node_ptr();
  return make_result<T>(a.shape(), std::move(out), {a, b}, [na, nb](detail::Node<T>& o) {
    for (auto* n : {na.get(), nb.get()}) {
      if (!n->requires_grad) continue;
      n->ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) n->grad[i] += o.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  auto na = a.node_ptr(), nb = b.node_ptr();
  return make_result<T>(a.shape(), std::move(out), {a, b}, [na, nb](detail::Node<T>& o) {
    if (na->requires_grad) {
      na->ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) na->grad[i] += o.grad[i];
    }
    if (nb->requires_grad) {
      nb->ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) nb->grad[i] -= o.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  auto na = a.node_ptr(), nb = b.node_ptr();
  return make_result<T>(a.shape(), std::move(out), {a, b}, [na, nb](detail::Node<T>& o) {
    if (na->requires_grad) {
      na->ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) na->grad[i] += o.grad[i] * nb->data[i];
    }
    if (nb->requires_grad) {
      nb->ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) nb->grad[i] += o.grad[i] * na->data[i];
    }
  });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T s) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
  auto na = a.node_ptr();
  return make_result<T>(a.shape(), std::move(out), {a}, [na, s](detail::Node<T>& o) {
    na->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) na->grad[i] += o.grad[i] * s;
  });
}

// ---------------------------------------------------------------------------
// Reductions (64-bit accumulation)

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  double acc = 0.0;
  for (T v : a.data()) acc += v;
  auto na = a.node_ptr();
  return make_result<T>(Shape{1}, {static_cast<T>(acc)}, {a}, [na](detail::Node<T>& o) {
    na->ensure_grad();
    for (T& g : na->grad) g += o.grad[0];
  });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
  if (a.numel() == 0) throw ArgumentError("mean of empty tensor");
  return scale(sum(a), T{1} / static_cast<T>(a.numel()));
}

// ---------------------------------------------------------------------------
// Activations

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& a) {
  std::vector<T> out(a.numel());
  const T* x = a.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T{0} ? x[i] : T{0};
  auto na = a.node_ptr();
  return make_result<T>(a.shape(), std::move(out), {a}, [na](detail::Node<T>& o) {
    na->ensure_grad();
    const T* xd = na->data.data();
    const T* g = o.grad.data();
    T* dx = na->grad.data();
    for (std::size_t i = 0; i < o.grad.size(); ++i) dx[i] += xd[i] > T{0} ? g[i] : T{0};
  });
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a[i];
    out[i] = static_cast<T>(x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                                       : std::exp(x) / (1.0 + std::exp(x)));
  }
  auto na = a.node_ptr();
  return make_result<T>(a.shape(), std::move(out), {a}, [na](detail::Node<T>& o) {
    na->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      const T y = o.data[i];
      na->grad[i] += o.grad[i] * y * (T{1} - y);
    }
  });
}

// Softmax over consecutive groups of `group` elements (the last axes flattened).
template <typename T>
BasicTensor<T> softmax_groups(const BasicTensor<T>& a, std::size_t group) {
  if (group == 0 || a.numel() % group != 0) {
    throw DimensionError("softmax_groups: group " + std::to_string(group) +
                         " does not divide " + std::to_string(a.numel()));
  }
  std::vector<T> out(a.numel());
  for (std::size_t g0 = 0; g0 < a.numel(); g0 += group) {
    T mx = a[g0];
    for (std::size_t i = 1; i < group; ++i) mx = std::max(mx, a[g0 + i]);
    double z = 0.0;
    std::vector<double> e(group);
    for (std::size_t i = 0; i < group; ++i) {
      e[i] = std::exp(static_cast<double>(a[g0 + i]) - mx);
      z += e[i];
    }
    for (std::size_t i = 0; i < group; ++i) out[g0 + i] = static_cast<T>(e[i] / z);
  }
  auto na = a.node_ptr();
  return make_result<T>(a.shape(), std::move(out), {a}, [na, group](detail::Node<T>& o) {
    na->ensure_grad();
    for (std::size_t g0 = 0; g0 < o.data.size(); g0 += group) {
      double inner = 0.0;
      for (std::size_t i = 0; i < group; ++i) {
        inner += static_cast<double>(o.grad[g0 + i]) * o.data[g0 + i];
      }
      for (std::size_t i = 0; i < group; ++i) {
        na->grad[g0 + i] += static_cast<T>(o.data[g0 + i] * (o.grad[g0 + i] - inner));
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Dense layer: x[N,D] * w[O,D]^T + b[O]

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b) {
  detail::require_rank(x, 2, "linear", "input");
  detail::require_rank(w, 2, "linear", "weight");
  detail::require_rank(b, 1, "linear", "bias");
  const std::size_t n = x.dim(0), d = x.dim(1), o = w.dim(0);
  if (w.dim(1) != d || b.dim(0) != o) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + ", weight " +
                         shape_str(w.shape()) + ", bias " + shape_str(b.shape()));
  }
  std::vector<T> out(n * o);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < o; ++j) {
      out[i * o + j] = detail::dot(&x[i * d], &w[j * d], d) + b[j];
    }
  }
  auto nx = x.node_ptr(), nw = w.node_ptr(), nb = b.node_ptr();
  return make_result<T>({n, o}, std::move(out), {x, w, b}, [nx, nw, nb, n, d, o](detail::Node<T>& g) {
    if (nx->requires_grad) {
      nx->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < o; ++j) {
          detail::axpy(g.grad[i * o + j], &nw->data[j * d], &nx->grad[i * d], d);
        }
      }
    }
    if (nw->requires_grad) {
      nw->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < o; ++j) {
          detail::axpy(g.grad[i * o + j], &nx->data[i * d], &nw->grad[j * d], d);
        }
      }
    }
    if (nb->requires_grad) {
      nb->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < o; ++j) nb->grad[j] += g.grad[i * o + j];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution

// input [N,C,H,W], weight [F,C,kh,kw] -> [N,F,H',W'] (cross-correlation, no bias).
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, Stride2 stride = {1, 1},
                     PaddingMode padding = PaddingMode::Same) {
  detail::require_rank(input, 4, "conv2d", "input");
  detail::require_rank(weight, 4, "conv2d", "weight");
  if (weight.dim(1) != input.dim(1)) {
    throw DimensionError("conv2d: input channels (axis 1 of " + shape_str(input.shape()) +
                         ") != weight channels (axis 1 of " + shape_str(weight.shape()) + ")");
  }
  const std::size_t n = input.dim(0), f = weight.dim(0);
  detail::ConvGeometry g{input.dim(1), input.dim(2), input.dim(3), weight.dim(2), weight.dim(3),
                         stride, {}, {}};
  g.gh = detail::axis_geometry(g.height, g.kh, stride.h, padding, "conv2d", "H");
  g.gw = detail::axis_geometry(g.width, g.kw, stride.w, padding, "conv2d", "W");
  const std::size_t k = g.patch(), p = g.out_pixels(), in_size = g.channels * g.height * g.width;

  std::vector<T> out(n * f * p, T{0});
  std::vector<T> cols(k * p);
  for (std::size_t b = 0; b < n; ++b) {
    detail::im2col(&input[b * in_size], g, cols.data());
    detail::gemm_nn(f, p, k, &weight[0], k, cols.data(), p, &out[b * f * p], p);
  }
  auto nx = input.node_ptr(), nw = weight.node_ptr();
  return make_result<T>(
      {n, f, g.gh.out, g.gw.out}, std::move(out), {input, weight},
      [nx, nw, g, n, f, k, p, in_size](detail::Node<T>& o) {
        const bool flip_path = g.stride.h == 1 && g.stride.w == 1 && g.kh % 2 == 1 && g.kw % 2 == 1 &&
                               g.gh.out == g.height && g.gw.out == g.width;
        std::vector<T> cols(std::max(k, f * g.kh * g.kw) * p);
        std::vector<T> dcols, wt, wflip;
        detail::ConvGeometry gt{f, g.height, g.width, g.kh, g.kw, {1, 1}, g.gh, g.gw};
        if (nx->requires_grad) {
          nx->ensure_grad();
          if (flip_path) {
            wflip.resize(g.channels * f * g.kh * g.kw);
            for (std::size_t fi = 0; fi < f; ++fi)
              for (std::size_t ci = 0; ci < g.channels; ++ci)
                for (std::size_t u = 0; u < g.kh; ++u)
                  for (std::size_t v = 0; v < g.kw; ++v)
                    wflip[((ci * f + fi) * g.kh + (g.kh - 1 - u)) * g.kw + (g.kw - 1 - v)] =
                        nw->data[((fi * g.channels + ci) * g.kh + u) * g.kw + v];
          } else {
            dcols.resize(k * p);
            wt.resize(k * f);
            for (std::size_t fi = 0; fi < f; ++fi)
              for (std::size_t ki = 0; ki < k; ++ki) wt[ki * f + fi] = nw->data[fi * k + ki];
          }
        }
        if (nw->requires_grad) nw->ensure_grad();
        for (std::size_t b = 0; b < n; ++b) {
          const T* gout = &o.grad[b * f * p];
          if (nw->requires_grad) {
            detail::im2col(&nx->data[b * in_size], g, cols.data());
            detail::gemm_nt(f, k, p, gout, p, cols.data(), p, nw->grad.data(), k);
          }
          if (nx->requires_grad && flip_path) {
            // Stride 1 with symmetric padding: dx is a "same" convolution of the
            // output gradient with the spatially flipped, transposed kernel.
            detail::im2col(gout, gt, cols.data());
            detail::gemm_nn(g.channels, p, f * g.kh * g.kw, wflip.data(), f * g.kh * g.kw, cols.data(), p,
                            &nx->grad[b * in_size], p);
          } else if (nx->requires_grad) {
            std::fill(dcols.begin(), dcols.end(), T{0});
            detail::gemm_nn(k, p, f, wt.data(), f, gout, p, dcols.data(), p);
            detail::col2im_add(dcols.data(), g, &nx->grad[b * in_size]);
          }
        }
      });
}

// Each channel convolved with its own kernel ([C,kh,kw]) or one shared kernel ([kh,kw]).
template <typename T>
BasicTensor<T> depthwise_conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel, Stride2 stride = {1, 1},
                               PaddingMode padding = PaddingMode::Same) {
  detail::require_rank(input, 4, "depthwise_conv2d", "input");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  bool shared = false;
  std::size_t kh = 0, kw = 0;
  if (kernel.rank() == 2) {
    shared = true;
    kh = kernel.dim(0);
    kw = kernel.dim(1);
  } else if (kernel.rank() == 3) {
    if (kernel.dim(0) != c) {
      throw DimensionError("depthwise_conv2d: kernel axis 0 (" + std::to_string(kernel.dim(0)) +
                           ") != input channels (axis 1, " + std::to_string(c) + ")");
    }
    kh = kernel.dim(1);
    kw = kernel.dim(2);
  } else {
    throw DimensionError("depthwise_conv2d: kernel must be [C,kh,kw] or [kh,kw], got " +
                         shape_str(kernel.shape()));
  }
  const auto gh = detail::axis_geometry(h, kh, stride.h, padding, "depthwise_conv2d", "H");
  const auto gw = detail::axis_geometry(w, kw, stride.w, padding, "depthwise_conv2d", "W");
  const std::size_t oh = gh.out, ow = gw.out;
  const bool replicate = padding == PaddingMode::Replicate;
  // The padded plane covers exactly the rows/cols the output windows touch;
  // src maps each padded coordinate to its input coordinate (-1 for zeros).
  const std::size_t ph = (oh - 1) * stride.h + kh, pw = (ow - 1) * stride.w + kw;
  auto source = [replicate](std::size_t len, std::size_t in, std::size_t pad) {
    std::vector<std::ptrdiff_t> src(len);
    for (std::size_t y = 0; y < len; ++y) {
      std::ptrdiff_t i = static_cast<std::ptrdiff_t>(y) - static_cast<std::ptrdiff_t>(pad);
      if (replicate) i = std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(in) - 1);
      src[y] = (i < 0 || i >= static_cast<std::ptrdiff_t>(in)) ? -1 : i;
    }
    return src;
  };
  const auto src_r = source(ph, h, gh.pad_before), src_c = source(pw, w, gw.pad_before);
  auto fill_plane = [=](const T* x, T* plane) {
    for (std::size_t y = 0; y < ph; ++y) {
      T* row = plane + y * pw;
      if (src_r[y] < 0) {
        std::fill(row, row + pw, T{0});
        continue;
      }
      const T* xr = x + static_cast<std::size_t>(src_r[y]) * w;
      for (std::size_t xx = 0; xx < pw; ++xx) row[xx] = src_c[xx] < 0 ? T{0} : xr[src_c[xx]];
    }
  };

  std::vector<T> out(n * c * oh * ow, T{0});
  {
    std::vector<T> plane(ph * pw);
    for (std::size_t pl = 0; pl < n * c; ++pl) {
      fill_plane(&input[pl * h * w], plane.data());
      const T* k = &kernel[shared ? 0 : (pl % c) * kh * kw];
      for (std::size_t oy = 0; oy < oh; ++oy) {
        T* orow = &out[(pl * oh + oy) * ow];
        for (std::size_t u = 0; u < kh; ++u) {
          const T* prow = &plane[(oy * stride.h + u) * pw];
          for (std::size_t v = 0; v < kw; ++v) {
            const T kv = k[u * kw + v];
            if (stride.w == 1) {
              detail::axpy(kv, prow + v, orow, ow);
            } else {
              for (std::size_t ox = 0; ox < ow; ++ox) orow[ox] += kv * prow[ox * stride.w + v];
            }
          }
        }
      }
    }
  }

  auto nx = input.node_ptr(), nk = kernel.node_ptr();
  return make_result<T>(
      {n, c, oh, ow}, std::move(out), {input, kernel},
      [nx, nk, n, c, h, w, oh, ow, kh, kw, ph, pw, shared, stride, src_r, src_c, fill_plane](detail::Node<T>& o) {
        if (nx->requires_grad) nx->ensure_grad();
        if (nk->requires_grad) nk->ensure_grad();
        std::vector<T> plane(ph * pw), dplane(ph * pw);
        for (std::size_t pl = 0; pl < n * c; ++pl) {
          const std::size_t koff = shared ? 0 : (pl % c) * kh * kw;
          const T* g = &o.grad[pl * oh * ow];
          if (nk->requires_grad) {
            fill_plane(&nx->data[pl * h * w], plane.data());
            T* dk = &nk->grad[koff];
            for (std::size_t oy = 0; oy < oh; ++oy) {
              const T* grow = g + oy * ow;
              for (std::size_t u = 0; u < kh; ++u) {
                const T* prow = &plane[(oy * stride.h + u) * pw];
                for (std::size_t v = 0; v < kw; ++v) {
                  if (stride.w == 1) {
                    dk[u * kw + v] += detail::dot(grow, prow + v, ow);
                  } else {
                    T acc = 0;
                    for (std::size_t ox = 0; ox < ow; ++ox) acc += grow[ox] * prow[ox * stride.w + v];
                    dk[u * kw + v] += acc;
                  }
                }
              }
            }
          }
          if (nx->requires_grad) {
            std::fill(dplane.begin(), dplane.end(), T{0});
            const T* k = &nk->data[koff];
            for (std::size_t oy = 0; oy < oh; ++oy) {
              const T* grow = g + oy * ow;
              for (std::size_t u = 0; u < kh; ++u) {
                T* drow = &dplane[(oy * stride.h + u) * pw];
                for (std::size_t v = 0; v < kw; ++v) {
                  const T kv = k[u * kw + v];
                  if (stride.w == 1) {
                    detail::axpy(kv, grow, drow + v, ow);
                  } else {
                    for (std::size_t ox = 0; ox < ow; ++ox) drow[ox * stride.w + v] += kv * grow[ox];
                  }
                }
              }
            }
            T* dx = &nx->grad[pl * h * w];
            for (std::size_t y = 0; y < ph; ++y) {
              if (src_r[y] < 0) continue;
              T* dxr = dx + static_cast<std::size_t>(src_r[y]) * w;
              const T* drow = &dplane[y * pw];
              for (std::size_t xx = 0; xx < pw; ++xx) {
                if (src_c[xx] >= 0) dxr[src_c[xx]] += drow[xx];
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Batch normalization over (N, H, W) per channel of an NCHW tensor.

struct RunningStats {
  std::vector<float> mean;
  std::vector<float> var;
  explicit RunningStats(std::size_t channels = 0) : mean(channels, 0.0f), var(channels, 1.0f) {}
};

struct BatchNormOptions {
  float momentum = 0.1f;
  float eps = 1e-5f;
};

template <typename T>
BasicTensor<T> batch_norm(const BasicTensor<T>& input, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                         RunningStats& stats, Mode mode, BatchNormOptions opts = {}) {
  if (input.rank() < 2) throw DimensionError("batch_norm: input needs rank >= 2");
  const std::size_t n = input.dim(0), c = input.dim(1);
  const std::size_t inner = input.numel() / (n * c);
  if (gamma.numel() != c || beta.numel() != c || stats.mean.size() != c ||
      stats.var.size() != c) {
    throw DimensionError("batch_norm: " + std::to_string(c) +
                         " channels but gamma/beta/stats sized " +
                         std::to_string(gamma.numel()) + "/" + std::to_string(beta.numel()) +
                         "/" + std::to_string(stats.mean.size()));
  }
  const std::size_t count = n * inner;
  std::vector<T> mu(c), inv_std(c);
  if (mode == Mode::Train) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = &input[(b * c + ch) * inner];
        for (std::size_t i = 0; i < inner; ++i) s += p[i];
      }
      const double m = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = &input[(b * c + ch) * inner];
        for (std::size_t i = 0; i < inner; ++i) ss += (p[i] - m) * (p[i] - m);
      }
      const double var = ss / static_cast<double>(count);
      mu[ch] = static_cast<T>(m);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + opts.eps));
      const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
      stats.mean[ch] = static_cast<T>((1.0 - opts.momentum) * stats.mean[ch] + opts.momentum * m);
      stats.var[ch] =
          static_cast<T>((1.0 - opts.momentum) * stats.var[ch] + opts.momentum * unbiased);
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mu[ch] = stats.mean[ch];
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(stats.var[ch]) + opts.eps));
    }
  }
  std::vector<T> xhat(input.numel()), out(input.numel());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (b * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        xhat[off + i] = (input[off + i] - mu[ch]) * inv_std[ch];
        out[off + i] = gamma[ch] * xhat[off + i] + beta[ch];
      }
    }
  }
  auto nx = input.node_ptr(), ng = gamma.node_ptr(), nb = beta.node_ptr();
  const bool batch_stats = mode == Mode::Train;
  return make_result<T>(
      input.shape(), std::move(out), {input, gamma, beta},
      [nx, ng, nb, xhat = std::move(xhat), inv_std, n, c, inner, count,
       batch_stats](detail::Node<T>& o) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          double dgamma = 0.0, dbeta = 0.0;
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
              dbeta += o.grad[off + i];
              dgamma += static_cast<double>(o.grad[off + i]) * xhat[off + i];
            }
          }
          if (ng->requires_grad) {
            ng->ensure_grad();
            ng->grad[ch] += static_cast<T>(dgamma);
          }
          if (nb->requires_grad) {
            nb->ensure_grad();
            nb->grad[ch] += static_cast<T>(dbeta);
          }
          if (!nx->requires_grad) continue;
          nx->ensure_grad();
          const double g = ng->data[ch] * static_cast<double>(inv_std[ch]);
          if (batch_stats) {
            const double m = static_cast<double>(count);
            for (std::size_t b = 0; b < n; ++b) {
              const std::size_t off = (b * c + ch) * inner;
              for (std::size_t i = 0; i < inner; ++i) {
                nx->grad[off + i] += static_cast<T>(
                    g * (o.grad[off + i] - dbeta / m - xhat[off + i] * dgamma / m));
              }
            }
          } else {
            for (std::size_t b = 0; b < n; ++b) {
              const std::size_t off = (b * c + ch) * inner;
              for (std::size_t i = 0; i < inner; ++i) {
                nx->grad[off + i] += static_cast<T>(g * o.grad[off + i]);
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Max pooling. Padded positions never win; ties route to the first (row-major)
// maximal element of each window.

template <typename T>
BasicTensor<T> max_pool2d(const BasicTensor<T>& input, std::size_t k, Stride2 stride,
                         PaddingMode padding) {
  detail::require_rank(input, 4, "max_pool2d", "input");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const auto gh = detail::axis_geometry(h, k, stride.h, padding, "max_pool2d", "H");
  const auto gw = detail::axis_geometry(w, k, stride.w, padding, "max_pool2d", "W");
  const std::size_t oh = gh.out, ow = gw.out;
  std::vector<T> out(n * c * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const T* src = &input[plane * h * w];
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(oy * stride.h) -
                                static_cast<std::ptrdiff_t>(gh.pad_before);
      const std::size_t ylo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(y0, 0));
      const std::size_t yhi =
          static_cast<std::size_t>(std::min<std::ptrdiff_t>(y0 + static_cast<std::ptrdiff_t>(k),
                                                            static_cast<std::ptrdiff_t>(h)));
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(ox * stride.w) -
                                  static_cast<std::ptrdiff_t>(gw.pad_before);
        const std::size_t xlo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(x0, 0));
        const std::size_t xhi = static_cast<std::size_t>(std::min<std::ptrdiff_t>(
            x0 + static_cast<std::ptrdiff_t>(k), static_cast<std::ptrdiff_t>(w)));
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_idx = ylo * w + xlo;
        for (std::size_t y = ylo; y < yhi; ++y) {
          for (std::size_t x = xlo; x < xhi; ++x) {
            if (src[y * w + x] > best) {
              best = src[y * w + x];
              best_idx = y * w + x;
            }
          }
        }
        const std::size_t o = (plane * oh + oy) * ow + ox;
        out[o] = best;
        argmax[o] = plane * h * w + best_idx;
      }
    }
  }
  auto nx = input.node_ptr();
  return make_result<T>({n, c, oh, ow}, std::move(out), {input},
                     [nx, argmax = std::move(argmax)](detail::Node<T>& o) {
                       nx->ensure_grad();
                       for (std::size_t i = 0; i < o.grad.size(); ++i) {
                         nx->grad[argmax[i]] += o.grad[i];
                       }
                     });
}

// Gathers a strided spatial grid: out[b,c,r,q] = x[b,c,(i_b + r*sh) mod H, (j_b + q*sw) mod W]
// with a per-batch-element offset (i_b, j_b). Indices past the edge wrap around.
template <typename T>
BasicTensor<T> gather_grid(const BasicTensor<T>& input, Stride2 stride,
                          const std::vector<std::pair<std::size_t, std::size_t>>& offsets,
                          std::size_t out_h, std::size_t out_w) {
  detail::require_rank(input, 4, "gather_grid", "input");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (offsets.size() != n) throw DimensionError("gather_grid: one offset per batch element");
  std::vector<std::size_t> index(n * c * out_h * out_w);
  std::vector<T> out(index.size());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t plane = b * c + ch;
      for (std::size_t r = 0; r < out_h; ++r) {
        const std::size_t y = (offsets[b].first + r * stride.h) % h;
        for (std::size_t q = 0; q < out_w; ++q) {
          const std::size_t x = (offsets[b].second + q * stride.w) % w;
          const std::size_t o = (plane * out_h + r) * out_w + q;
          index[o] = (plane * h + y) * w + x;
          out[o] = input[index[o]];
        }
      }
    }
  }
  auto nx = input.node_ptr();
  return make_result<T>({n, c, out_h, out_w}, std::move(out), {input},
                     [nx, index = std::move(index)](detail::Node<T>& o) {
                       nx->ensure_grad();
                       for (std::size_t i = 0; i < o.grad.size(); ++i) {
                         nx->grad[index[i]] += o.grad[i];
                       }
                     });
}

}  // namespace aapool
