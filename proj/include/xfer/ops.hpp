#pragma once

// Differentiable operators over Tensor<T>. Every kernel is single-threaded
// with a fixed loop order, so reductions are bit-reproducible.

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "xfer/errors.hpp"
#include "xfer/tensor.hpp"

namespace xfer {

namespace detail {

// C[M×N] += A[M×K] · B[K×N]
template <typename T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t i = 0; i < M; ++i) {
    T* c = C + i * N;
    const T* a = A + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      const T av = a[k];
      if (av == T(0)) continue;
      const T* b = B + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

// C[M×N] += A[M×K] · B[N×K]ᵀ
template <typename T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t i = 0; i < M; ++i) {
    const T* a = A + i * K;
    for (std::size_t j = 0; j < N; ++j) {
      const T* b = B + j * K;
      T acc = T(0);
      for (std::size_t k = 0; k < K; ++k) acc += a[k] * b[k];
      C[i * N + j] += acc;
    }
  }
}

// C[M×N] += A[K×M]ᵀ · B[K×N]
template <typename T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t k = 0; k < K; ++k) {
    const T* a = A + k * M;
    const T* b = B + k * N;
    for (std::size_t i = 0; i < M; ++i) {
      const T av = a[i];
      if (av == T(0)) continue;
      T* c = C + i * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <typename T>
void require_rank(const Tensor<T>& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(a.shape()));
  }
}

inline std::size_t last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and structural

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_result<T>(a.shape(), std::move(out), "add", {&a, &b}, [](Node<T>& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      auto& g = in->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::make_result<T>(a.shape(), std::move(out), "sub", {&a, &b}, [](Node<T>& self) {
    if (self.inputs[0]->requires_grad) {
      auto& g = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.inputs[1]->requires_grad) {
      auto& g = self.inputs[1]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_result<T>(a.shape(), std::move(out), "mul", {&a, &b}, [](Node<T>& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    if (A.requires_grad) {
      auto& g = A.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * B.data[i];
    }
    if (B.requires_grad) {
      auto& g = B.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * A.data[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
  return detail::make_result<T>(a.shape(), std::move(out), "scale", {&a}, [s](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
  });
}

/// x[N×F] + b[F], broadcast over rows.
template <typename T>
Tensor<T> add_rowvec(const Tensor<T>& x, const Tensor<T>& b) {
  detail::require_rank(x, 2, "add_rowvec");
  if (b.numel() != x.dim(1)) {
    throw ShapeError("add_rowvec: bias " + shape_str(b.shape()) + " does not match " +
                     shape_str(x.shape()));
  }
  const std::size_t N = x.dim(0), F = x.dim(1);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < F; ++j) out[i * F + j] = x[i * F + j] + b[j];
  return detail::make_result<T>(x.shape(), std::move(out), "add_rowvec", {&x, &b},
                                [N, F](Node<T>& self) {
                                  auto& X = *self.inputs[0];
                                  auto& B = *self.inputs[1];
                                  if (X.requires_grad) {
                                    auto& g = X.ensure_grad();
                                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                                  }
                                  if (B.requires_grad) {
                                    auto& g = B.ensure_grad();
                                    for (std::size_t i = 0; i < N; ++i)
                                      for (std::size_t j = 0; j < F; ++j) g[j] += self.grad[i * F + j];
                                  }
                                });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return detail::make_result<T>(std::move(shape), std::move(out), "reshape", {&x}, [](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

/// Collapses every dimension after the first.
template <typename T>
Tensor<T> flatten(const Tensor<T>& x) {
  const std::size_t n = x.rank() == 0 ? 1 : x.dim(0);
  return reshape(x, Shape{n, n == 0 ? 0 : x.numel() / n});
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  detail::require_rank(x, 2, "transpose");
  const std::size_t R = x.dim(0), C = x.dim(1);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < C; ++j) out[j * R + i] = x[i * C + j];
  return detail::make_result<T>(Shape{C, R}, std::move(out), "transpose", {&x}, [R, C](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < R; ++i)
      for (std::size_t j = 0; j < C; ++j) g[i * C + j] += self.grad[j * R + i];
  });
}

/// [N×P] ++ [N×Q] -> [N×(P+Q)]
template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank(a, 2, "concat_cols");
  detail::require_rank(b, 2, "concat_cols");
  if (a.dim(0) != b.dim(0)) {
    throw ShapeError("concat_cols: row mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t N = a.dim(0), P = a.dim(1), Q = b.dim(1);
  std::vector<T> out(N * (P + Q));
  for (std::size_t i = 0; i < N; ++i) {
    std::copy_n(a.data().begin() + i * P, P, out.begin() + i * (P + Q));
    std::copy_n(b.data().begin() + i * Q, Q, out.begin() + i * (P + Q) + P);
  }
  return detail::make_result<T>(Shape{N, P + Q}, std::move(out), "concat_cols", {&a, &b},
                                [N, P, Q](Node<T>& self) {
                                  if (self.inputs[0]->requires_grad) {
                                    auto& g = self.inputs[0]->ensure_grad();
                                    for (std::size_t i = 0; i < N; ++i)
                                      for (std::size_t j = 0; j < P; ++j) g[i * P + j] += self.grad[i * (P + Q) + j];
                                  }
                                  if (self.inputs[1]->requires_grad) {
                                    auto& g = self.inputs[1]->ensure_grad();
                                    for (std::size_t i = 0; i < N; ++i)
                                      for (std::size_t j = 0; j < Q; ++j)
                                        g[i * Q + j] += self.grad[i * (P + Q) + P + j];
                                  }
                                });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.data()) acc += v;
  return detail::make_result<T>(Shape{}, {acc}, "sum", {&x}, [](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

/// Mean of all elements; the mean of an empty tensor is defined as 0.
template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  const std::size_t n = x.numel();
  T acc = T(0);
  for (T v : x.data()) acc += v;
  const T inv = n ? T(1) / static_cast<T>(n) : T(0);
  return detail::make_result<T>(Shape{}, {acc * inv}, "mean", {&x}, [inv](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0] * inv;
  });
}

/// Gathers x[i, idx[i]] from an N×K tensor.
template <typename T>
Tensor<T> pick(const Tensor<T>& x, const std::vector<std::size_t>& idx) {
  detail::require_rank(x, 2, "pick");
  const std::size_t N = x.dim(0), K = x.dim(1);
  if (idx.size() != N) {
    throw ShapeError("pick: " + std::to_string(idx.size()) + " indices for " + shape_str(x.shape()));
  }
  std::vector<T> out(N);
  for (std::size_t i = 0; i < N; ++i) {
    if (idx[i] >= K) throw ShapeError("pick: index " + std::to_string(idx[i]) + " out of range " + std::to_string(K));
    out[i] = x[i * K + idx[i]];
  }
  return detail::make_result<T>(Shape{N}, std::move(out), "pick", {&x}, [idx, K](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i) g[i * K + idx[i]] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
  std::vector<T> out(M * N, T(0));
  detail::gemm_nn(M, N, K, a.data().data(), b.data().data(), out.data());
  return detail::make_result<T>(Shape{M, N}, std::move(out), "matmul", {&a, &b},
                                [M, K, N](Node<T>& self) {
                                  auto& A = *self.inputs[0];
                                  auto& B = *self.inputs[1];
                                  if (A.requires_grad)
                                    detail::gemm_nt(M, K, N, self.grad.data(), B.data.data(),
                                                    A.ensure_grad().data());
                                  if (B.requires_grad)
                                    detail::gemm_tn(K, N, M, A.data.data(), self.grad.data(),
                                                    B.ensure_grad().data());
                                });
}

/// x[N×in] · w[in×out] + b[out]
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return add_rowvec(matmul(x, w), b);
}

// ---------------------------------------------------------------------------
// Convolution and pooling

struct Conv2dGeometry {
  std::size_t N, C, H, W, F, KH, KW, stride, pad, OH, OW;
};

inline Conv2dGeometry conv2d_geometry(const Shape& x, const Shape& w, std::size_t stride,
                                      std::size_t pad) {
  if (x.size() != 4 || w.size() != 4 || x[1] != w[1]) {
    throw ShapeError("conv2d: input " + shape_str(x) + " incompatible with kernel " + shape_str(w));
  }
  if (stride == 0) throw ConfigError("conv2d: stride must be positive");
  const std::size_t H = x[2] + 2 * pad, W = x[3] + 2 * pad;
  if (H < w[2] || W < w[3] || (H - w[2]) % stride != 0 || (W - w[3]) % stride != 0) {
    throw ConfigError("conv2d: output size not a positive integer for input " + shape_str(x) +
                      ", kernel " + shape_str(w) + ", stride " + std::to_string(stride) +
                      ", padding " + std::to_string(pad));
  }
  return {x[0], x[1], x[2], x[3], w[0], w[2], w[3], stride, pad,
          (H - w[2]) / stride + 1, (W - w[3]) / stride + 1};
}

namespace detail {

template <typename T>
void im2col(const Conv2dGeometry& g, const T* img, T* col) {
  const std::size_t P = g.OH * g.OW;
  for (std::size_t c = 0; c < g.C; ++c)
    for (std::size_t ky = 0; ky < g.KH; ++ky)
      for (std::size_t kx = 0; kx < g.KW; ++kx) {
        T* row = col + ((c * g.KH + ky) * g.KW + kx) * P;
        for (std::size_t oy = 0; oy < g.OH; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          for (std::size_t ox = 0; ox < g.OW; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            row[oy * g.OW + ox] = (iy >= 0 && iy < static_cast<long>(g.H) && ix >= 0 &&
                                   ix < static_cast<long>(g.W))
                                      ? img[(c * g.H + iy) * g.W + ix]
                                      : T(0);
          }
        }
      }
}

template <typename T>
void col2im(const Conv2dGeometry& g, const T* col, T* img) {
  const std::size_t P = g.OH * g.OW;
  for (std::size_t c = 0; c < g.C; ++c)
    for (std::size_t ky = 0; ky < g.KH; ++ky)
      for (std::size_t kx = 0; kx < g.KW; ++kx) {
        const T* row = col + ((c * g.KH + ky) * g.KW + kx) * P;
        for (std::size_t oy = 0; oy < g.OH; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.H)) continue;
          for (std::size_t ox = 0; ox < g.OW; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.W)) continue;
            img[(c * g.H + iy) * g.W + ix] += row[oy * g.OW + ox];
          }
        }
      }
}

}  // namespace detail

/// Cross-correlation of x[N×C×H×W] with w[F×C×kh×kw] plus bias[F].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t stride = 1,
                 std::size_t padding = 0) {
  const Conv2dGeometry g = conv2d_geometry(x.shape(), w.shape(), stride, padding);
  if (bias.numel() != g.F) {
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " for " + std::to_string(g.F) + " filters");
  }
  const std::size_t P = g.OH * g.OW, CKK = g.C * g.KH * g.KW;
  std::vector<T> out(g.N * g.F * P);
  std::vector<T> col(CKK * P);
  for (std::size_t n = 0; n < g.N; ++n) {
    detail::im2col(g, x.data().data() + n * g.C * g.H * g.W, col.data());
    T* o = out.data() + n * g.F * P;
    for (std::size_t f = 0; f < g.F; ++f) std::fill_n(o + f * P, P, bias[f]);
    detail::gemm_nn(g.F, P, CKK, w.data().data(), col.data(), o);
  }
  return detail::make_result<T>(Shape{g.N, g.F, g.OH, g.OW}, std::move(out), "conv2d", {&x, &w, &bias},
                                [g, P, CKK](Node<T>& self) {
                                  auto& X = *self.inputs[0];
                                  auto& Wt = *self.inputs[1];
                                  auto& B = *self.inputs[2];
                                  std::vector<T> col(CKK * P), gcol(CKK * P);
                                  for (std::size_t n = 0; n < g.N; ++n) {
                                    const T* gy = self.grad.data() + n * g.F * P;
                                    if (B.requires_grad) {
                                      auto& gb = B.ensure_grad();
                                      for (std::size_t f = 0; f < g.F; ++f)
                                        for (std::size_t p = 0; p < P; ++p) gb[f] += gy[f * P + p];
                                    }
                                    if (Wt.requires_grad) {
                                      detail::im2col(g, X.data.data() + n * g.C * g.H * g.W, col.data());
                                      detail::gemm_nt(g.F, CKK, P, gy, col.data(), Wt.ensure_grad().data());
                                    }
                                    if (X.requires_grad) {
                                      std::fill(gcol.begin(), gcol.end(), T(0));
                                      detail::gemm_tn(CKK, P, g.F, Wt.data.data(), gy, gcol.data());
                                      detail::col2im(g, gcol.data(), X.ensure_grad().data() + n * g.C * g.H * g.W);
                                    }
                                  }
                                });
}

/// Window maximum; gradient goes to the first maximal element in row-major
/// window order.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::size_t size = 2, std::size_t stride = 2) {
  detail::require_rank(x, 4, "maxpool2d");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (size == 0 || stride == 0 || H % stride != 0 || W % stride != 0 || H < size || W < size ||
      (H - size) % stride != 0 || (W - size) % stride != 0) {
    throw ConfigError("maxpool2d: input " + shape_str(x.shape()) + " not divisible by window " +
                      std::to_string(size) + " stride " + std::to_string(stride));
  }
  const std::size_t OH = (H - size) / stride + 1, OW = (W - size) / stride + 1;
  std::vector<T> out(N * C * OH * OW);
  std::vector<std::size_t> arg(out.size());
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const T* img = x.data().data() + nc * H * W;
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t ox = 0; ox < OW; ++ox) {
        std::size_t best = (oy * stride) * W + ox * stride;
        for (std::size_t ky = 0; ky < size; ++ky)
          for (std::size_t kx = 0; kx < size; ++kx) {
            const std::size_t at = (oy * stride + ky) * W + ox * stride + kx;
            if (img[at] > img[best]) best = at;
          }
        const std::size_t o = (nc * OH + oy) * OW + ox;
        out[o] = img[best];
        arg[o] = nc * H * W + best;
      }
  }
  return detail::make_result<T>(Shape{N, C, OH, OW}, std::move(out), "maxpool2d", {&x},
                                [arg = std::move(arg)](Node<T>& self) {
                                  auto& g = self.inputs[0]->ensure_grad();
                                  for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += self.grad[i];
                                });
}

// ---------------------------------------------------------------------------
// Normalization

template <typename T>
struct RunningStats {
  Tensor<T> mean;
  Tensor<T> var;

  static RunningStats create(std::size_t channels) {
    return {Tensor<T>::zeros({channels}), Tensor<T>::full({channels}, T(1))};
  }
};

enum class Mode { train, eval };

/// Per-channel batch normalization of x[N×C×H×W]. Train mode uses biased
/// batch variance for normalization and folds the unbiased estimate into
/// the running statistics.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      RunningStats<T>& stats, Mode mode, T momentum = T(0.1), T eps = T(1e-5)) {
  detail::require_rank(x, 4, "batchnorm2d");
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (gamma.numel() != C || beta.numel() != C || stats.mean.numel() != C || stats.var.numel() != C) {
    throw ShapeError("batchnorm2d: parameters do not match " + std::to_string(C) + " channels");
  }
  const std::size_t M = N * HW;
  std::vector<T> out(x.numel());
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(C);

  if (mode == Mode::train) {
    if (N < 2) throw ShapeError("batchnorm2d: train mode needs batch size >= 2, got " + std::to_string(N));
    for (std::size_t c = 0; c < C; ++c) {
      T mu = T(0);
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t p = 0; p < HW; ++p) mu += x[(n * C + c) * HW + p];
      mu /= static_cast<T>(M);
      T var = T(0);
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t p = 0; p < HW; ++p) {
          const T d = x[(n * C + c) * HW + p] - mu;
          var += d * d;
        }
      const T biased = var / static_cast<T>(M);
      const T unbiased = var / static_cast<T>(M - 1);
      inv_std[c] = T(1) / std::sqrt(biased + eps);
      stats.mean[c] = (T(1) - momentum) * stats.mean[c] + momentum * mu;
      stats.var[c] = (T(1) - momentum) * stats.var[c] + momentum * unbiased;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t p = 0; p < HW; ++p) {
          const std::size_t i = (n * C + c) * HW + p;
          xhat[i] = (x[i] - mu) * inv_std[c];
          out[i] = gamma[c] * xhat[i] + beta[c];
        }
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      inv_std[c] = T(1) / std::sqrt(stats.var[c] + eps);
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t p = 0; p < HW; ++p) {
          const std::size_t i = (n * C + c) * HW + p;
          xhat[i] = (x[i] - stats.mean[c]) * inv_std[c];
          out[i] = gamma[c] * xhat[i] + beta[c];
        }
    }
  }

  const bool training = mode == Mode::train;
  return detail::make_result<T>(
      x.shape(), std::move(out), "batchnorm2d", {&x, &gamma, &beta},
      [N, C, HW, M, training, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        auto& X = *self.inputs[0];
        auto& G = *self.inputs[1];
        auto& B = *self.inputs[2];
        const auto& gy = self.grad;
        for (std::size_t c = 0; c < C; ++c) {
          T sum_g = T(0), sum_gx = T(0);
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t p = 0; p < HW; ++p) {
              const std::size_t i = (n * C + c) * HW + p;
              sum_g += gy[i];
              sum_gx += gy[i] * xhat[i];
            }
          if (G.requires_grad) G.ensure_grad()[c] += sum_gx;
          if (B.requires_grad) B.ensure_grad()[c] += sum_g;
          if (!X.requires_grad) continue;
          auto& gx = X.ensure_grad();
          const T gam = G.data[c];
          if (training) {
            const T scale = gam * inv_std[c] / static_cast<T>(M);
            for (std::size_t n = 0; n < N; ++n)
              for (std::size_t p = 0; p < HW; ++p) {
                const std::size_t i = (n * C + c) * HW + p;
                gx[i] += scale * (static_cast<T>(M) * gy[i] - sum_g - xhat[i] * sum_gx);
              }
          } else {
            for (std::size_t n = 0; n < N; ++n)
              for (std::size_t p = 0; p < HW; ++p) {
                const std::size_t i = (n * C + c) * HW + p;
                gx[i] += gy[i] * gam * inv_std[c];
              }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Activations

/// Gradient at exactly 0 is 0.
template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return detail::make_result<T>(x.shape(), std::move(out), "relu", {&x}, [](Node<T>& self) {
    auto& in = *self.inputs[0];
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (in.data[i] > T(0)) g[i] += self.grad[i];
  });
}

/// Gradient at exactly 0 is the slope.
template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(0.2)) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) ? x[i] : slope * x[i];
  return detail::make_result<T>(x.shape(), std::move(out), "leaky_relu", {&x}, [slope](Node<T>& self) {
    auto& in = *self.inputs[0];
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (in.data[i] > T(0) ? T(1) : slope);
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x[i];
    if (v >= T(0)) {
      out[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out[i] = e / (T(1) + e);
    }
  }
  return detail::make_result<T>(x.shape(), out, "sigmoid", {&x}, [out](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * out[i] * (T(1) - out[i]);
  });
}

/// log(sigmoid(x)) = min(x, 0) - log1p(exp(-|x|)), finite for any finite x.
template <typename T>
Tensor<T> log_sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x[i];
    out[i] = std::min(v, T(0)) - std::log1p(std::exp(-std::abs(v)));
  }
  return detail::make_result<T>(x.shape(), std::move(out), "log_sigmoid", {&x}, [](Node<T>& self) {
    auto& in = *self.inputs[0];
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = in.data[i];
      // d/dx log sigmoid(x) = sigmoid(-x)
      const T s = v >= T(0) ? std::exp(-v) / (T(1) + std::exp(-v)) : T(1) / (T(1) + std::exp(v));
      g[i] += self.grad[i] * s;
    }
  });
}

// ---------------------------------------------------------------------------
// Softmax family, all along the last axis.

template <typename T>
void require_temperature(T tau, const char* op) {
  if (!(tau > T(0))) throw ParameterError(std::string(op) + ": temperature must be > 0, got " + std::to_string(tau));
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, T tau = T(1)) {
  require_temperature(tau, "softmax");
  const std::size_t K = detail::last_dim(x.shape());
  const std::size_t R = K ? x.numel() / K : 0;
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < R; ++r) {
    const T* in = x.data().data() + r * K;
    T* o = out.data() + r * K;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < K; ++j) mx = std::max(mx, in[j]);
    T z = T(0);
    for (std::size_t j = 0; j < K; ++j) z += (o[j] = std::exp((in[j] - mx) / tau));
    for (std::size_t j = 0; j < K; ++j) o[j] /= z;
  }
  return detail::make_result<T>(x.shape(), out, "softmax", {&x}, [out, K, R, tau](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t r = 0; r < R; ++r) {
      const T* y = out.data() + r * K;
      const T* gy = self.grad.data() + r * K;
      T dot = T(0);
      for (std::size_t j = 0; j < K; ++j) dot += gy[j] * y[j];
      for (std::size_t j = 0; j < K; ++j) g[r * K + j] += y[j] * (gy[j] - dot) / tau;
    }
  });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, T tau = T(1)) {
  require_temperature(tau, "log_softmax");
  const std::size_t K = detail::last_dim(x.shape());
  const std::size_t R = K ? x.numel() / K : 0;
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < R; ++r) {
    const T* in = x.data().data() + r * K;
    T* o = out.data() + r * K;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < K; ++j) mx = std::max(mx, in[j]);
    T z = T(0);
    for (std::size_t j = 0; j < K; ++j) z += std::exp((in[j] - mx) / tau);
    const T lse = std::log(z);
    for (std::size_t j = 0; j < K; ++j) o[j] = (in[j] - mx) / tau - lse;
  }
  return detail::make_result<T>(x.shape(), out, "log_softmax", {&x}, [out, K, R, tau](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t r = 0; r < R; ++r) {
      const T* gy = self.grad.data() + r * K;
      T s = T(0);
      for (std::size_t j = 0; j < K; ++j) s += gy[j];
      for (std::size_t j = 0; j < K; ++j) g[r * K + j] += (gy[j] - std::exp(out[r * K + j]) * s) / tau;
    }
  });
}

/// Natural-log entropy of each probability row, with 0·ln 0 = 0. Rows must
/// be non-negative and sum to 1 within 1e-5. The gradient -(ln p + 1) is
/// taken as 0 at p = 0.
template <typename T>
Tensor<T> entropy(const Tensor<T>& p) {
  const std::size_t K = detail::last_dim(p.shape());
  const std::size_t R = K ? p.numel() / K : 0;
  Shape out_shape = p.shape();
  if (!out_shape.empty()) out_shape.pop_back();
  std::vector<T> out(R);
  for (std::size_t r = 0; r < R; ++r) {
    double total = 0.0;
    T h = T(0);
    for (std::size_t j = 0; j < K; ++j) {
      const T v = p[r * K + j];
      if (v < T(0)) throw DomainError("entropy: negative probability " + std::to_string(v));
      total += v;
      if (v > T(0)) h -= v * std::log(v);
    }
    if (std::abs(total - 1.0) > 1e-5) {
      throw DomainError("entropy: row " + std::to_string(r) + " sums to " + std::to_string(total));
    }
    out[r] = h;
  }
  return detail::make_result<T>(std::move(out_shape), std::move(out), "entropy", {&p}, [K, R](Node<T>& self) {
    auto& in = *self.inputs[0];
    auto& g = in.ensure_grad();
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t j = 0; j < K; ++j) {
        const T v = in.data[r * K + j];
        if (v > T(0)) g[r * K + j] -= self.grad[r] * (std::log(v) + T(1));
      }
  });
}

/// H(softmax(x / tau)) per row, computed from log-probabilities so it stays
/// finite when the distribution is nearly one-hot.
template <typename T>
Tensor<T> softmax_entropy(const Tensor<T>& x, T tau = T(1)) {
  require_temperature(tau, "softmax_entropy");
  const std::size_t K = detail::last_dim(x.shape());
  const std::size_t R = K ? x.numel() / K : 0;
  Shape out_shape = x.shape();
  if (!out_shape.empty()) out_shape.pop_back();
  std::vector<T> logp(x.numel());
  std::vector<T> out(R);
  for (std::size_t r = 0; r < R; ++r) {
    const T* in = x.data().data() + r * K;
    T* lp = logp.data() + r * K;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < K; ++j) mx = std::max(mx, in[j]);
    T z = T(0);
    for (std::size_t j = 0; j < K; ++j) z += std::exp((in[j] - mx) / tau);
    const T lse = std::log(z);
    T h = T(0);
    for (std::size_t j = 0; j < K; ++j) {
      lp[j] = (in[j] - mx) / tau - lse;
      h -= std::exp(lp[j]) * lp[j];
    }
    out[r] = h;
  }
  return detail::make_result<T>(
      std::move(out_shape), out, "softmax_entropy", {&x}, [K, R, tau, logp = std::move(logp), out](Node<T>& self) {
        auto& g = self.inputs[0]->ensure_grad();
        // dH/dz_j = -p_j (ln p_j + H), z = x / tau
        for (std::size_t r = 0; r < R; ++r)
          for (std::size_t j = 0; j < K; ++j) {
            const T lp = logp[r * K + j];
            g[r * K + j] -= self.grad[r] * std::exp(lp) * (lp + out[r]) / tau;
          }
      });
}

/// Rows scaled to unit L2 norm; a zero row is a domain error.
template <typename T>
Tensor<T> l2_normalize_rows(const Tensor<T>& x) {
  detail::require_rank(x, 2, "l2_normalize_rows");
  const std::size_t N = x.dim(0), D = x.dim(1);
  std::vector<T> out(x.numel());
  std::vector<T> norms(N);
  for (std::size_t i = 0; i < N; ++i) {
    T s = T(0);
    for (std::size_t j = 0; j < D; ++j) s += x[i * D + j] * x[i * D + j];
    norms[i] = std::sqrt(s);
    if (!(norms[i] > T(0))) throw DomainError("l2_normalize_rows: row " + std::to_string(i) + " has zero norm");
    for (std::size_t j = 0; j < D; ++j) out[i * D + j] = x[i * D + j] / norms[i];
  }
  return detail::make_result<T>(x.shape(), out, "l2_normalize_rows", {&x},
                                [N, D, out, norms = std::move(norms)](Node<T>& self) {
                                  auto& g = self.inputs[0]->ensure_grad();
                                  for (std::size_t i = 0; i < N; ++i) {
                                    T dot = T(0);
                                    for (std::size_t j = 0; j < D; ++j) dot += out[i * D + j] * self.grad[i * D + j];
                                    for (std::size_t j = 0; j < D; ++j)
                                      g[i * D + j] += (self.grad[i * D + j] - out[i * D + j] * dot) / norms[i];
                                  }
                                });
}

}  // namespace xfer
