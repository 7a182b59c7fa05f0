#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "lvnet/parallel.hpp"
#include "lvnet/tensor.hpp"

namespace lvnet {

// ---------------------------------------------------------------------------
// broadcasting helpers (numpy rules, right-aligned)

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (size_t i = 0; i < rank; ++i) {
    int64_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    int64_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ConfigError("broadcast: incompatible shapes " + shape_str(a) + " vs " + shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

// Element strides of `from` aligned to the broadcast result `to`;
// broadcast axes get stride 0.
inline std::vector<int64_t> broadcast_strides(const Shape& from, const Shape& to) {
  std::vector<int64_t> st(to.size(), 0);
  auto fst = row_major_strides(from);
  size_t off = to.size() - from.size();
  for (size_t i = 0; i < from.size(); ++i)
    st[off + i] = (from[i] == 1 && to[off + i] != 1) ? 0 : fst[i];
  return st;
}

namespace detail {

// Walk a row-major index space while tracking offsets into two broadcast
// operands.
template <typename F>
void broadcast_walk(const Shape& out, const std::vector<int64_t>& sa,
                    const std::vector<int64_t>& sb, F&& f) {
  int64_t n = shape_numel(out);
  size_t rank = out.size();
  if (rank == 0) {
    f(0, 0, 0);
    return;
  }
  std::vector<int64_t> coord(rank, 0);
  int64_t ia = 0, ib = 0;
  for (int64_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (size_t ax = rank; ax-- > 0;) {
      coord[ax]++;
      ia += sa[ax];
      ib += sb[ax];
      if (coord[ax] < out[ax]) break;
      ia -= sa[ax] * out[ax];
      ib -= sb[ax] * out[ax];
      coord[ax] = 0;
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary ops

enum class BinaryKind { add, sub, mul, div };

template <typename T>
Tensor<T> binary_op(BinaryKind kind, const Tensor<T>& a, const Tensor<T>& b) {
  const char* name = kind == BinaryKind::add   ? "add"
                     : kind == BinaryKind::sub ? "sub"
                     : kind == BinaryKind::mul ? "mul"
                                               : "div";
  Shape out_shape = broadcast_shape(a.shape(), b.shape());
  auto sa = broadcast_strides(a.shape(), out_shape);
  auto sb = broadcast_strides(b.shape(), out_shape);
  std::vector<T> out(static_cast<size_t>(shape_numel(out_shape)));
  const auto& av = a.data();
  const auto& bv = b.data();
  detail::broadcast_walk(out_shape, sa, sb, [&](int64_t i, int64_t ia, int64_t ib) {
    T x = av[static_cast<size_t>(ia)], y = bv[static_cast<size_t>(ib)];
    switch (kind) {
      case BinaryKind::add: out[static_cast<size_t>(i)] = x + y; break;
      case BinaryKind::sub: out[static_cast<size_t>(i)] = x - y; break;
      case BinaryKind::mul: out[static_cast<size_t>(i)] = x * y; break;
      case BinaryKind::div: out[static_cast<size_t>(i)] = x / y; break;
    }
  });
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  return make_op<T>(
      name, out_shape, std::move(out), {a, b},
      [kind, out_shape, sa, sb, an, bn](TensorNode<T>& self) {
        if (an->requires_grad) an->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        detail::broadcast_walk(out_shape, sa, sb, [&](int64_t i, int64_t ia, int64_t ib) {
          T g = self.grad[static_cast<size_t>(i)];
          switch (kind) {
            case BinaryKind::add:
              if (an->requires_grad) an->grad[static_cast<size_t>(ia)] += g;
              if (bn->requires_grad) bn->grad[static_cast<size_t>(ib)] += g;
              break;
            case BinaryKind::sub:
              if (an->requires_grad) an->grad[static_cast<size_t>(ia)] += g;
              if (bn->requires_grad) bn->grad[static_cast<size_t>(ib)] -= g;
              break;
            case BinaryKind::mul:
              if (an->requires_grad)
                an->grad[static_cast<size_t>(ia)] += g * bn->data[static_cast<size_t>(ib)];
              if (bn->requires_grad)
                bn->grad[static_cast<size_t>(ib)] += g * an->data[static_cast<size_t>(ia)];
              break;
            case BinaryKind::div: {
              T bd = bn->data[static_cast<size_t>(ib)];
              if (an->requires_grad) an->grad[static_cast<size_t>(ia)] += g / bd;
              if (bn->requires_grad)
                bn->grad[static_cast<size_t>(ib)] -=
                    g * an->data[static_cast<size_t>(ia)] / (bd * bd);
              break;
            }
          }
        });
      });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(BinaryKind::add, a, b);
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(BinaryKind::sub, a, b);
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(BinaryKind::mul, a, b);
}
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(BinaryKind::div, a, b);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  std::vector<T> out(x.data());
  for (auto& v : out) v *= c;
  auto xn = x.node_ptr();
  return make_op<T>("scale", x.shape(), std::move(out), {x}, [c, xn](TensorNode<T>& self) {
    xn->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += c * self.grad[i];
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  std::vector<T> out(x.data());
  for (auto& v : out) v += c;
  auto xn = x.node_ptr();
  return make_op<T>("add_scalar", x.shape(), std::move(out), {x}, [xn](TensorNode<T>& self) {
    accumulate_grad(xn, self.grad);
  });
}

// ---------------------------------------------------------------------------
// pointwise nonlinearities

enum class Pointwise { relu, sigmoid, gelu, log };

template <typename T>
inline T pw_forward(Pointwise k, T x) {
  switch (k) {
    case Pointwise::relu: return x > T(0) ? x : T(0);
    case Pointwise::sigmoid:
      return x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                       : std::exp(x) / (T(1) + std::exp(x));
    case Pointwise::gelu:
      // exact Gaussian-CDF form
      return T(0.5) * x * (T(1) + std::erf(x * T(0.70710678118654752440)));
    case Pointwise::log: return std::log(x);
  }
  return T(0);
}

template <typename T>
inline T pw_backward(Pointwise k, T x, T y) {
  switch (k) {
    case Pointwise::relu: return x > T(0) ? T(1) : T(0);
    case Pointwise::sigmoid: return y * (T(1) - y);
    case Pointwise::gelu: {
      T cdf = T(0.5) * (T(1) + std::erf(x * T(0.70710678118654752440)));
      T pdf = std::exp(T(-0.5) * x * x) * T(0.39894228040143267794);
      return cdf + x * pdf;
    }
    case Pointwise::log: return T(1) / x;
  }
  return T(0);
}

template <typename T>
Tensor<T> pointwise(const Tensor<T>& x, Pointwise kind) {
  const char* name = kind == Pointwise::relu      ? "relu"
                     : kind == Pointwise::sigmoid ? "sigmoid"
                     : kind == Pointwise::gelu    ? "gelu"
                                                  : "log";
  std::vector<T> out(x.data().size());
  const auto& xv = x.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = pw_forward(kind, xv[i]);
  auto xn = x.node_ptr();
  return make_op<T>(name, x.shape(), std::move(out), {x}, [kind, xn](TensorNode<T>& self) {
    xn->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      xn->grad[i] += self.grad[i] * pw_backward(kind, xn->data[i], self.data[i]);
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return pointwise(x, Pointwise::relu);
}
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return pointwise(x, Pointwise::sigmoid);
}
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  return pointwise(x, Pointwise::gelu);
}

// ---------------------------------------------------------------------------
// reductions

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.data()) acc += v;
  auto xn = x.node_ptr();
  return make_op<T>("sum", Shape{}, {acc}, {x}, [xn](TensorNode<T>& self) {
    xn->ensure_grad();
    T g = self.grad[0];
    for (auto& v : xn->grad) v += g;
  });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return scale(sum_all(x), T(1) / static_cast<T>(x.numel()));
}

// ---------------------------------------------------------------------------
// raw batched GEMM shared by forward and backward paths

namespace detail {

// C[b] (M x N) += A[b] x B[b]; A is (M,K) or (K,M) when ta, B is (K,N) or
// (N,K) when tb. Parallel over the batch axis only: every C slice has one
// writer, so results are schedule-independent.
template <typename T>
void gemm_batched(const T* A, const T* B, T* C, int64_t batch, int64_t M, int64_t N, int64_t K,
                  bool ta, bool tb) {
  int64_t a_sz = M * K, b_sz = K * N, c_sz = M * N;
  parallel_for(batch, [&](int64_t b) {
    const T* a = A + b * a_sz;
    const T* bb = B + b * b_sz;
    T* c = C + b * c_sz;
    if (!ta && !tb) {
      for (int64_t m = 0; m < M; ++m)
        for (int64_t k = 0; k < K; ++k) {
          T av = a[m * K + k];
          const T* br = bb + k * N;
          T* cr = c + m * N;
          for (int64_t n = 0; n < N; ++n) cr[n] += av * br[n];
        }
    } else if (!ta && tb) {
      for (int64_t m = 0; m < M; ++m)
        for (int64_t n = 0; n < N; ++n) {
          const T* ar = a + m * K;
          const T* br = bb + n * K;
          T acc = T(0);
          for (int64_t k = 0; k < K; ++k) acc += ar[k] * br[k];
          c[m * N + n] += acc;
        }
    } else if (ta && !tb) {
      for (int64_t k = 0; k < K; ++k)
        for (int64_t m = 0; m < M; ++m) {
          T av = a[k * M + m];
          const T* br = bb + k * N;
          T* cr = c + m * N;
          for (int64_t n = 0; n < N; ++n) cr[n] += av * br[n];
        }
    } else {
      for (int64_t m = 0; m < M; ++m)
        for (int64_t n = 0; n < N; ++n) {
          T acc = T(0);
          for (int64_t k = 0; k < K; ++k) acc += a[k * M + m] * bb[n * K + k];
          c[m * N + n] += acc;
        }
    }
  });
}

}  // namespace detail

// Batched matrix product over the two trailing axes; leading axes must match
// exactly. transpose_b treats b as [..., N, K].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false) {
  if (a.rank() < 2 || b.rank() != a.rank())
    throw ConfigError("matmul: rank mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
  int r = a.rank();
  int64_t batch = 1;
  for (int i = 0; i < r - 2; ++i) {
    if (a.dim(i) != b.dim(i))
      throw ConfigError("matmul: batch mismatch " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
    batch *= a.dim(i);
  }
  int64_t M = a.dim(-2), K = a.dim(-1);
  int64_t N = transpose_b ? b.dim(-2) : b.dim(-1);
  int64_t Kb = transpose_b ? b.dim(-1) : b.dim(-2);
  if (K != Kb)
    throw ConfigError("matmul: inner dim mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
  Shape out_shape(a.shape().begin(), a.shape().end() - 2);
  out_shape.push_back(M);
  out_shape.push_back(N);
  std::vector<T> out(static_cast<size_t>(batch * M * N), T(0));
  detail::gemm_batched(a.data().data(), b.data().data(), out.data(), batch, M, N, K, false,
                       transpose_b);
  MacTally::add(static_cast<uint64_t>(batch * M * N * K));
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  return make_op<T>(
      "matmul", std::move(out_shape), std::move(out), {a, b},
      [an, bn, batch, M, N, K, transpose_b](TensorNode<T>& self) {
        const T* dc = self.grad.data();
        if (an->requires_grad) {
          an->ensure_grad();
          // dA = dC * B^T   (or dC * B when b was transposed)
          detail::gemm_batched(dc, bn->data.data(), an->grad.data(), batch, M, K, N, false,
                               !transpose_b);
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          if (!transpose_b) {
            // dB = A^T * dC
            detail::gemm_batched(an->data.data(), dc, bn->grad.data(), batch, K, N, M, true,
                                 false);
          } else {
            // dB = dC^T * A
            detail::gemm_batched(dc, an->data.data(), bn->grad.data(), batch, N, K, M, true,
                                 false);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// affine: out[..., Dout] = x[..., Din] * w[Din, Dout] (+ bias)

template <typename T>
Tensor<T> affine(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias = {}) {
  if (w.rank() != 2) throw ConfigError("affine: weight must be 2-D, got " + shape_str(w.shape()));
  int64_t din = w.dim(0), dout = w.dim(1);
  if (x.dim(-1) != din)
    throw ConfigError("affine: input last dim " + std::to_string(x.dim(-1)) +
                      " != weight Din " + std::to_string(din));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != dout))
    throw ConfigError("affine: bias shape mismatch");
  int64_t rows = x.numel() / din;
  Shape out_shape = x.shape();
  out_shape.back() = dout;
  std::vector<T> out(static_cast<size_t>(rows * dout), T(0));
  const T* xv = x.data().data();
  const T* wv = w.data().data();
  parallel_for(rows, [&](int64_t r) {
    T* orow = out.data() + r * dout;
    const T* xrow = xv + r * din;
    for (int64_t k = 0; k < din; ++k) {
      T a = xrow[k];
      const T* wrow = wv + k * dout;
      for (int64_t j = 0; j < dout; ++j) orow[j] += a * wrow[j];
    }
    if (bias.defined()) {
      const T* bv = bias.data().data();
      for (int64_t j = 0; j < dout; ++j) orow[j] += bv[j];
    }
  });
  MacTally::add(static_cast<uint64_t>(rows * din * dout));
  auto xn = x.node_ptr();
  auto wn = w.node_ptr();
  std::vector<Tensor<T>> parents{x, w};
  if (bias.defined()) parents.push_back(bias);
  auto bn = bias.defined() ? bias.node_ptr() : nullptr;
  return make_op<T>(
      "affine", std::move(out_shape), std::move(out), std::move(parents),
      [xn, wn, bn, rows, din, dout](TensorNode<T>& self) {
        const T* dy = self.grad.data();
        if (xn->requires_grad) {
          xn->ensure_grad();
          T* dx = xn->grad.data();
          const T* wv = wn->data.data();
          parallel_for(rows, [&](int64_t r) {
            const T* dyr = dy + r * dout;
            T* dxr = dx + r * din;
            for (int64_t k = 0; k < din; ++k) {
              const T* wrow = wv + k * dout;
              T acc = T(0);
              for (int64_t j = 0; j < dout; ++j) acc += dyr[j] * wrow[j];
              dxr[k] += acc;
            }
          });
        }
        if (wn->requires_grad) {
          wn->ensure_grad();
          T* dw = wn->grad.data();
          const T* xv = xn->data.data();
          parallel_for(din, [&](int64_t k) {
            T* dwrow = dw + k * dout;
            for (int64_t r = 0; r < rows; ++r) {
              T a = xv[r * din + k];
              const T* dyr = dy + r * dout;
              for (int64_t j = 0; j < dout; ++j) dwrow[j] += a * dyr[j];
            }
          });
        }
        if (bn && bn->requires_grad) {
          bn->ensure_grad();
          T* db = bn->grad.data();
          for (int64_t r = 0; r < rows; ++r) {
            const T* dyr = dy + r * dout;
            for (int64_t j = 0; j < dout; ++j) db[j] += dyr[j];
          }
        }
      });
}

// ---------------------------------------------------------------------------
// convolution (cross-correlation, NCHW)

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int64_t stride,
                 int64_t pad) {
  if (x.rank() != 4 || w.rank() != 4)
    throw ConfigError("conv2d: expected 4-D input/weight, got " + shape_str(x.shape()) + " and " +
                      shape_str(w.shape()));
  int64_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  int64_t Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != Cin)
    throw ConfigError("conv2d: input channels " + std::to_string(Cin) + " != weight Cin " +
                      std::to_string(w.dim(1)));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != Cout))
    throw ConfigError("conv2d: bias shape mismatch");
  int64_t Ho = (H + 2 * pad - kh) / stride + 1;
  int64_t Wo = (W + 2 * pad - kw) / stride + 1;
  if (Ho <= 0 || Wo <= 0) throw ConfigError("conv2d: kernel larger than padded input");
  std::vector<T> out(static_cast<size_t>(N * Cout * Ho * Wo), T(0));
  const T* xv = x.data().data();
  const T* wv = w.data().data();
  const T* bv = bias.defined() ? bias.data().data() : nullptr;
  parallel_for(N * Cout, [&](int64_t idx) {
    int64_t n = idx / Cout, co = idx % Cout;
    T* oplane = out.data() + (n * Cout + co) * Ho * Wo;
    if (bv) {
      for (int64_t i = 0; i < Ho * Wo; ++i) oplane[i] = bv[co];
    }
    for (int64_t ci = 0; ci < Cin; ++ci) {
      const T* xplane = xv + (n * Cin + ci) * H * W;
      const T* wk = wv + (co * Cin + ci) * kh * kw;
      for (int64_t ky = 0; ky < kh; ++ky) {
        for (int64_t kx = 0; kx < kw; ++kx) {
          T wval = wk[ky * kw + kx];
          if (wval == T(0)) continue;
          for (int64_t oy = 0; oy < Ho; ++oy) {
            int64_t iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= H) continue;
            const T* xrow = xplane + iy * W;
            T* orow = oplane + oy * Wo;
            for (int64_t ox = 0; ox < Wo; ++ox) {
              int64_t ix = ox * stride + kx - pad;
              if (ix < 0 || ix >= W) continue;
              orow[ox] += wval * xrow[ix];
            }
          }
        }
      }
    }
  });
  MacTally::add(static_cast<uint64_t>(N * Cout * Ho * Wo * Cin * kh * kw));
  auto xn = x.node_ptr();
  auto wn = w.node_ptr();
  auto bn = bias.defined() ? bias.node_ptr() : nullptr;
  std::vector<Tensor<T>> parents{x, w};
  if (bias.defined()) parents.push_back(bias);
  return make_op<T>(
      "conv2d", Shape{N, Cout, Ho, Wo}, std::move(out), std::move(parents),
      [xn, wn, bn, N, Cin, H, W, Cout, kh, kw, Ho, Wo, stride, pad](TensorNode<T>& self) {
        const T* dy = self.grad.data();
        if (xn->requires_grad) {
          xn->ensure_grad();
          T* dx = xn->grad.data();
          const T* wv = wn->data.data();
          parallel_for(N * Cin, [&](int64_t idx) {
            int64_t n = idx / Cin, ci = idx % Cin;
            T* dxplane = dx + (n * Cin + ci) * H * W;
            for (int64_t co = 0; co < Cout; ++co) {
              const T* dyplane = dy + (n * Cout + co) * Ho * Wo;
              const T* wk = wv + (co * Cin + ci) * kh * kw;
              for (int64_t ky = 0; ky < kh; ++ky) {
                for (int64_t kx = 0; kx < kw; ++kx) {
                  T wval = wk[ky * kw + kx];
                  if (wval == T(0)) continue;
                  for (int64_t oy = 0; oy < Ho; ++oy) {
                    int64_t iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) continue;
                    const T* dyrow = dyplane + oy * Wo;
                    T* dxrow = dxplane + iy * W;
                    for (int64_t ox = 0; ox < Wo; ++ox) {
                      int64_t ix = ox * stride + kx - pad;
                      if (ix < 0 || ix >= W) continue;
                      dxrow[ix] += wval * dyrow[ox];
                    }
                  }
                }
              }
            }
          });
        }
        if (wn->requires_grad) {
          wn->ensure_grad();
          T* dw = wn->grad.data();
          const T* xv = xn->data.data();
          parallel_for(Cout, [&](int64_t co) {
            for (int64_t ci = 0; ci < Cin; ++ci) {
              T* dwk = dw + (co * Cin + ci) * kh * kw;
              for (int64_t n = 0; n < N; ++n) {
                const T* dyplane = dy + (n * Cout + co) * Ho * Wo;
                const T* xplane = xv + (n * Cin + ci) * H * W;
                for (int64_t ky = 0; ky < kh; ++ky) {
                  for (int64_t kx = 0; kx < kw; ++kx) {
                    T acc = T(0);
                    for (int64_t oy = 0; oy < Ho; ++oy) {
                      int64_t iy = oy * stride + ky - pad;
                      if (iy < 0 || iy >= H) continue;
                      const T* dyrow = dyplane + oy * Wo;
                      const T* xrow = xplane + iy * W;
                      for (int64_t ox = 0; ox < Wo; ++ox) {
                        int64_t ix = ox * stride + kx - pad;
                        if (ix < 0 || ix >= W) continue;
                        acc += dyrow[ox] * xrow[ix];
                      }
                    }
                    dwk[ky * kw + kx] += acc;
                  }
                }
              }
            }
          });
        }
        if (bn && bn->requires_grad) {
          bn->ensure_grad();
          T* db = bn->grad.data();
          for (int64_t n = 0; n < N; ++n)
            for (int64_t co = 0; co < Cout; ++co) {
              const T* dyplane = dy + (n * Cout + co) * Ho * Wo;
              T acc = T(0);
              for (int64_t i = 0; i < Ho * Wo; ++i) acc += dyplane[i];
              db[co] += acc;
            }
        }
      });
}

// 3-D convolution over (T,H,W), NCTHW, stride 1.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int64_t pad) {
  if (x.rank() != 5 || w.rank() != 5)
    throw ConfigError("conv3d: expected 5-D input/weight");
  int64_t N = x.dim(0), Cin = x.dim(1), D = x.dim(2), H = x.dim(3), W = x.dim(4);
  int64_t Cout = w.dim(0), kd = w.dim(2), kh = w.dim(3), kw = w.dim(4);
  if (w.dim(1) != Cin) throw ConfigError("conv3d: channel mismatch");
  int64_t Do = D + 2 * pad - kd + 1;
  int64_t Ho = H + 2 * pad - kh + 1;
  int64_t Wo = W + 2 * pad - kw + 1;
  if (Do <= 0 || Ho <= 0 || Wo <= 0) throw ConfigError("conv3d: kernel larger than padded input");
  std::vector<T> out(static_cast<size_t>(N * Cout * Do * Ho * Wo), T(0));
  const T* xv = x.data().data();
  const T* wv = w.data().data();
  const T* bv = bias.defined() ? bias.data().data() : nullptr;
  parallel_for(N * Cout, [&](int64_t idx) {
    int64_t n = idx / Cout, co = idx % Cout;
    T* ovol = out.data() + (n * Cout + co) * Do * Ho * Wo;
    if (bv)
      for (int64_t i = 0; i < Do * Ho * Wo; ++i) ovol[i] = bv[co];
    for (int64_t ci = 0; ci < Cin; ++ci) {
      const T* xvol = xv + (n * Cin + ci) * D * H * W;
      const T* wk = wv + (co * Cin + ci) * kd * kh * kw;
      for (int64_t kz = 0; kz < kd; ++kz)
        for (int64_t ky = 0; ky < kh; ++ky)
          for (int64_t kx = 0; kx < kw; ++kx) {
            T wval = wk[(kz * kh + ky) * kw + kx];
            if (wval == T(0)) continue;
            for (int64_t oz = 0; oz < Do; ++oz) {
              int64_t iz = oz + kz - pad;
              if (iz < 0 || iz >= D) continue;
              for (int64_t oy = 0; oy < Ho; ++oy) {
                int64_t iy = oy + ky - pad;
                if (iy < 0 || iy >= H) continue;
                const T* xrow = xvol + (iz * H + iy) * W;
                T* orow = ovol + (oz * Ho + oy) * Wo;
                for (int64_t ox = 0; ox < Wo; ++ox) {
                  int64_t ix = ox + kx - pad;
                  if (ix < 0 || ix >= W) continue;
                  orow[ox] += wval * xrow[ix];
                }
              }
            }
          }
    }
  });
  MacTally::add(static_cast<uint64_t>(N * Cout * Do * Ho * Wo * Cin * kd * kh * kw));
  auto xn = x.node_ptr();
  auto wn = w.node_ptr();
  auto bn = bias.defined() ? bias.node_ptr() : nullptr;
  std::vector<Tensor<T>> parents{x, w};
  if (bias.defined()) parents.push_back(bias);
  return make_op<T>(
      "conv3d", Shape{N, Cout, Do, Ho, Wo}, std::move(out), std::move(parents),
      [xn, wn, bn, N, Cin, D, H, W, Cout, kd, kh, kw, Do, Ho, Wo, pad](TensorNode<T>& self) {
        const T* dy = self.grad.data();
        if (xn->requires_grad) {
          xn->ensure_grad();
          T* dx = xn->grad.data();
          const T* wv = wn->data.data();
          parallel_for(N * Cin, [&](int64_t idx) {
            int64_t n = idx / Cin, ci = idx % Cin;
            T* dxvol = dx + (n * Cin + ci) * D * H * W;
            for (int64_t co = 0; co < Cout; ++co) {
              const T* dyvol = dy + (n * Cout + co) * Do * Ho * Wo;
              const T* wk = wv + (co * Cin + ci) * kd * kh * kw;
              for (int64_t kz = 0; kz < kd; ++kz)
                for (int64_t ky = 0; ky < kh; ++ky)
                  for (int64_t kx = 0; kx < kw; ++kx) {
                    T wval = wk[(kz * kh + ky) * kw + kx];
                    if (wval == T(0)) continue;
                    for (int64_t oz = 0; oz < Do; ++oz) {
                      int64_t iz = oz + kz - pad;
                      if (iz < 0 || iz >= D) continue;
                      for (int64_t oy = 0; oy < Ho; ++oy) {
                        int64_t iy = oy + ky - pad;
                        if (iy < 0 || iy >= H) continue;
                        const T* dyrow = dyvol + (oz * Ho + oy) * Wo;
                        T* dxrow = dxvol + (iz * H + iy) * W;
                        for (int64_t ox = 0; ox < Wo; ++ox) {
                          int64_t ix = ox + kx - pad;
                          if (ix < 0 || ix >= W) continue;
                          dxrow[ix] += wval * dyrow[ox];
                        }
                      }
                    }
                  }
            }
          });
        }
        if (wn->requires_grad) {
          wn->ensure_grad();
          T* dw = wn->grad.data();
          const T* xv = xn->data.data();
          parallel_for(Cout, [&](int64_t co) {
            for (int64_t ci = 0; ci < Cin; ++ci) {
              T* dwk = dw + (co * Cin + ci) * kd * kh * kw;
              for (int64_t n = 0; n < N; ++n) {
                const T* dyvol = dy + (n * Cout + co) * Do * Ho * Wo;
                const T* xvol = xv + (n * Cin + ci) * D * H * W;
                for (int64_t kz = 0; kz < kd; ++kz)
                  for (int64_t ky = 0; ky < kh; ++ky)
                    for (int64_t kx = 0; kx < kw; ++kx) {
                      T acc = T(0);
                      for (int64_t oz = 0; oz < Do; ++oz) {
                        int64_t iz = oz + kz - pad;
                        if (iz < 0 || iz >= D) continue;
                        for (int64_t oy = 0; oy < Ho; ++oy) {
                          int64_t iy = oy + ky - pad;
                          if (iy < 0 || iy >= H) continue;
                          const T* dyrow = dyvol + (oz * Ho + oy) * Wo;
                          const T* xrow = xvol + (iz * H + iy) * W;
                          for (int64_t ox = 0; ox < Wo; ++ox) {
                            int64_t ix = ox + kx - pad;
                            if (ix < 0 || ix >= W) continue;
                            acc += dyrow[ox] * xrow[ix];
                          }
                        }
                      }
                      dwk[(kz * kh + ky) * kw + kx] += acc;
                    }
              }
            }
          });
        }
        if (bn && bn->requires_grad) {
          bn->ensure_grad();
          T* db = bn->grad.data();
          for (int64_t n = 0; n < N; ++n)
            for (int64_t co = 0; co < Cout; ++co) {
              const T* dyvol = dy + (n * Cout + co) * Do * Ho * Wo;
              T acc = T(0);
              for (int64_t i = 0; i < Do * Ho * Wo; ++i) acc += dyvol[i];
              db[co] += acc;
            }
        }
      });
}

// ---------------------------------------------------------------------------
// layer norm over the last axis (population variance)

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  int64_t d = x.dim(-1);
  if (gamma.numel() != d || beta.numel() != d)
    throw ConfigError("layer_norm: gamma/beta must have " + std::to_string(d) + " elements");
  if (eps <= T(0)) throw ConfigError("layer_norm: eps must be positive");
  int64_t rows = x.numel() / d;
  std::vector<T> out(x.data().size());
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
  auto mean = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
  const T* xv = x.data().data();
  const T* gv = gamma.data().data();
  const T* bv = beta.data().data();
  parallel_for(rows, [&](int64_t r) {
    const T* xr = xv + r * d;
    T mu = T(0);
    for (int64_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (int64_t j = 0; j < d; ++j) {
      T c = xr[j] - mu;
      var += c * c;
    }
    var /= static_cast<T>(d);
    T inv = T(1) / std::sqrt(var + eps);
    (*mean)[static_cast<size_t>(r)] = mu;
    (*inv_std)[static_cast<size_t>(r)] = inv;
    T* orow = out.data() + r * d;
    for (int64_t j = 0; j < d; ++j) orow[j] = (xr[j] - mu) * inv * gv[j] + bv[j];
  });
  auto xn = x.node_ptr();
  auto gn = gamma.node_ptr();
  auto bn = beta.node_ptr();
  return make_op<T>(
      "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
      [xn, gn, bn, rows, d, mean, inv_std](TensorNode<T>& self) {
        const T* dy = self.grad.data();
        const T* xv = xn->data.data();
        const T* gv = gn->data.data();
        if (xn->requires_grad) xn->ensure_grad();
        if (gn->requires_grad) gn->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        // dgamma/dbeta are shared across rows: keep their reduction serial.
        for (int64_t r = 0; r < rows; ++r) {
          const T* dyr = dy + r * d;
          const T* xr = xv + r * d;
          T mu = (*mean)[static_cast<size_t>(r)];
          T inv = (*inv_std)[static_cast<size_t>(r)];
          if (gn->requires_grad || bn->requires_grad) {
            for (int64_t j = 0; j < d; ++j) {
              T xhat = (xr[j] - mu) * inv;
              if (gn->requires_grad) gn->grad[static_cast<size_t>(j)] += dyr[j] * xhat;
              if (bn->requires_grad) bn->grad[static_cast<size_t>(j)] += dyr[j];
            }
          }
          if (xn->requires_grad) {
            T sum_g = T(0), sum_gx = T(0);
            for (int64_t j = 0; j < d; ++j) {
              T g = dyr[j] * gv[j];
              T xhat = (xr[j] - mu) * inv;
              sum_g += g;
              sum_gx += g * xhat;
            }
            T* dxr = xn->grad.data() + r * d;
            T invd = T(1) / static_cast<T>(d);
            for (int64_t j = 0; j < d; ++j) {
              T g = dyr[j] * gv[j];
              T xhat = (xr[j] - mu) * inv;
              dxr[j] += inv * (g - sum_g * invd - xhat * sum_gx * invd);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// softmax over the last axis, max-subtracted

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  int64_t d = x.dim(-1);
  int64_t rows = x.numel() / d;
  std::vector<T> out(x.data().size());
  const T* xv = x.data().data();
  parallel_for(rows, [&](int64_t r) {
    const T* xr = xv + r * d;
    T* orow = out.data() + r * d;
    T m = xr[0];
    for (int64_t j = 1; j < d; ++j) m = std::max(m, xr[j]);
    T z = T(0);
    for (int64_t j = 0; j < d; ++j) {
      T e = std::exp(xr[j] - m);
      orow[j] = e;
      z += e;
    }
    T invz = T(1) / z;
    for (int64_t j = 0; j < d; ++j) orow[j] *= invz;
  });
  auto xn = x.node_ptr();
  return make_op<T>("softmax", x.shape(), std::move(out), {x},
                    [xn, rows, d](TensorNode<T>& self) {
                      xn->ensure_grad();
                      const T* dy = self.grad.data();
                      const T* y = self.data.data();
                      T* dx = xn->grad.data();
                      parallel_for(rows, [&](int64_t r) {
                        const T* yr = y + r * d;
                        const T* dyr = dy + r * d;
                        T dot = T(0);
                        for (int64_t j = 0; j < d; ++j) dot += dyr[j] * yr[j];
                        T* dxr = dx + r * d;
                        for (int64_t j = 0; j < d; ++j) dxr[j] += yr[j] * (dyr[j] - dot);
                      });
                    });
}

}  // namespace lvnet
