#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "lvnet/parallel.hpp"
#include "lvnet/tensor.hpp"

namespace lvnet {

// Pure data-movement ops. Each is a bijection (or zero-fill injection) on
// element positions; gradients are the inverse movement, so no arithmetic
// error is ever introduced.

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel())
    throw ConfigError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(new_shape) +
                      " changes element count");
  auto xn = x.node_ptr();
  std::vector<T> data = x.data();
  return make_op<T>("reshape", std::move(new_shape), std::move(data), {x},
                    [xn](TensorNode<T>& self) { accumulate_grad(xn, self.grad); });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& axes) {
  int r = x.rank();
  if (static_cast<int>(axes.size()) != r) throw ConfigError("permute: axes rank mismatch");
  Shape out_shape(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) out_shape[static_cast<size_t>(i)] = x.dim(axes[static_cast<size_t>(i)]);
  auto in_strides = row_major_strides(x.shape());
  // stride of output axis i in the input buffer
  std::vector<int64_t> gather(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) gather[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(axes[static_cast<size_t>(i)])];
  int64_t n = x.numel();
  std::vector<T> out(static_cast<size_t>(n));
  const T* xv = x.data().data();
  {
    std::vector<int64_t> coord(static_cast<size_t>(r), 0);
    int64_t src = 0;
    for (int64_t i = 0; i < n; ++i) {
      out[static_cast<size_t>(i)] = xv[static_cast<size_t>(src)];
      for (int ax = r; ax-- > 0;) {
        coord[static_cast<size_t>(ax)]++;
        src += gather[static_cast<size_t>(ax)];
        if (coord[static_cast<size_t>(ax)] < out_shape[static_cast<size_t>(ax)]) break;
        src -= gather[static_cast<size_t>(ax)] * out_shape[static_cast<size_t>(ax)];
        coord[static_cast<size_t>(ax)] = 0;
      }
    }
  }
  auto xn = x.node_ptr();
  return make_op<T>("permute", std::move(out_shape), std::move(out), {x},
                    [xn, gather, r](TensorNode<T>& self) {
                      xn->ensure_grad();
                      std::vector<int64_t> coord(static_cast<size_t>(r), 0);
                      int64_t src = 0;
                      int64_t n = static_cast<int64_t>(self.grad.size());
                      for (int64_t i = 0; i < n; ++i) {
                        xn->grad[static_cast<size_t>(src)] += self.grad[static_cast<size_t>(i)];
                        for (int ax = r; ax-- > 0;) {
                          coord[static_cast<size_t>(ax)]++;
                          src += gather[static_cast<size_t>(ax)];
                          if (coord[static_cast<size_t>(ax)] < self.shape[static_cast<size_t>(ax)]) break;
                          src -= gather[static_cast<size_t>(ax)] * self.shape[static_cast<size_t>(ax)];
                          coord[static_cast<size_t>(ax)] = 0;
                        }
                      }
                    });
}

// Cyclic shift per axis, np.roll semantics: positive shift moves content
// toward higher indices.
template <typename T>
Tensor<T> roll(const Tensor<T>& x, const std::vector<int64_t>& shifts) {
  int r = x.rank();
  if (static_cast<int>(shifts.size()) != r) throw ConfigError("roll: shifts rank mismatch");
  std::vector<int64_t> norm(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    int64_t d = x.dim(i);
    norm[static_cast<size_t>(i)] = ((shifts[static_cast<size_t>(i)] % d) + d) % d;
  }
  auto strides = row_major_strides(x.shape());
  int64_t n = x.numel();
  std::vector<T> out(static_cast<size_t>(n));
  const T* xv = x.data().data();
  auto src_index = [strides, norm, shp = x.shape(), r](int64_t dst) {
    int64_t src = 0;
    for (int i = 0; i < r; ++i) {
      int64_t c = (dst / strides[static_cast<size_t>(i)]) % shp[static_cast<size_t>(i)];
      int64_t sc = c - norm[static_cast<size_t>(i)];
      if (sc < 0) sc += shp[static_cast<size_t>(i)];
      src += sc * strides[static_cast<size_t>(i)];
    }
    return src;
  };
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = xv[static_cast<size_t>(src_index(i))];
  auto xn = x.node_ptr();
  return make_op<T>("roll", x.shape(), std::move(out), {x},
                    [xn, src_index, n](TensorNode<T>& self) {
                      xn->ensure_grad();
                      for (int64_t i = 0; i < n; ++i)
                        xn->grad[static_cast<size_t>(src_index(i))] += self.grad[static_cast<size_t>(i)];
                    });
}

template <typename T>
Tensor<T> concat(int axis, const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ConfigError("concat: no inputs");
  int r = parts[0].rank();
  if (axis < 0) axis += r;
  Shape out_shape = parts[0].shape();
  int64_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != r) throw ConfigError("concat: rank mismatch");
    for (int i = 0; i < r; ++i)
      if (i != axis && p.dim(i) != out_shape[static_cast<size_t>(i)])
        throw ConfigError("concat: shape mismatch on non-concat axis");
    total += p.dim(axis);
  }
  out_shape[static_cast<size_t>(axis)] = total;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[static_cast<size_t>(i)];
  for (int i = axis + 1; i < r; ++i) inner *= out_shape[static_cast<size_t>(i)];
  std::vector<T> out(static_cast<size_t>(shape_numel(out_shape)));
  int64_t offset = 0;
  for (const auto& p : parts) {
    int64_t len = p.dim(axis) * inner;
    const T* pv = p.data().data();
    for (int64_t o = 0; o < outer; ++o)
      std::copy(pv + o * len, pv + (o + 1) * len, out.data() + o * total * inner + offset);
    offset += len;
  }
  std::vector<std::shared_ptr<TensorNode<T>>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node_ptr());
  std::vector<int64_t> lens;
  for (const auto& p : parts) lens.push_back(p.dim(axis) * inner);
  return make_op<T>("concat", std::move(out_shape), std::move(out), parts,
                    [nodes, lens, outer, total, inner](TensorNode<T>& self) {
                      int64_t offset = 0;
                      for (size_t pi = 0; pi < nodes.size(); ++pi) {
                        auto& node = nodes[pi];
                        int64_t len = lens[pi];
                        if (node->requires_grad) {
                          node->ensure_grad();
                          for (int64_t o = 0; o < outer; ++o) {
                            const T* g = self.grad.data() + o * total * inner + offset;
                            T* dst = node->grad.data() + o * len;
                            for (int64_t i = 0; i < len; ++i) dst[i] += g[i];
                          }
                        }
                        offset += len;
                      }
                    });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, int64_t start, int64_t len) {
  int r = x.rank();
  if (axis < 0) axis += r;
  if (start < 0 || len <= 0 || start + len > x.dim(axis))
    throw ConfigError("slice: range out of bounds");
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(axis)] = len;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < r; ++i) inner *= x.dim(i);
  int64_t src_len = x.dim(axis) * inner;
  int64_t dst_len = len * inner;
  std::vector<T> out(static_cast<size_t>(outer * dst_len));
  const T* xv = x.data().data();
  for (int64_t o = 0; o < outer; ++o)
    std::copy(xv + o * src_len + start * inner, xv + o * src_len + (start + len) * inner,
              out.data() + o * dst_len);
  auto xn = x.node_ptr();
  return make_op<T>("slice", std::move(out_shape), std::move(out), {x},
                    [xn, outer, src_len, dst_len, start, inner](TensorNode<T>& self) {
                      xn->ensure_grad();
                      for (int64_t o = 0; o < outer; ++o) {
                        const T* g = self.grad.data() + o * dst_len;
                        T* dst = xn->grad.data() + o * src_len + start * inner;
                        for (int64_t i = 0; i < dst_len; ++i) dst[i] += g[i];
                      }
                    });
}

// space_to_channel on NCHW: each r x r spatial cell becomes r^2 channels;
// output channel index = c_in * r^2 + dy * r + dx.
template <typename T>
Tensor<T> space_to_channel(const Tensor<T>& x, int64_t r) {
  if (x.rank() != 4) throw ConfigError("space_to_channel: expected NCHW input");
  int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % r != 0 || W % r != 0)
    throw ConfigError("space_to_channel: spatial dims " + shape_str(x.shape()) +
                      " not divisible by " + std::to_string(r));
  int64_t Ho = H / r, Wo = W / r;
  Shape out_shape{N, C * r * r, Ho, Wo};
  std::vector<T> out(static_cast<size_t>(shape_numel(out_shape)));
  const T* xv = x.data().data();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t dy = 0; dy < r; ++dy)
        for (int64_t dx = 0; dx < r; ++dx) {
          int64_t co = c * r * r + dy * r + dx;
          for (int64_t y = 0; y < Ho; ++y) {
            const T* src = xv + ((n * C + c) * H + y * r + dy) * W + dx;
            T* dst = out.data() + ((n * C * r * r + co) * Ho + y) * Wo;
            for (int64_t xcol = 0; xcol < Wo; ++xcol) dst[xcol] = src[xcol * r];
          }
        }
  auto xn = x.node_ptr();
  return make_op<T>("space_to_channel", std::move(out_shape), std::move(out), {x},
                    [xn, N, C, H, W, r, Ho, Wo](TensorNode<T>& self) {
                      xn->ensure_grad();
                      for (int64_t n = 0; n < N; ++n)
                        for (int64_t c = 0; c < C; ++c)
                          for (int64_t dy = 0; dy < r; ++dy)
                            for (int64_t dx = 0; dx < r; ++dx) {
                              int64_t co = c * r * r + dy * r + dx;
                              for (int64_t y = 0; y < Ho; ++y) {
                                T* dst = xn->grad.data() + ((n * C + c) * H + y * r + dy) * W + dx;
                                const T* g =
                                    self.grad.data() + ((n * C * r * r + co) * Ho + y) * Wo;
                                for (int64_t xcol = 0; xcol < Wo; ++xcol) dst[xcol * r] += g[xcol];
                              }
                            }
                    });
}

// Exact inverse of space_to_channel.
template <typename T>
Tensor<T> channel_to_space(const Tensor<T>& x, int64_t r) {
  if (x.rank() != 4) throw ConfigError("channel_to_space: expected NCHW input");
  int64_t N = x.dim(0), C4 = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (C4 % (r * r) != 0)
    throw ConfigError("channel_to_space: channels not divisible by r^2");
  int64_t C = C4 / (r * r);
  Shape out_shape{N, C, H * r, W * r};
  std::vector<T> out(static_cast<size_t>(shape_numel(out_shape)));
  const T* xv = x.data().data();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t dy = 0; dy < r; ++dy)
        for (int64_t dx = 0; dx < r; ++dx) {
          int64_t ci = c * r * r + dy * r + dx;
          for (int64_t y = 0; y < H; ++y) {
            const T* src = xv + ((n * C4 + ci) * H + y) * W;
            T* dst = out.data() + ((n * C + c) * H * r + y * r + dy) * W * r + dx;
            for (int64_t xcol = 0; xcol < W; ++xcol) dst[xcol * r] = src[xcol];
          }
        }
  auto xn = x.node_ptr();
  return make_op<T>("channel_to_space", std::move(out_shape), std::move(out), {x},
                    [xn, N, C, C4, H, W, r](TensorNode<T>& self) {
                      xn->ensure_grad();
                      for (int64_t n = 0; n < N; ++n)
                        for (int64_t c = 0; c < C; ++c)
                          for (int64_t dy = 0; dy < r; ++dy)
                            for (int64_t dx = 0; dx < r; ++dx) {
                              int64_t ci = c * r * r + dy * r + dx;
                              for (int64_t y = 0; y < H; ++y) {
                                T* dst = xn->grad.data() + ((n * C4 + ci) * H + y) * W;
                                const T* g = self.grad.data() +
                                             ((n * C + c) * H * r + y * r + dy) * W * r + dx;
                                for (int64_t xcol = 0; xcol < W; ++xcol) dst[xcol] += g[xcol * r];
                              }
                            }
                    });
}

// Same cell rearrangement for channel-last tensors [..., H, W, C]:
// input channel index c_out * r^2 + dy * r + dx maps to pixel (dy,dx),
// channel c_out of the upscaled grid.
template <typename T>
Tensor<T> channel_to_space_lastdim(const Tensor<T>& x, int64_t r) {
  if (x.rank() < 3) throw ConfigError("channel_to_space_lastdim: rank must be >= 3");
  int64_t C4 = x.dim(-1), W = x.dim(-2), H = x.dim(-3);
  if (C4 % (r * r) != 0) throw ConfigError("channel_to_space_lastdim: channels not divisible by r^2");
  int64_t C = C4 / (r * r);
  int64_t outer = x.numel() / (H * W * C4);
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 3] = H * r;
  out_shape[out_shape.size() - 2] = W * r;
  out_shape[out_shape.size() - 1] = C;
  std::vector<T> out(static_cast<size_t>(x.numel()));
  const T* xv = x.data().data();
  for (int64_t o = 0; o < outer; ++o) {
    const T* xp = xv + o * H * W * C4;
    T* op = out.data() + o * H * W * C4;
    for (int64_t y = 0; y < H; ++y)
      for (int64_t xc = 0; xc < W; ++xc) {
        const T* cell = xp + (y * W + xc) * C4;
        for (int64_t dy = 0; dy < r; ++dy)
          for (int64_t dx = 0; dx < r; ++dx) {
            T* dst = op + (((y * r + dy) * W * r) + (xc * r + dx)) * C;
            for (int64_t c = 0; c < C; ++c) dst[c] = cell[c * r * r + dy * r + dx];
          }
      }
  }
  auto xn = x.node_ptr();
  return make_op<T>("channel_to_space_lastdim", std::move(out_shape), std::move(out), {x},
                    [xn, outer, H, W, C, C4, r](TensorNode<T>& self) {
                      xn->ensure_grad();
                      for (int64_t o = 0; o < outer; ++o) {
                        T* xp = xn->grad.data() + o * H * W * C4;
                        const T* gp = self.grad.data() + o * H * W * C4;
                        for (int64_t y = 0; y < H; ++y)
                          for (int64_t xc = 0; xc < W; ++xc) {
                            T* cell = xp + (y * W + xc) * C4;
                            for (int64_t dy = 0; dy < r; ++dy)
                              for (int64_t dx = 0; dx < r; ++dx) {
                                const T* g = gp + (((y * r + dy) * W * r) + (xc * r + dx)) * C;
                                for (int64_t c = 0; c < C; ++c) cell[c * r * r + dy * r + dx] += g[c];
                              }
                          }
                      }
                    });
}

// Inverse of channel_to_space_lastdim; used by patch merging.
template <typename T>
Tensor<T> space_to_channel_lastdim(const Tensor<T>& x, int64_t r) {
  if (x.rank() < 3) throw ConfigError("space_to_channel_lastdim: rank must be >= 3");
  int64_t C = x.dim(-1), W = x.dim(-2), H = x.dim(-3);
  if (H % r != 0 || W % r != 0)
    throw ConfigError("space_to_channel_lastdim: spatial dims not divisible by " +
                      std::to_string(r));
  int64_t Ho = H / r, Wo = W / r, C4 = C * r * r;
  int64_t outer = x.numel() / (H * W * C);
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 3] = Ho;
  out_shape[out_shape.size() - 2] = Wo;
  out_shape[out_shape.size() - 1] = C4;
  std::vector<T> out(static_cast<size_t>(x.numel()));
  const T* xv = x.data().data();
  for (int64_t o = 0; o < outer; ++o) {
    const T* xp = xv + o * H * W * C;
    T* op = out.data() + o * H * W * C;
    for (int64_t y = 0; y < Ho; ++y)
      for (int64_t xc = 0; xc < Wo; ++xc) {
        T* cell = op + (y * Wo + xc) * C4;
        for (int64_t dy = 0; dy < r; ++dy)
          for (int64_t dx = 0; dx < r; ++dx) {
            const T* src = xp + (((y * r + dy) * W) + (xc * r + dx)) * C;
            for (int64_t c = 0; c < C; ++c) cell[c * r * r + dy * r + dx] = src[c];
          }
      }
  }
  auto xn = x.node_ptr();
  return make_op<T>("space_to_channel_lastdim", std::move(out_shape), std::move(out), {x},
                    [xn, outer, Ho, Wo, W, C, C4, r](TensorNode<T>& self) {
                      xn->ensure_grad();
                      for (int64_t o = 0; o < outer; ++o) {
                        T* xp = xn->grad.data() + o * Ho * Wo * C4;
                        const T* gp = self.grad.data() + o * Ho * Wo * C4;
                        for (int64_t y = 0; y < Ho; ++y)
                          for (int64_t xc = 0; xc < Wo; ++xc) {
                            const T* cell = gp + (y * Wo + xc) * C4;
                            for (int64_t dy = 0; dy < r; ++dy)
                              for (int64_t dx = 0; dx < r; ++dx) {
                                T* dst = xp + (((y * r + dy) * W) + (xc * r + dx)) * C;
                                for (int64_t c = 0; c < C; ++c) dst[c] += cell[c * r * r + dy * r + dx];
                              }
                          }
                      }
                    });
}

// [N,T,H,W,C] -> [nWindows, wT*wH*wW, C]; windows ordered (n, tw, hw, ww)
// row-major, tokens within a window ordered (dt, dy, dx) row-major.
template <typename T>
Tensor<T> window_partition(const Tensor<T>& x, int64_t wt, int64_t wh, int64_t ww) {
  if (x.rank() != 5) throw ConfigError("window_partition: expected [N,T,H,W,C]");
  int64_t N = x.dim(0), Tt = x.dim(1), H = x.dim(2), W = x.dim(3), C = x.dim(4);
  if (Tt % wt != 0 || H % wh != 0 || W % ww != 0)
    throw ConfigError("window_partition: " + shape_str(x.shape()) + " not divisible by window (" +
                      std::to_string(wt) + "," + std::to_string(wh) + "," + std::to_string(ww) + ")");
  int64_t nt = Tt / wt, nh = H / wh, nw = W / ww;
  int64_t n_windows = N * nt * nh * nw;
  int64_t L = wt * wh * ww;
  std::vector<T> out(static_cast<size_t>(n_windows * L * C));
  const T* xv = x.data().data();
  parallel_for(n_windows, [&](int64_t widx) {
    int64_t rem = widx;
    int64_t wwi = rem % nw;
    rem /= nw;
    int64_t hhi = rem % nh;
    rem /= nh;
    int64_t tti = rem % nt;
    int64_t n = rem / nt;
    T* dst = out.data() + widx * L * C;
    for (int64_t dt = 0; dt < wt; ++dt)
      for (int64_t dy = 0; dy < wh; ++dy) {
        const T* src =
            xv + (((n * Tt + tti * wt + dt) * H + hhi * wh + dy) * W + wwi * ww) * C;
        T* drow = dst + ((dt * wh + dy) * ww) * C;
        std::copy(src, src + ww * C, drow);
      }
  });
  auto xn = x.node_ptr();
  return make_op<T>("window_partition", Shape{n_windows, L, C}, std::move(out), {x},
                    [xn, N, Tt, H, W, C, wt, wh, ww, nt, nh, nw, L](TensorNode<T>& self) {
                      xn->ensure_grad();
                      int64_t n_windows = N * nt * nh * nw;
                      for (int64_t widx = 0; widx < n_windows; ++widx) {
                        int64_t rem = widx;
                        int64_t wwi = rem % nw;
                        rem /= nw;
                        int64_t hhi = rem % nh;
                        rem /= nh;
                        int64_t tti = rem % nt;
                        int64_t n = rem / nt;
                        const T* g = self.grad.data() + widx * L * C;
                        for (int64_t dt = 0; dt < wt; ++dt)
                          for (int64_t dy = 0; dy < wh; ++dy) {
                            T* dst = xn->grad.data() +
                                     (((n * Tt + tti * wt + dt) * H + hhi * wh + dy) * W +
                                      wwi * ww) *
                                         C;
                            const T* grow = g + ((dt * wh + dy) * ww) * C;
                            for (int64_t i = 0; i < ww * C; ++i) dst[i] += grow[i];
                          }
                      }
                    });
}

// Exact inverse of window_partition for the given full dims.
template <typename T>
Tensor<T> window_reverse(const Tensor<T>& x, int64_t wt, int64_t wh, int64_t ww, int64_t N,
                         int64_t Tt, int64_t H, int64_t W) {
  if (x.rank() != 3) throw ConfigError("window_reverse: expected [nWindows, L, C]");
  int64_t C = x.dim(2);
  int64_t nt = Tt / wt, nh = H / wh, nw = W / ww;
  int64_t L = wt * wh * ww;
  if (x.dim(0) != N * nt * nh * nw || x.dim(1) != L)
    throw ConfigError("window_reverse: window layout mismatch for " + shape_str(x.shape()));
  std::vector<T> out(static_cast<size_t>(N * Tt * H * W * C));
  const T* xv = x.data().data();
  int64_t n_windows = N * nt * nh * nw;
  parallel_for(n_windows, [&](int64_t widx) {
    int64_t rem = widx;
    int64_t wwi = rem % nw;
    rem /= nw;
    int64_t hhi = rem % nh;
    rem /= nh;
    int64_t tti = rem % nt;
    int64_t n = rem / nt;
    const T* src = xv + widx * L * C;
    for (int64_t dt = 0; dt < wt; ++dt)
      for (int64_t dy = 0; dy < wh; ++dy) {
        T* dst = out.data() +
                 (((n * Tt + tti * wt + dt) * H + hhi * wh + dy) * W + wwi * ww) * C;
        const T* srow = src + ((dt * wh + dy) * ww) * C;
        std::copy(srow, srow + ww * C, dst);
      }
  });
  auto xn = x.node_ptr();
  return make_op<T>("window_reverse", Shape{N, Tt, H, W, C}, std::move(out), {x},
                    [xn, N, Tt, H, W, C, wt, wh, ww, nt, nh, nw, L](TensorNode<T>& self) {
                      xn->ensure_grad();
                      int64_t n_windows = N * nt * nh * nw;
                      for (int64_t widx = 0; widx < n_windows; ++widx) {
                        int64_t rem = widx;
                        int64_t wwi = rem % nw;
                        rem /= nw;
                        int64_t hhi = rem % nh;
                        rem /= nh;
                        int64_t tti = rem % nt;
                        int64_t n = rem / nt;
                        T* dst = xn->grad.data() + widx * L * C;
                        for (int64_t dt = 0; dt < wt; ++dt)
                          for (int64_t dy = 0; dy < wh; ++dy) {
                            const T* g = self.grad.data() +
                                         (((n * Tt + tti * wt + dt) * H + hhi * wh + dy) * W +
                                          wwi * ww) *
                                             C;
                            T* drow = dst + ((dt * wh + dy) * ww) * C;
                            for (int64_t i = 0; i < ww * C; ++i) drow[i] += g[i];
                          }
                      }
                    });
}

// Zero-pad bottom/right of the H,W axes of a [N,T,H,W,C] tensor.
template <typename T>
Tensor<T> pad_hw(const Tensor<T>& x, int64_t Hp, int64_t Wp) {
  if (x.rank() != 5) throw ConfigError("pad_hw: expected [N,T,H,W,C]");
  int64_t N = x.dim(0), Tt = x.dim(1), H = x.dim(2), W = x.dim(3), C = x.dim(4);
  if (Hp < H || Wp < W) throw ConfigError("pad_hw: target smaller than input");
  if (Hp == H && Wp == W) {
    auto xn = x.node_ptr();
    std::vector<T> data = x.data();
    return make_op<T>("pad_hw", x.shape(), std::move(data), {x},
                      [xn](TensorNode<T>& self) { accumulate_grad(xn, self.grad); });
  }
  Shape out_shape{N, Tt, Hp, Wp, C};
  std::vector<T> out(static_cast<size_t>(shape_numel(out_shape)), T(0));
  const T* xv = x.data().data();
  for (int64_t nt = 0; nt < N * Tt; ++nt)
    for (int64_t y = 0; y < H; ++y) {
      const T* src = xv + (nt * H + y) * W * C;
      T* dst = out.data() + (nt * Hp + y) * Wp * C;
      std::copy(src, src + W * C, dst);
    }
  auto xn = x.node_ptr();
  return make_op<T>("pad_hw", std::move(out_shape), std::move(out), {x},
                    [xn, N, Tt, H, W, C, Hp, Wp](TensorNode<T>& self) {
                      xn->ensure_grad();
                      for (int64_t nt = 0; nt < N * Tt; ++nt)
                        for (int64_t y = 0; y < H; ++y) {
                          const T* g = self.grad.data() + (nt * Hp + y) * Wp * C;
                          T* dst = xn->grad.data() + (nt * H + y) * W * C;
                          for (int64_t i = 0; i < W * C; ++i) dst[i] += g[i];
                        }
                    });
}

// Keep the top-left H x W region of a [N,T,Hp,Wp,C] tensor.
template <typename T>
Tensor<T> crop_hw(const Tensor<T>& x, int64_t H, int64_t W) {
  if (x.rank() != 5) throw ConfigError("crop_hw: expected [N,T,H,W,C]");
  int64_t N = x.dim(0), Tt = x.dim(1), Hp = x.dim(2), Wp = x.dim(3), C = x.dim(4);
  if (H > Hp || W > Wp) throw ConfigError("crop_hw: target larger than input");
  if (H == Hp && W == Wp) {
    auto xn = x.node_ptr();
    std::vector<T> data = x.data();
    return make_op<T>("crop_hw", x.shape(), std::move(data), {x},
                      [xn](TensorNode<T>& self) { accumulate_grad(xn, self.grad); });
  }
  Shape out_shape{N, Tt, H, W, C};
  std::vector<T> out(static_cast<size_t>(shape_numel(out_shape)));
  const T* xv = x.data().data();
  for (int64_t nt = 0; nt < N * Tt; ++nt)
    for (int64_t y = 0; y < H; ++y) {
      const T* src = xv + (nt * Hp + y) * Wp * C;
      T* dst = out.data() + (nt * H + y) * W * C;
      std::copy(src, src + W * C, dst);
    }
  auto xn = x.node_ptr();
  return make_op<T>("crop_hw", std::move(out_shape), std::move(out), {x},
                    [xn, N, Tt, H, W, C, Hp, Wp](TensorNode<T>& self) {
                      xn->ensure_grad();
                      for (int64_t nt = 0; nt < N * Tt; ++nt)
                        for (int64_t y = 0; y < H; ++y) {
                          const T* g = self.grad.data() + (nt * H + y) * W * C;
                          T* dst = xn->grad.data() + (nt * Hp + y) * Wp * C;
                          for (int64_t i = 0; i < W * C; ++i) dst[i] += g[i];
                        }
                    });
}

// 2x bilinear upsampling of the H,W axes of [N,T,H,W,C] (half-pixel
// centers, edges clamped). A fixed linear map, so the gradient is its
// transpose.
template <typename T>
Tensor<T> bilinear_up2x(const Tensor<T>& x) {
  if (x.rank() != 5) throw ConfigError("bilinear_up2x: expected [N,T,H,W,C]");
  int64_t N = x.dim(0), Tt = x.dim(1), H = x.dim(2), W = x.dim(3), C = x.dim(4);
  int64_t Ho = 2 * H, Wo = 2 * W;
  struct Tap {
    int64_t i0, i1;
    T w0, w1;
  };
  auto make_taps = [](int64_t in, int64_t out) {
    std::vector<Tap> taps(static_cast<size_t>(out));
    for (int64_t o = 0; o < out; ++o) {
      double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
      double fl = std::floor(src);
      int64_t i0 = static_cast<int64_t>(fl);
      double frac = src - fl;
      int64_t i1 = i0 + 1;
      i0 = std::clamp<int64_t>(i0, 0, in - 1);
      i1 = std::clamp<int64_t>(i1, 0, in - 1);
      taps[static_cast<size_t>(o)] = {i0, i1, static_cast<T>(1.0 - frac), static_cast<T>(frac)};
    }
    return taps;
  };
  auto ytaps = std::make_shared<std::vector<Tap>>(make_taps(H, Ho));
  auto xtaps = std::make_shared<std::vector<Tap>>(make_taps(W, Wo));
  Shape out_shape{N, Tt, Ho, Wo, C};
  std::vector<T> out(static_cast<size_t>(shape_numel(out_shape)));
  const T* xv = x.data().data();
  parallel_for(N * Tt, [&](int64_t nt) {
    const T* xp = xv + nt * H * W * C;
    T* op = out.data() + nt * Ho * Wo * C;
    for (int64_t oy = 0; oy < Ho; ++oy) {
      const Tap& ty = (*ytaps)[static_cast<size_t>(oy)];
      for (int64_t ox = 0; ox < Wo; ++ox) {
        const Tap& tx = (*xtaps)[static_cast<size_t>(ox)];
        const T* p00 = xp + (ty.i0 * W + tx.i0) * C;
        const T* p01 = xp + (ty.i0 * W + tx.i1) * C;
        const T* p10 = xp + (ty.i1 * W + tx.i0) * C;
        const T* p11 = xp + (ty.i1 * W + tx.i1) * C;
        T* dst = op + (oy * Wo + ox) * C;
        for (int64_t c = 0; c < C; ++c)
          dst[c] = ty.w0 * (tx.w0 * p00[c] + tx.w1 * p01[c]) +
                   ty.w1 * (tx.w0 * p10[c] + tx.w1 * p11[c]);
      }
    }
  });
  auto xn = x.node_ptr();
  return make_op<T>("bilinear_up2x", std::move(out_shape), std::move(out), {x},
                    [xn, N, Tt, H, W, C, Ho, Wo, ytaps, xtaps](TensorNode<T>& self) {
                      xn->ensure_grad();
                      parallel_for(N * Tt, [&](int64_t nt) {
                        T* xp = xn->grad.data() + nt * H * W * C;
                        const T* gp = self.grad.data() + nt * Ho * Wo * C;
                        for (int64_t oy = 0; oy < Ho; ++oy) {
                          const Tap& ty = (*ytaps)[static_cast<size_t>(oy)];
                          for (int64_t ox = 0; ox < Wo; ++ox) {
                            const Tap& tx = (*xtaps)[static_cast<size_t>(ox)];
                            const T* g = gp + (oy * Wo + ox) * C;
                            T* p00 = xp + (ty.i0 * W + tx.i0) * C;
                            T* p01 = xp + (ty.i0 * W + tx.i1) * C;
                            T* p10 = xp + (ty.i1 * W + tx.i0) * C;
                            T* p11 = xp + (ty.i1 * W + tx.i1) * C;
                            for (int64_t c = 0; c < C; ++c) {
                              p00[c] += ty.w0 * tx.w0 * g[c];
                              p01[c] += ty.w0 * tx.w1 * g[c];
                              p10[c] += ty.w1 * tx.w0 * g[c];
                              p11[c] += ty.w1 * tx.w1 * g[c];
                            }
                          }
                        }
                      });
                    });
}

}  // namespace lvnet
