#pragma once

#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "lvnet/conv_frontend.hpp"
#include "lvnet/ops.hpp"
#include "lvnet/param_store.hpp"
#include "lvnet/rearrange.hpp"

namespace lvnet {

enum class DecoderBlockKind { vst, conv2d, conv3d };
enum class UpsamplerKind { patch_expand, bilinear, transconv };

// U-shaped video swin transformer: 4 encoder stages at dims {C,2C,4C,8C}
// with patch merging between them, and a mirrored decoder with patch
// expanding and concat+projection skip fusion.
struct VSTConfig {
  int embed_dim = 24;
  std::array<int, 4> depths{2, 2, 2, 1};
  int window_t = 2;
  int window_h = 7;
  int window_w = 7;
  int head_dim = 8;
  double mlp_ratio = 4.0;
  DecoderBlockKind decoder_block = DecoderBlockKind::vst;
  UpsamplerKind upsampler = UpsamplerKind::patch_expand;

  int stage_dim(int stage) const { return embed_dim << stage; }
};

// Additive relative-position bias, factorized into a temporal table
// [(2wT-1), heads] plus a spatial table [(2wH-1)(2wW-1), heads]. The
// materialized bias is still a pure function of (dt,dy,dx); factorizing
// keeps the learnable size independent of wT at the precision the
// parameter tables are reported in.
template <typename T>
struct RelPosBias {
  Tensor<T> temporal;  // [(2wt-1), heads]
  Tensor<T> spatial;   // [(2wh-1)*(2ww-1), heads]
  std::shared_ptr<std::vector<int64_t>> t_idx, s_idx;  // per token pair, L*L
  int64_t window_tokens = 0;
  int heads = 0;

  static RelPosBias build(ParamBuilder<T>& pb, const std::string& name, int64_t wt, int64_t wh,
                          int64_t ww, int heads) {
    RelPosBias b;
    b.heads = heads;
    b.window_tokens = wt * wh * ww;
    b.temporal = pb.zeros(name + ".temporal", {2 * wt - 1, heads});
    b.spatial = pb.zeros(name + ".spatial", {(2 * wh - 1) * (2 * ww - 1), heads});
    int64_t L = b.window_tokens;
    b.t_idx = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(L * L));
    b.s_idx = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(L * L));
    auto coord = [&](int64_t i) {
      int64_t dx = i % ww, dy = (i / ww) % wh, dt = i / (wh * ww);
      return std::array<int64_t, 3>{dt, dy, dx};
    };
    for (int64_t i = 0; i < L; ++i)
      for (int64_t j = 0; j < L; ++j) {
        auto a = coord(i), c = coord(j);
        (*b.t_idx)[static_cast<size_t>(i * L + j)] = (a[0] - c[0]) + (wt - 1);
        (*b.s_idx)[static_cast<size_t>(i * L + j)] =
            ((a[1] - c[1]) + (wh - 1)) * (2 * ww - 1) + ((a[2] - c[2]) + (ww - 1));
      }
    return b;
  }

  // [heads, L, L] bias, differentiable w.r.t. both tables.
  Tensor<T> materialize() const {
    int64_t L = window_tokens;
    int h = heads;
    std::vector<T> out(static_cast<size_t>(h * L * L));
    const auto& tv = temporal.data();
    const auto& sv = spatial.data();
    for (int hh = 0; hh < h; ++hh)
      for (int64_t ij = 0; ij < L * L; ++ij)
        out[static_cast<size_t>(hh * L * L + ij)] =
            tv[static_cast<size_t>((*t_idx)[static_cast<size_t>(ij)] * h + hh)] +
            sv[static_cast<size_t>((*s_idx)[static_cast<size_t>(ij)] * h + hh)];
    auto tn = temporal.node_ptr();
    auto sn = spatial.node_ptr();
    auto ti = t_idx;
    auto si = s_idx;
    return make_op<T>("relpos_bias", Shape{h, L, L}, std::move(out), {temporal, spatial},
                      [tn, sn, ti, si, L, h](TensorNode<T>& self) {
                        if (tn->requires_grad) tn->ensure_grad();
                        if (sn->requires_grad) sn->ensure_grad();
                        for (int hh = 0; hh < h; ++hh)
                          for (int64_t ij = 0; ij < L * L; ++ij) {
                            T g = self.grad[static_cast<size_t>(hh * L * L + ij)];
                            if (tn->requires_grad)
                              tn->grad[static_cast<size_t>((*ti)[static_cast<size_t>(ij)] * h + hh)] += g;
                            if (sn->requires_grad)
                              sn->grad[static_cast<size_t>((*si)[static_cast<size_t>(ij)] * h + hh)] += g;
                          }
                      });
  }
};

// Additive attention masks for shifted windows and padded grids. Token
// pairs from non-adjacent regions (or valid/pad pairs) get -1e4. Pure
// function of the layout, cached per model since training reuses one
// geometry.
namespace detail {

struct MaskKey {
  int64_t t, hp, wp, h, w, wt, wh, ww, st, sy, sx;
  auto operator<=>(const MaskKey&) const = default;
};

// Region id per token of the rolled, padded grid; -1-style distinct id for
// padding is folded in as id 27.
inline int region_id(int64_t i, int64_t extent, int64_t window, int64_t shift) {
  if (shift == 0) return 0;
  if (i < extent - window) return 0;
  if (i < extent - shift) return 1;
  return 2;
}

}  // namespace detail

template <typename T>
class MaskCache {
 public:
  // Returns undefined tensor when no mask is needed (no shift, no padding).
  Tensor<T> get(int64_t Tt, int64_t Hp, int64_t Wp, int64_t H, int64_t W, int64_t wt, int64_t wh,
                int64_t ww, int64_t st, int64_t sy, int64_t sx) {
    bool padded = (Hp != H) || (Wp != W);
    bool shifted = st || sy || sx;
    if (!padded && !shifted) return {};
    detail::MaskKey key{Tt, Hp, Wp, H, W, wt, wh, ww, st, sy, sx};
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;

    int64_t nt = Tt / wt, nh = Hp / wh, nw = Wp / ww;
    int64_t L = wt * wh * ww;
    // region ids on the rolled grid; original coordinate recovers padding
    std::vector<int> ids(static_cast<size_t>(Tt * Hp * Wp));
    for (int64_t t = 0; t < Tt; ++t)
      for (int64_t y = 0; y < Hp; ++y)
        for (int64_t x = 0; x < Wp; ++x) {
          int64_t oy = (y + sy) % Hp;
          int64_t ox = (x + sx) % Wp;
          int id;
          if (oy >= H || ox >= W) {
            id = 27;  // padding region
          } else {
            id = (detail::region_id(t, Tt, wt, st) * 3 + detail::region_id(y, Hp, wh, sy)) * 3 +
                 detail::region_id(x, Wp, ww, sx);
          }
          ids[static_cast<size_t>((t * Hp + y) * Wp + x)] = id;
        }
    int64_t n_windows = nt * nh * nw;
    std::vector<T> mask(static_cast<size_t>(n_windows * L * L), T(0));
    std::vector<int> wid(static_cast<size_t>(L));
    for (int64_t widx = 0; widx < n_windows; ++widx) {
      int64_t rem = widx;
      int64_t wwi = rem % nw;
      rem /= nw;
      int64_t hhi = rem % nh;
      int64_t tti = rem / nh;
      int64_t k = 0;
      for (int64_t dt = 0; dt < wt; ++dt)
        for (int64_t dy = 0; dy < wh; ++dy)
          for (int64_t dx = 0; dx < ww; ++dx, ++k)
            wid[static_cast<size_t>(k)] = ids[static_cast<size_t>(
                ((tti * wt + dt) * Hp + hhi * wh + dy) * Wp + wwi * ww + dx)];
      T* m = mask.data() + widx * L * L;
      for (int64_t i = 0; i < L; ++i)
        for (int64_t j = 0; j < L; ++j)
          if (wid[static_cast<size_t>(i)] != wid[static_cast<size_t>(j)])
            m[i * L + j] = T(-1e4);
    }
    auto tensor = Tensor<T>::from_vector({n_windows, L, L}, std::move(mask));
    cache_.emplace(key, tensor);
    return tensor;
  }

 private:
  std::map<detail::MaskKey, Tensor<T>> cache_;
};

template <typename T>
struct WindowAttention {
  Tensor<T> qkv_w, qkv_b, proj_w, proj_b;
  RelPosBias<T> relpos;
  int heads = 0;
  int64_t head_dim = 0;

  static WindowAttention build(ParamBuilder<T>& pb, const std::string& name, int64_t dim,
                               int heads, int64_t head_dim, int64_t wt, int64_t wh, int64_t ww) {
    WindowAttention a;
    a.heads = heads;
    a.head_dim = head_dim;
    a.qkv_w = pb.trunc_normal(name + ".qkv.weight", {dim, 3 * dim});
    a.qkv_b = pb.zeros(name + ".qkv.bias", {3 * dim});
    a.proj_w = pb.trunc_normal(name + ".proj.weight", {dim, dim});
    a.proj_b = pb.zeros(name + ".proj.bias", {dim});
    a.relpos = RelPosBias<T>::build(pb, name + ".relpos", wt, wh, ww, heads);
    return a;
  }

  // windows: [nW, L, D]; mask (optional): [nW_per_item, L, L].
  Tensor<T> operator()(const Tensor<T>& windows, const Tensor<T>& mask) const {
    int64_t nW = windows.dim(0), L = windows.dim(1), D = windows.dim(2);
    auto qkv = affine(windows, qkv_w, qkv_b);  // [nW, L, 3D]
    auto split_head = [&](int part) {
      auto s = slice(qkv, 2, part * D, D);
      return permute(reshape(s, {nW, L, heads, head_dim}), {0, 2, 1, 3});  // [nW,h,L,hd]
    };
    auto q = scale(split_head(0), static_cast<T>(1.0 / std::sqrt(static_cast<double>(head_dim))));
    auto k = split_head(1);
    auto v = split_head(2);
    auto scores = matmul(q, k, true);  // [nW, h, L, L]
    scores = add(scores, relpos.materialize());
    if (mask.defined()) {
      int64_t n_per = mask.dim(0);
      int64_t items = nW / n_per;
      auto grouped = reshape(scores, {items, n_per, heads, L, L});
      auto m = reshape(mask, {n_per, int64_t{1}, L, L});
      scores = reshape(add(grouped, m), {nW, heads, L, L});
    }
    auto attn = softmax_lastdim(scores);
    auto out = matmul(attn, v);  // [nW, h, L, hd]
    out = reshape(permute(out, {0, 2, 1, 3}), {nW, L, D});
    return affine(out, proj_w, proj_b);
  }
};

template <typename T>
struct LayerNormParams {
  Tensor<T> gamma, beta;

  static LayerNormParams build(ParamBuilder<T>& pb, const std::string& name, int64_t dim) {
    return {pb.ones(name + ".gamma", {dim}), pb.zeros(name + ".beta", {dim})};
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    return layer_norm(x, gamma, beta, static_cast<T>(1e-5));
  }
};

// One video swin block: pre-norm windowed attention (cyclic shift on
// alternating blocks) and a pre-norm MLP, both residual. Grids that do not
// fill whole windows are zero-padded and the pad tokens masked out; an axis
// that fits a single window is not shifted, matching the cited VST design.
template <typename T>
struct VstBlock {
  LayerNormParams<T> norm1, norm2;
  WindowAttention<T> attn;
  Tensor<T> fc1_w, fc1_b, fc2_w, fc2_b;
  int64_t wt, wh, ww;
  bool shifted = false;

  static VstBlock build(ParamBuilder<T>& pb, const std::string& name, int64_t dim, int heads,
                        int64_t head_dim, int64_t wt, int64_t wh, int64_t ww, double mlp_ratio,
                        bool shifted) {
    VstBlock b;
    b.wt = wt;
    b.wh = wh;
    b.ww = ww;
    b.shifted = shifted;
    b.norm1 = LayerNormParams<T>::build(pb, name + ".norm1", dim);
    b.attn = WindowAttention<T>::build(pb, name + ".attn", dim, heads, head_dim, wt, wh, ww);
    b.norm2 = LayerNormParams<T>::build(pb, name + ".norm2", dim);
    int64_t hidden = static_cast<int64_t>(mlp_ratio * static_cast<double>(dim));
    b.fc1_w = pb.trunc_normal(name + ".mlp.fc1.weight", {dim, hidden});
    b.fc1_b = pb.zeros(name + ".mlp.fc1.bias", {hidden});
    b.fc2_w = pb.trunc_normal(name + ".mlp.fc2.weight", {hidden, dim});
    b.fc2_b = pb.zeros(name + ".mlp.fc2.bias", {dim});
    return b;
  }

  // pad -> cyclic shift -> window attention (+mask) -> reverse; no norm,
  // residual or MLP. Split out so oracle tests can drive the exact path.
  Tensor<T> attention_branch(const Tensor<T>& x, MaskCache<T>& masks) const {
    int64_t N = x.dim(0), Tt = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (Tt % wt != 0)
      throw ConfigError("vst_block: temporal extent " + std::to_string(Tt) +
                        " not divisible by window_t " + std::to_string(wt));
    int64_t Hp = (H + wh - 1) / wh * wh;
    int64_t Wp = (W + ww - 1) / ww * ww;
    // no shift along an axis covered by a single window
    int64_t st = (shifted && Tt > wt) ? wt / 2 : 0;
    int64_t sy = (shifted && Hp > wh) ? wh / 2 : 0;
    int64_t sx = (shifted && Wp > ww) ? ww / 2 : 0;

    auto h = pad_hw(x, Hp, Wp);
    if (st || sy || sx) h = roll(h, {0, -st, -sy, -sx, 0});
    auto windows = window_partition(h, wt, wh, ww);
    auto mask = masks.get(Tt, Hp, Wp, H, W, wt, wh, ww, st, sy, sx);
    auto attended = attn(windows, mask);
    h = window_reverse(attended, wt, wh, ww, N, Tt, Hp, Wp);
    if (st || sy || sx) h = roll(h, {0, st, sy, sx, 0});
    return crop_hw(h, H, W);
  }

  Tensor<T> operator()(const Tensor<T>& x, MaskCache<T>& masks) const {
    auto mid = add(x, attention_branch(norm1(x), masks));
    auto m = norm2(mid);
    m = affine(gelu(affine(m, fc1_w, fc1_b)), fc2_w, fc2_b);
    return add(mid, m);
  }
};

// Concat 2x2 spatial neighbors -> norm(4D) -> linear 4D -> 2D (no bias).
template <typename T>
struct PatchMerge {
  LayerNormParams<T> norm;
  Tensor<T> reduction;

  static PatchMerge build(ParamBuilder<T>& pb, const std::string& name, int64_t dim) {
    PatchMerge m;
    m.norm = LayerNormParams<T>::build(pb, name + ".norm", 4 * dim);
    m.reduction = pb.trunc_normal(name + ".reduction.weight", {4 * dim, 2 * dim});
    return m;
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    if (x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0)
      throw ConfigError("patch_merge: odd spatial dims " + shape_str(x.shape()));
    return affine(norm(space_to_channel_lastdim(x, 2)), reduction);
  }
};

// Inverse resampler: linear D -> 2D, rearrange the 4 cell slots into a 2x2
// block of D/2 channels, then norm. The ablated alternatives share the
// output contract.
template <typename T>
struct PatchExpand {
  UpsamplerKind kind = UpsamplerKind::patch_expand;
  Tensor<T> weight, bias;  // bias only for bilinear / transconv
  LayerNormParams<T> norm;

  static PatchExpand build(ParamBuilder<T>& pb, const std::string& name, int64_t dim,
                           UpsamplerKind kind) {
    PatchExpand e;
    e.kind = kind;
    switch (kind) {
      case UpsamplerKind::patch_expand:
        e.weight = pb.trunc_normal(name + ".weight", {dim, 2 * dim});
        e.norm = LayerNormParams<T>::build(pb, name + ".norm", dim / 2);
        break;
      case UpsamplerKind::bilinear:
        e.weight = pb.trunc_normal(name + ".weight", {dim, dim / 2});
        e.bias = pb.zeros(name + ".bias", {dim / 2});
        break;
      case UpsamplerKind::transconv:
        // 2x2 stride-2 transposed conv == linear D -> 4*(D/2) + cell
        // scatter, with one bias per output channel
        e.weight = pb.trunc_normal(name + ".weight", {dim, 2 * dim});
        e.bias = pb.zeros(name + ".bias", {dim / 2});
        break;
    }
    return e;
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    if (x.dim(-1) % 2 != 0) throw ConfigError("patch_expand: channel dim must be even");
    switch (kind) {
      case UpsamplerKind::patch_expand:
        return norm(channel_to_space_lastdim(affine(x, weight), 2));
      case UpsamplerKind::bilinear:
        return affine(bilinear_up2x(x), weight, bias);
      case UpsamplerKind::transconv:
        return add(channel_to_space_lastdim(affine(x, weight), 2), bias);
    }
    throw ConfigError("patch_expand: unknown upsampler");
  }
};

template <typename T>
struct EncoderResult {
  Tensor<T> bottleneck;
  std::vector<Tensor<T>> stage_outputs;                 // stages 0..2, pre-merge
  std::vector<std::pair<int64_t, int64_t>> stage_grids;  // (H,W) per stage 0..2
};

// Residual conv blocks used by the decoder ablations, applied on the
// channel-last token grid.
template <typename T>
struct DecoderConvBlock {
  Tensor<T> weight, bias;
  bool volumetric = false;  // 3x3x3 over (T,H,W) instead of per-frame 3x3

  static DecoderConvBlock build(ParamBuilder<T>& pb, const std::string& name, int64_t dim,
                                bool volumetric) {
    DecoderConvBlock b;
    b.volumetric = volumetric;
    if (volumetric)
      b.weight = pb.he_normal(name + ".conv.weight", {dim, dim, 3, 3, 3}, dim * 27);
    else
      b.weight = pb.he_normal(name + ".conv.weight", {dim, dim, 3, 3}, dim * 9);
    b.bias = pb.zeros(name + ".conv.bias", {dim});
    return b;
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    int64_t N = x.dim(0), Tt = x.dim(1), H = x.dim(2), W = x.dim(3), D = x.dim(4);
    if (volumetric) {
      auto nchw = permute(x, {0, 4, 1, 2, 3});  // [N,D,T,H,W]
      auto y = conv3d(nchw, weight, bias, 1);
      y = relu(add(y, nchw));
      return permute(y, {0, 2, 3, 4, 1});
    }
    auto frames = reshape(permute(x, {0, 1, 4, 2, 3}), {N * Tt, D, H, W});
    auto y = conv2d(frames, weight, bias, 1, 1);
    y = relu(add(y, frames));
    return permute(reshape(y, {N, Tt, D, H, W}), {0, 1, 3, 4, 2});
  }
};

template <typename T>
class VstUnet {
 public:
  VstUnet(ParamBuilder<T>& pb, const VSTConfig& cfg) : cfg_(cfg) {
    for (int stage = 0; stage < 4; ++stage) {
      int64_t dim = cfg.stage_dim(stage);
      if (dim % cfg.head_dim != 0)
        throw ConfigError("vst: stage dim " + std::to_string(dim) +
                          " not divisible by head_dim " + std::to_string(cfg.head_dim));
      int heads = static_cast<int>(dim / cfg.head_dim);
      std::vector<VstBlock<T>> blocks;
      for (int j = 0; j < cfg.depths[static_cast<size_t>(stage)]; ++j)
        blocks.push_back(VstBlock<T>::build(
            pb, "vst.encoder.stage" + std::to_string(stage) + ".block" + std::to_string(j), dim,
            heads, cfg.head_dim, cfg.window_t, cfg.window_h, cfg.window_w, cfg.mlp_ratio,
            j % 2 == 1));
      encoder_stages_.push_back(std::move(blocks));
      if (stage < 3)
        merges_.push_back(PatchMerge<T>::build(pb, "vst.merge" + std::to_string(stage), dim));
    }
    for (int stage = 2; stage >= 0; --stage) {
      UpStage up;
      int64_t dim = cfg.stage_dim(stage);
      int heads = static_cast<int>(dim / cfg.head_dim);
      std::string base = "vst.decoder.up" + std::to_string(stage);
      up.expand = PatchExpand<T>::build(pb, base + ".expand", cfg.stage_dim(stage + 1),
                                        cfg.upsampler);
      up.fuse_w = pb.trunc_normal(base + ".fuse.weight", {2 * dim, dim});
      up.fuse_b = pb.zeros(base + ".fuse.bias", {dim});
      int depth = cfg.depths[static_cast<size_t>(stage)];
      for (int j = 0; j < depth; ++j) {
        std::string bname = base + ".block" + std::to_string(j);
        switch (cfg.decoder_block) {
          case DecoderBlockKind::vst:
            up.vst_blocks.push_back(VstBlock<T>::build(pb, bname, dim, heads, cfg.head_dim,
                                                       cfg.window_t, cfg.window_h, cfg.window_w,
                                                       cfg.mlp_ratio, j % 2 == 1));
            break;
          case DecoderBlockKind::conv2d:
            up.conv_blocks.push_back(DecoderConvBlock<T>::build(pb, bname, dim, false));
            break;
          case DecoderBlockKind::conv3d:
            up.conv_blocks.push_back(DecoderConvBlock<T>::build(pb, bname, dim, true));
            break;
        }
      }
      up_stages_.push_back(std::move(up));
    }
  }

  // x: [N, T, H/4, W/4, C] channel-last tokens from the conv front-end.
  EncoderResult<T> encode(const Tensor<T>& x) const {
    EncoderResult<T> result;
    Tensor<T> h = x;
    for (int stage = 0; stage < 4; ++stage) {
      for (const auto& block : encoder_stages_[static_cast<size_t>(stage)])
        h = block(h, masks_);
      if (stage < 3) {
        result.stage_outputs.push_back(h);
        result.stage_grids.emplace_back(h.dim(2), h.dim(3));
        int64_t He = (h.dim(2) + 1) / 2 * 2, We = (h.dim(3) + 1) / 2 * 2;
        if (He != h.dim(2) || We != h.dim(3)) h = pad_hw(h, He, We);
        h = merges_[static_cast<size_t>(stage)](h);
      }
    }
    result.bottleneck = h;
    return result;
  }

  Tensor<T> decode(const EncoderResult<T>& enc) const {
    Tensor<T> h = enc.bottleneck;
    for (size_t i = 0; i < up_stages_.size(); ++i) {
      int stage = 2 - static_cast<int>(i);
      const auto& up = up_stages_[i];
      h = up.expand(h);
      auto [gh, gw] = enc.stage_grids[static_cast<size_t>(stage)];
      h = crop_hw(h, gh, gw);
      const auto& skip = enc.stage_outputs[static_cast<size_t>(stage)];
      if (h.shape() != skip.shape())
        throw NumericError("vst decoder: skip shape mismatch " + shape_str(h.shape()) + " vs " +
                           shape_str(skip.shape()));
      h = affine(concat(4, std::vector<Tensor<T>>{h, skip}), up.fuse_w, up.fuse_b);
      for (const auto& block : up.vst_blocks) h = block(h, masks_);
      for (const auto& block : up.conv_blocks) h = block(h);
    }
    return h;
  }

  Tensor<T> forward(const Tensor<T>& x) const { return decode(encode(x)); }

  const VSTConfig& config() const { return cfg_; }

 private:
  struct UpStage {
    PatchExpand<T> expand;
    Tensor<T> fuse_w, fuse_b;
    std::vector<VstBlock<T>> vst_blocks;
    std::vector<DecoderConvBlock<T>> conv_blocks;
  };

  VSTConfig cfg_;
  std::vector<std::vector<VstBlock<T>>> encoder_stages_;
  std::vector<PatchMerge<T>> merges_;
  std::vector<UpStage> up_stages_;
  mutable MaskCache<T> masks_;
};

}  // namespace lvnet
