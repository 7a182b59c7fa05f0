#pragma once

#include <optional>
#include <string>
#include <utility>
#include <variant>

#include "lvnet/ops.hpp"
#include "lvnet/param_store.hpp"
#include "lvnet/rearrange.hpp"

namespace lvnet {

enum class MsffMode { msff, res_block };

// Shallow per-frame U-Net that feeds the transformer. Weights are shared
// across frames: every op here sees frames stacked on the batch axis.
struct ConvUNetConfig {
  int base_channels = 6;  // c0; encoder stage channels are {c0, 2*c0}
  int embed_dim = 24;     // C handed to the transformer grid (H/4, W/4)
  bool enabled = true;
  MsffMode msff_mode = MsffMode::msff;
};

template <typename T>
struct Conv2dLayer {
  Tensor<T> weight, bias;
  int64_t stride = 1, pad = 0;
  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride, pad); }
};

template <typename T>
Conv2dLayer<T> make_conv(ParamBuilder<T>& pb, const std::string& name, int64_t cin, int64_t cout,
                         int64_t k, int64_t stride, int64_t pad) {
  Conv2dLayer<T> layer;
  layer.weight = pb.he_normal(name + ".weight", {cout, cin, k, k}, cin * k * k);
  layer.bias = pb.zeros(name + ".bias", {cout});
  layer.stride = stride;
  layer.pad = pad;
  return layer;
}

// Parallel 3/5/7 branches, 3x3 fusion, residual path (identity when the
// channel count is preserved, 1x1 projection otherwise), relu after fusion.
template <typename T>
struct MsffBlock {
  Conv2dLayer<T> branch3, branch5, branch7, fuse;
  std::optional<Conv2dLayer<T>> proj;

  static MsffBlock build(ParamBuilder<T>& pb, const std::string& name, int64_t cin,
                         int64_t cout) {
    MsffBlock b;
    b.branch3 = make_conv(pb, name + ".branch3", cin, cout, 3, 1, 1);
    b.branch5 = make_conv(pb, name + ".branch5", cin, cout, 5, 1, 2);
    b.branch7 = make_conv(pb, name + ".branch7", cin, cout, 7, 1, 3);
    b.fuse = make_conv(pb, name + ".fuse", 3 * cout, cout, 3, 1, 1);
    if (cin != cout) b.proj = make_conv(pb, name + ".proj", cin, cout, 1, 1, 0);
    return b;
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    auto fused = fuse(concat(1, std::vector<Tensor<T>>{branch3(x), branch5(x), branch7(x)}));
    auto res = proj ? (*proj)(x) : x;
    return relu(add(fused, res));
  }
};

// Lightweight residual block: one 3x3 conv plus skip.
template <typename T>
struct ResBlock {
  Conv2dLayer<T> conv;
  std::optional<Conv2dLayer<T>> proj;

  static ResBlock build(ParamBuilder<T>& pb, const std::string& name, int64_t cin, int64_t cout) {
    ResBlock b;
    b.conv = make_conv(pb, name + ".conv", cin, cout, 3, 1, 1);
    if (cin != cout) b.proj = make_conv(pb, name + ".proj", cin, cout, 1, 1, 0);
    return b;
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    auto res = proj ? (*proj)(x) : x;
    return relu(add(conv(x), res));
  }
};

template <typename T>
using FrontBlock = std::variant<MsffBlock<T>, ResBlock<T>>;

template <typename T>
Tensor<T> apply_block(const FrontBlock<T>& block, const Tensor<T>& x) {
  return std::visit([&](const auto& b) { return b(x); }, block);
}

// space_to_channel(2) then 3x3 conv to cout; halves the grid losslessly
// before mixing.
template <typename T>
struct Downsample {
  Conv2dLayer<T> conv;

  static Downsample build(ParamBuilder<T>& pb, const std::string& name, int64_t cin,
                          int64_t cout) {
    return Downsample{make_conv(pb, name + ".conv", 4 * cin, cout, 3, 1, 1)};
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv(space_to_channel(x, 2)); }
};

// Inverse: 3x3 conv to 4*cout then channel_to_space(2).
template <typename T>
struct Upsample {
  Conv2dLayer<T> conv;

  static Upsample build(ParamBuilder<T>& pb, const std::string& name, int64_t cin, int64_t cout) {
    return Upsample{make_conv(pb, name + ".conv", cin, 4 * cout, 3, 1, 1)};
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return channel_to_space(conv(x), 2); }
};

template <typename T>
struct SkipBundle {
  Tensor<T> full;  // c0 channels at H x W
  Tensor<T> half;  // 2*c0 channels at H/2 x W/2
};

template <typename T>
class ConvFrontend {
 public:
  ConvFrontend(ParamBuilder<T>& pb, const ConvUNetConfig& cfg) : cfg_(cfg) {
    int64_t c0 = cfg.base_channels;
    int64_t C = cfg.embed_dim;
    if (!cfg.enabled) {
      // ViT-style baseline: one strided linear patch projection in, one
      // linear expansion out.
      patch_embed_ = make_conv(pb, "conv_frontend.patch_embed", 1, C, 4, 4, 0);
      patch_expand_ = make_conv(pb, "conv_frontend.patch_expand", C, 16 * c0, 1, 1, 0);
      return;
    }
    auto block = [&](const std::string& name, int64_t cin, int64_t cout) -> FrontBlock<T> {
      if (cfg.msff_mode == MsffMode::msff)
        return MsffBlock<T>::build(pb, name, cin, cout);
      return ResBlock<T>::build(pb, name, cin, cout);
    };
    enc1_ = block("conv_frontend.enc.block1", 1, c0);
    down1_ = Downsample<T>::build(pb, "conv_frontend.enc.down1", c0, 2 * c0);
    enc2_ = block("conv_frontend.enc.block2", 2 * c0, 2 * c0);
    down2_ = Downsample<T>::build(pb, "conv_frontend.enc.down2", 2 * c0, C);
    up1_ = Upsample<T>::build(pb, "conv_frontend.dec.up1", C, 2 * c0);
    fuse1_ = make_conv(pb, "conv_frontend.dec.fuse1", 4 * c0, 2 * c0, 3, 1, 1);
    block1_ = ResBlock<T>::build(pb, "conv_frontend.dec.block1", 2 * c0, 2 * c0);
    up2_ = Upsample<T>::build(pb, "conv_frontend.dec.up2", 2 * c0, c0);
    fuse2_ = make_conv(pb, "conv_frontend.dec.fuse2", 2 * c0, c0, 3, 1, 1);
    block2_ = ResBlock<T>::build(pb, "conv_frontend.dec.block2", c0, c0);
  }

  // frames: [N*T, 1, H, W] normalized to [0,1]; H, W divisible by 4.
  std::pair<Tensor<T>, SkipBundle<T>> encode(const Tensor<T>& frames) const {
    if (frames.rank() != 4 || frames.dim(1) != 1)
      throw ConfigError("conv_frontend: expected [N*T,1,H,W], got " + shape_str(frames.shape()));
    if (frames.dim(2) % 4 != 0 || frames.dim(3) % 4 != 0)
      throw ConfigError("conv_frontend: spatial dims must be divisible by 4, got " +
                        shape_str(frames.shape()));
    if (!cfg_.enabled) return {patch_embed_(frames), SkipBundle<T>{}};
    auto s1 = apply_block(*enc1_, frames);
    auto h = (*down1_)(s1);
    auto s2 = apply_block(*enc2_, h);
    auto emb = (*down2_)(s2);
    return {emb, SkipBundle<T>{s1, s2}};
  }

  // trans_out: [N*T, C, H/4, W/4] -> [N*T, c0, H, W]
  Tensor<T> decode(const Tensor<T>& trans_out, const SkipBundle<T>& skips) const {
    if (!cfg_.enabled) return channel_to_space(patch_expand_(trans_out), 4);
    auto u1 = (*up1_)(trans_out);
    if (u1.shape() != skips.half.shape())
      throw NumericError("conv_frontend: half-res skip shape mismatch " + shape_str(u1.shape()) +
                         " vs " + shape_str(skips.half.shape()));
    auto d1 = (*block1_)(fuse1_(concat(1, std::vector<Tensor<T>>{u1, skips.half})));
    auto u2 = (*up2_)(d1);
    if (u2.shape() != skips.full.shape())
      throw NumericError("conv_frontend: full-res skip shape mismatch");
    return (*block2_)(fuse2_(concat(1, std::vector<Tensor<T>>{u2, skips.full})));
  }

  const ConvUNetConfig& config() const { return cfg_; }

 private:
  ConvUNetConfig cfg_;
  std::optional<FrontBlock<T>> enc1_, enc2_;
  std::optional<Downsample<T>> down1_, down2_;
  std::optional<Upsample<T>> up1_, up2_;
  Conv2dLayer<T> fuse1_, fuse2_;
  std::optional<ResBlock<T>> block1_, block2_;
  Conv2dLayer<T> patch_embed_, patch_expand_;
};

}  // namespace lvnet
