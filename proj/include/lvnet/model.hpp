#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "lvnet/conv_frontend.hpp"
#include "lvnet/vst.hpp"

namespace lvnet {

enum class LossKind { soft_iou, bce_dice };

struct LVNetConfig {
  ConvUNetConfig conv;
  VSTConfig vst;
  int clip_len = 2;  // T, in {2,4,8}
  double threshold = 0.5;
  LossKind loss = LossKind::soft_iou;

  void validate() const {
    if (conv.embed_dim != vst.embed_dim)
      throw ConfigError("config: conv.embed_dim " + std::to_string(conv.embed_dim) +
                        " != vst.embed_dim " + std::to_string(vst.embed_dim));
    if (clip_len != 2 && clip_len != 4 && clip_len != 8)
      throw ConfigError("config: clip_len must be one of {2,4,8}, got " +
                        std::to_string(clip_len));
    if (clip_len % vst.window_t != 0)
      throw ConfigError("config: clip_len " + std::to_string(clip_len) +
                        " not divisible by window_t " + std::to_string(vst.window_t));
    for (int s = 0; s < 4; ++s)
      if (vst.stage_dim(s) % vst.head_dim != 0)
        throw ConfigError("config: stage dim " + std::to_string(vst.stage_dim(s)) +
                          " not divisible by head_dim " + std::to_string(vst.head_dim));
    if (conv.base_channels < 1) throw ConfigError("config: base_channels must be positive");
    if (vst.mlp_ratio <= 0) throw ConfigError("config: mlp_ratio must be positive");
    if (threshold < 0 || threshold > 1) throw ConfigError("config: threshold outside [0,1]");
  }
};

template <typename T>
struct ModelOutput {
  Tensor<T> logits;         // [N,T,H,W]
  Tensor<T> probabilities;  // sigmoid(logits)
};

// Conv U-Net front-end -> video swin U-Net -> conv decoder -> 1x1
// segmentation head, per-frame logits for every frame of the clip.
template <typename T>
class LVNet {
 public:
  LVNet(const LVNetConfig& cfg, uint64_t seed) : cfg_(cfg), rng_(seed) {
    cfg_.validate();
    ParamBuilder<T> pb{store_, rng_};
    frontend_.emplace(pb, cfg_.conv);
    vst_.emplace(pb, cfg_.vst);
    head_ = make_conv(pb, "head", cfg_.conv.base_channels, 1, 1, 1, 0);
  }

  // clip: [N,1,T,H,W] with values in [0,1], H and W divisible by 4.
  ModelOutput<T> forward(const Tensor<T>& clip) const {
    if (clip.rank() != 5 || clip.dim(1) != 1)
      throw ConfigError("forward: expected [N,1,T,H,W], got " + shape_str(clip.shape()));
    int64_t N = clip.dim(0), Tt = clip.dim(2), H = clip.dim(3), W = clip.dim(4);
    if (Tt != cfg_.clip_len)
      throw ConfigError("forward: clip length " + std::to_string(Tt) + " != configured T " +
                        std::to_string(cfg_.clip_len));
    for (T v : clip.data())
      if (v < T(0) || v > T(1))
        throw ValidationError("forward: clip values outside [0,1]");

    auto frames = reshape(clip, {N * Tt, int64_t{1}, H, W});
    auto [emb, skips] = frontend_->encode(frames);
    int64_t C = cfg_.vst.embed_dim, h = H / 4, w = W / 4;
    auto tokens = permute(reshape(emb, {N, Tt, C, h, w}), {0, 1, 3, 4, 2});
    auto decoded = vst_->forward(tokens);
    auto emb_out = reshape(permute(decoded, {0, 1, 4, 2, 3}), {N * Tt, C, h, w});
    auto feat = frontend_->decode(emb_out, skips);
    auto logits = reshape(head_(feat), {N, Tt, H, W});
    return {logits, sigmoid(logits)};
  }

  ParameterStore<T>& params() { return store_; }
  const ParameterStore<T>& params() const { return store_; }
  const LVNetConfig& config() const { return cfg_; }

  int64_t count_params() const { return store_.total_params(); }

 private:
  LVNetConfig cfg_;
  Rng rng_;
  ParameterStore<T> store_;
  std::optional<ConvFrontend<T>> frontend_;
  std::optional<VstUnet<T>> vst_;
  Conv2dLayer<T> head_;
};

template <typename T>
inline void check_binary_target(const Tensor<T>& target) {
  for (T v : target.data())
    if (v != T(0) && v != T(1)) throw ValidationError("target mask is not binary");
}

// 1 - (sum p*g + eps) / (sum p + sum g - sum p*g + eps), pooled over the
// whole batch. Bounded in [0,1) and smooth everywhere.
template <typename T>
Tensor<T> soft_iou_loss(const Tensor<T>& probabilities, const Tensor<T>& target, T eps = T(1)) {
  if (probabilities.shape() != target.shape())
    throw ConfigError("soft_iou_loss: shape mismatch " + shape_str(probabilities.shape()) +
                      " vs " + shape_str(target.shape()));
  check_binary_target(target);
  auto inter = sum_all(mul(probabilities, target));
  auto uni = sub(add(sum_all(probabilities), sum_all(target)), inter);
  auto ratio = div(add_scalar(inter, eps), add_scalar(uni, eps));
  return add_scalar(scale(ratio, T(-1)), T(1));
}

// Mean binary cross-entropy plus soft Dice; the ablation alternative.
template <typename T>
Tensor<T> bce_dice_loss(const Tensor<T>& probabilities, const Tensor<T>& target) {
  if (probabilities.shape() != target.shape())
    throw ConfigError("bce_dice_loss: shape mismatch");
  check_binary_target(target);
  T delta = static_cast<T>(1e-7);
  auto one_minus_p = add_scalar(scale(probabilities, T(-1)), T(1));
  auto one_minus_g = add_scalar(scale(target, T(-1)), T(1));
  auto bce_terms =
      add(mul(target, pointwise(add_scalar(probabilities, delta), Pointwise::log)),
          mul(one_minus_g, pointwise(add_scalar(one_minus_p, delta), Pointwise::log)));
  auto bce = scale(mean_all(bce_terms), T(-1));
  auto inter = sum_all(mul(probabilities, target));
  auto denom = add(sum_all(probabilities), sum_all(target));
  auto dice = div(add_scalar(scale(inter, T(2)), T(1)), add_scalar(denom, T(1)));
  auto dice_loss = add_scalar(scale(dice, T(-1)), T(1));
  return add(bce, dice_loss);
}

template <typename T>
Tensor<T> segmentation_loss(LossKind kind, const Tensor<T>& probabilities,
                            const Tensor<T>& target) {
  return kind == LossKind::soft_iou ? soft_iou_loss(probabilities, target)
                                    : bce_dice_loss(probabilities, target);
}

}  // namespace lvnet
