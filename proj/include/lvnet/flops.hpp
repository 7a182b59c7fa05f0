#pragma once

#include <cstdint>

#include "lvnet/model.hpp"

namespace lvnet {

// Analytic multiply-accumulate counter for one forward pass, mirroring the
// executed graph op for op: convolutions, affine maps, and the attention
// QK^T / AV matmuls. Matches the runtime MacTally exactly, which the tests
// assert. FLOPs = 2 * MACs.
struct FlopsBreakdown {
  uint64_t conv_frontend = 0;
  uint64_t vst = 0;
  uint64_t head = 0;
  uint64_t macs() const { return conv_frontend + vst + head; }
  uint64_t flops() const { return 2 * macs(); }
};

inline FlopsBreakdown count_macs(const LVNetConfig& cfg, int64_t H, int64_t W, int64_t N = 1) {
  cfg.validate();
  if (H % 4 != 0 || W % 4 != 0)
    throw ConfigError("count_flops: H and W must be divisible by 4");
  FlopsBreakdown out;
  const int64_t Tt = cfg.clip_len;
  const int64_t NT = N * Tt;
  const int64_t c0 = cfg.conv.base_channels;
  const int64_t C = cfg.vst.embed_dim;
  auto u = [](int64_t v) { return static_cast<uint64_t>(v); };

  // ---- conv front-end -------------------------------------------------
  if (cfg.conv.enabled) {
    auto front_block = [&](int64_t cin, int64_t cout, int64_t hw) -> uint64_t {
      uint64_t macs = 0;
      if (cfg.conv.msff_mode == MsffMode::msff) {
        macs += u(NT * cout * hw * cin * (9 + 25 + 49));  // parallel branches
        macs += u(NT * cout * hw * 3 * cout * 9);         // 3x3 fusion
      } else {
        macs += u(NT * cout * hw * cin * 9);
      }
      if (cin != cout) macs += u(NT * cout * hw * cin);  // 1x1 residual projection
      return macs;
    };
    int64_t full = H * W, half = (H / 2) * (W / 2), quart = (H / 4) * (W / 4);
    out.conv_frontend += front_block(1, c0, full);
    out.conv_frontend += u(NT * 2 * c0 * half * 4 * c0 * 9);  // down1
    out.conv_frontend += front_block(2 * c0, 2 * c0, half);
    out.conv_frontend += u(NT * C * quart * 8 * c0 * 9);  // down2
    out.conv_frontend += u(NT * 8 * c0 * quart * C * 9);  // up1 conv (C -> 4*2c0)
    out.conv_frontend += u(NT * 2 * c0 * half * 4 * c0 * 9);   // fuse1
    out.conv_frontend += u(NT * 2 * c0 * half * 2 * c0 * 9);   // dec block1
    out.conv_frontend += u(NT * 4 * c0 * half * 2 * c0 * 9);   // up2 conv
    out.conv_frontend += u(NT * c0 * full * 2 * c0 * 9);       // fuse2
    out.conv_frontend += u(NT * c0 * full * c0 * 9);           // dec block2
  } else {
    out.conv_frontend += u(NT * C * (H / 4) * (W / 4) * 16);       // 4x4 patch embed
    out.conv_frontend += u(NT * 16 * c0 * (H / 4) * (W / 4) * C);  // 1x1 expansion
  }

  // ---- video swin U-Net ------------------------------------------------
  const int64_t wt = cfg.vst.window_t, wh = cfg.vst.window_h, ww = cfg.vst.window_w;
  const int64_t L = wt * wh * ww;
  auto pad_to = [](int64_t g, int64_t w) { return (g + w - 1) / w * w; };
  auto vst_block = [&](int64_t D, int64_t gh, int64_t gw) -> uint64_t {
    int64_t ph = pad_to(gh, wh), pw = pad_to(gw, ww);
    int64_t tokens_pad = NT * ph * pw;
    int64_t tokens = NT * gh * gw;
    int64_t hidden = static_cast<int64_t>(cfg.vst.mlp_ratio * static_cast<double>(D));
    uint64_t macs = 0;
    macs += u(tokens_pad * D * 3 * D);      // qkv
    macs += 2 * u(tokens_pad * L * D);      // QK^T and AV
    macs += u(tokens_pad * D * D);          // output projection
    macs += u(tokens * D * hidden) * 2;     // MLP on the unpadded grid
    return macs;
  };

  int64_t gh = H / 4, gw = W / 4;
  int64_t grids_h[4], grids_w[4];
  for (int stage = 0; stage < 4; ++stage) {
    int64_t D = cfg.vst.stage_dim(stage);
    for (int j = 0; j < cfg.vst.depths[static_cast<size_t>(stage)]; ++j)
      out.vst += vst_block(D, gh, gw);
    grids_h[stage] = gh;
    grids_w[stage] = gw;
    if (stage < 3) {
      int64_t eh = (gh + 1) / 2 * 2, ew = (gw + 1) / 2 * 2;
      out.vst += u(NT * (eh / 2) * (ew / 2) * 4 * D * 2 * D);  // merge reduction
      gh = eh / 2;
      gw = ew / 2;
    }
  }
  for (int stage = 2; stage >= 0; --stage) {
    int64_t Din = cfg.vst.stage_dim(stage + 1);
    int64_t D = cfg.vst.stage_dim(stage);
    int64_t tokens_in = NT * gh * gw;
    switch (cfg.vst.upsampler) {
      case UpsamplerKind::patch_expand:
      case UpsamplerKind::transconv:
        out.vst += u(tokens_in * Din * 2 * Din);
        break;
      case UpsamplerKind::bilinear:
        out.vst += u(tokens_in * 4 * Din * (Din / 2));
        break;
    }
    gh = grids_h[stage];
    gw = grids_w[stage];
    int64_t tokens = NT * gh * gw;
    out.vst += u(tokens * 2 * D * D);  // skip fusion
    for (int j = 0; j < cfg.vst.depths[static_cast<size_t>(stage)]; ++j) {
      switch (cfg.vst.decoder_block) {
        case DecoderBlockKind::vst: out.vst += vst_block(D, gh, gw); break;
        case DecoderBlockKind::conv2d: out.vst += u(tokens * D * D * 9); break;
        case DecoderBlockKind::conv3d: out.vst += u(tokens * D * D * 27); break;
      }
    }
  }

  // ---- segmentation head ----------------------------------------------
  out.head += u(NT * H * W * c0);
  return out;
}

inline uint64_t count_flops(const LVNetConfig& cfg, int64_t H, int64_t W, int64_t N = 1) {
  return count_macs(cfg, H, W, N).flops();
}

}  // namespace lvnet
