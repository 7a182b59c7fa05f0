#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lvnet/flops.hpp"
#include "lvnet/grad_check.hpp"
#include "lvnet/model.hpp"
#include "lvnet/optim.hpp"

using namespace lvnet;

namespace {

template <typename T>
Tensor<T> random_clip(Shape shape, Rng& rng) {
  auto t = Tensor<T>::zeros(shape);
  for (auto& v : t.raw_data()) v = static_cast<T>(rng.uniform());
  return t;
}

LVNetConfig reduced_config() {
  LVNetConfig cfg;
  cfg.conv.base_channels = 2;
  cfg.conv.embed_dim = 8;
  cfg.vst.embed_dim = 8;
  cfg.vst.depths = {1, 1, 1, 1};
  cfg.vst.head_dim = 4;
  return cfg;
}

LVNetConfig config_with(int C, int head_dim, std::array<int, 4> depths = {2, 2, 2, 1},
                        int T = 2, int wt = 2) {
  LVNetConfig cfg;
  cfg.conv.embed_dim = C;
  cfg.vst.embed_dim = C;
  cfg.vst.head_dim = head_dim;
  cfg.vst.depths = depths;
  cfg.clip_len = T;
  cfg.vst.window_t = wt;
  return cfg;
}

}  // namespace

TEST_CASE("default config builds and lands in the parameter bracket") {
  LVNet<float> model(LVNetConfig{}, 7);
  double mega = static_cast<double>(model.count_params()) / 1e6;
  CHECK(mega >= 1.2);
  CHECK(mega <= 2.4);
}

TEST_CASE("build is deterministic: same seed, bit-identical stores") {
  LVNet<float> a(LVNetConfig{}, 42), b(LVNetConfig{}, 42), c(LVNetConfig{}, 43);
  auto ita = a.params().begin();
  bool any_diff_c = false;
  auto itc = c.params().begin();
  for (auto& [name, t] : b.params()) {
    CHECK(ita->first == name);
    CHECK(ita->second.data() == t.data());
    if (itc->second.data() != t.data()) any_diff_c = true;
    ++ita;
    ++itc;
  }
  CHECK(any_diff_c);
}

TEST_CASE("indivisible embed dim is a configuration error") {
  LVNetConfig cfg;
  cfg.conv.embed_dim = 25;
  cfg.vst.embed_dim = 25;
  cfg.vst.head_dim = 8;
  CHECK_THROWS_AS(LVNet<float>(cfg, 1), ConfigError);
  LVNetConfig cfg2;
  cfg2.clip_len = 4;
  cfg2.vst.window_t = 8;
  CHECK_THROWS_AS(LVNet<float>(cfg2, 1), ConfigError);
}

TEST_CASE("forward: shape contract and probability range") {
  LVNet<float> model(LVNetConfig{}, 3);
  Rng rng(5);
  auto clip = random_clip<float>({1, 1, 2, 64, 64}, rng);
  auto out = model.forward(clip);
  CHECK(out.logits.shape() == Shape{1, 2, 64, 64});
  CHECK(out.probabilities.shape() == Shape{1, 2, 64, 64});
  for (float p : out.probabilities.data()) {
    CHECK(p > 0.f);
    CHECK(p < 1.f);
  }
}

TEST_CASE("forward: constant-zero clip yields finite logits") {
  LVNet<float> model(LVNetConfig{}, 3);
  auto out = model.forward(Tensor<float>::zeros({1, 1, 2, 32, 32}));
  for (float v : out.logits.data()) CHECK(std::isfinite(v));
}

TEST_CASE("forward rejects out-of-range input") {
  LVNet<float> model(LVNetConfig{}, 3);
  auto clip = Tensor<float>::filled({1, 1, 2, 32, 32}, 1.5f);
  CHECK_THROWS_AS(model.forward(clip), ValidationError);
}

TEST_CASE("end-to-end gradient check on a reduced-width model") {
  LVNet<double> model(reduced_config(), 11);
  Rng rng(12);
  auto clip = random_clip<double>({1, 1, 2, 16, 16}, rng);
  auto target = Tensor<double>::zeros({1, 2, 16, 16});
  for (auto& v : target.raw_data()) v = rng.uniform() < 0.1 ? 1.0 : 0.0;
  // eps=1e-5: the conv path is piecewise linear in its relu units, and a
  // 1e-4 step crosses kinks for a few of the 512 perturbed inputs
  auto err = grad_check(
      [&](const std::vector<Tensor<double>>& in) {
        auto out = model.forward(in[0]);
        return soft_iou_loss(out.probabilities, target);
      },
      {clip}, 1e-5);
  CHECK(err < 1e-3);
}

TEST_CASE("soft IoU loss: fixed points and bounds") {
  auto g = Tensor<float>::from_vector({2, 2}, {1, 0, 1, 0});
  CHECK(soft_iou_loss(g, g).item() == doctest::Approx(0.f));

  auto flipped = Tensor<float>::from_vector({2, 2}, {0, 1, 0, 1});
  CHECK(soft_iou_loss(flipped, g).item() > 0.4f);

  auto empty = Tensor<float>::zeros({2, 2});
  auto p_small = Tensor<float>::filled({2, 2}, 1e-6f);
  CHECK(soft_iou_loss(p_small, empty).item() == doctest::Approx(0.f).epsilon(1e-4));

  Rng rng(9);
  for (int i = 0; i < 20; ++i) {
    auto p = random_clip<float>({3, 4}, rng);
    auto t = Tensor<float>::zeros({3, 4});
    for (auto& v : t.raw_data()) v = rng.uniform() < 0.5 ? 1.f : 0.f;
    float l = soft_iou_loss(p, t).item();
    CHECK(l >= 0.f);
    CHECK(l < 1.f);
  }
  CHECK_THROWS_AS(soft_iou_loss(g, Tensor<float>::filled({2, 2}, 0.5f)), ValidationError);
}

TEST_CASE("bce+dice loss is finite and positive on mismatches") {
  auto g = Tensor<float>::from_vector({2, 2}, {1, 0, 0, 0});
  auto p = Tensor<float>::filled({2, 2}, 0.5f);
  float l = bce_dice_loss(p, g).item();
  CHECK(std::isfinite(l));
  CHECK(l > 0.f);
  CHECK(bce_dice_loss(g, g).item() < 0.1f);
}

TEST_CASE("parameter count is independent of T at fixed window") {
  auto p2 = LVNet<float>(config_with(24, 8, {2, 2, 2, 1}, 2, 2), 1).count_params();
  auto p4 = LVNet<float>(config_with(24, 8, {2, 2, 2, 1}, 4, 2), 1).count_params();
  auto p8 = LVNet<float>(config_with(24, 8, {2, 2, 2, 1}, 8, 2), 1).count_params();
  CHECK(p2 == p4);
  CHECK(p4 == p8);
}

TEST_CASE("parameter count scales near-quadratically with embed dim") {
  // head count is held at {3,6,12,24} by scaling head_dim with C
  auto p12 = LVNet<float>(config_with(12, 4), 1).count_params();
  auto p24 = LVNet<float>(config_with(24, 8), 1).count_params();
  auto p48 = LVNet<float>(config_with(48, 16), 1).count_params();
  double r1 = static_cast<double>(p24) / static_cast<double>(p12);
  double r2 = static_cast<double>(p48) / static_cast<double>(p24);
  CHECK(r1 >= 3.5);
  CHECK(r1 <= 4.2);
  CHECK(r2 >= 3.5);
  CHECK(r2 <= 4.2);
}

TEST_CASE("depth sweep orders parameters with near-equal increments") {
  auto p1 = LVNet<float>(config_with(24, 8, {1, 1, 1, 1}), 1).count_params();
  auto p2 = LVNet<float>(config_with(24, 8, {2, 2, 2, 1}), 1).count_params();
  auto p3 = LVNet<float>(config_with(24, 8, {3, 3, 3, 1}), 1).count_params();
  CHECK(p1 < p2);
  CHECK(p2 < p3);
  auto inc1 = p2 - p1, inc2 = p3 - p2;
  CHECK(std::max(inc1, inc2) <= 2 * std::min(inc1, inc2));
}

TEST_CASE("conv front-end owns a small parameter share; disabling sheds it") {
  LVNet<float> full(LVNetConfig{}, 1);
  auto front = full.params().total_params_with_prefix("conv_frontend.");
  CHECK(static_cast<double>(front) < 0.10 * static_cast<double>(full.count_params()));

  LVNetConfig off;
  off.conv.enabled = false;
  LVNet<float> without(off, 1);
  CHECK(without.count_params() < full.count_params());
}

TEST_CASE("analytic FLOPs equals the executed MAC tally exactly") {
  Rng rng(21);
  auto run = [&](const LVNetConfig& cfg, int64_t H, int64_t W) {
    LVNet<float> model(cfg, 2);
    auto clip = random_clip<float>({1, 1, static_cast<int64_t>(cfg.clip_len), H, W}, rng);
    MacTally::enabled() = true;
    MacTally::reset();
    model.forward(clip);
    uint64_t executed = MacTally::count();
    MacTally::enabled() = false;
    CHECK(2 * executed == count_flops(cfg, H, W));
  };
  run(LVNetConfig{}, 64, 64);  // padded grids at every stage
  run(LVNetConfig{}, 56, 56);  // 14x14 grid: no padding at stage 0
  LVNetConfig off;
  off.conv.enabled = false;
  run(off, 32, 32);
  LVNetConfig res;
  res.conv.msff_mode = MsffMode::res_block;
  run(res, 32, 32);
  for (auto kind : {DecoderBlockKind::conv2d, DecoderBlockKind::conv3d}) {
    LVNetConfig d;
    d.vst.decoder_block = kind;
    run(d, 32, 32);
  }
  for (auto kind : {UpsamplerKind::bilinear, UpsamplerKind::transconv}) {
    LVNetConfig up;
    up.vst.upsampler = kind;
    run(up, 32, 32);
  }
  LVNetConfig t4 = config_with(24, 8, {2, 2, 2, 1}, 4, 2);
  run(t4, 32, 32);
}

TEST_CASE("FLOPs scale linearly in T at fixed resolution and window") {
  auto f2 = count_flops(config_with(24, 8, {2, 2, 2, 1}, 2, 2), 256, 256);
  auto f4 = count_flops(config_with(24, 8, {2, 2, 2, 1}, 4, 2), 256, 256);
  auto f8 = count_flops(config_with(24, 8, {2, 2, 2, 1}, 8, 2), 256, 256);
  double r42 = static_cast<double>(f4) / static_cast<double>(f2);
  double r82 = static_cast<double>(f8) / static_cast<double>(f2);
  CHECK(r42 >= 1.9);
  CHECK(r42 <= 2.2);
  CHECK(r82 >= 3.9);
  CHECK(r82 <= 4.5);
}

TEST_CASE("disabling the conv front-end cuts FLOPs by at least 30%") {
  auto full = count_flops(LVNetConfig{}, 256, 256);
  LVNetConfig off;
  off.conv.enabled = false;
  auto without = count_flops(off, 256, 256);
  CHECK(static_cast<double>(without) <= 0.7 * static_cast<double>(full));
}

TEST_CASE("one Adam step at lr=1e-5 strictly decreases the loss") {
  LVNet<float> model(LVNetConfig{}, 13);
  Rng rng(14);
  auto clip = random_clip<float>({1, 1, 2, 32, 32}, rng);
  auto target = Tensor<float>::zeros({1, 2, 32, 32});
  for (auto& v : target.raw_data()) v = rng.uniform() < 0.05 ? 1.f : 0.f;

  auto out = model.forward(clip);
  auto loss = soft_iou_loss(out.probabilities, target);
  float before = loss.item();
  model.params().zero_grads();
  loss.backward();
  AdamState<float> state;
  adam_step(model.params(), state, AdamHyper{1e-5, 0.9, 0.999, 1e-8});
  float after = soft_iou_loss(model.forward(clip).probabilities, target).item();
  CHECK(after < before);
}

TEST_CASE("frame permutation is not an invariance of the full model") {
  LVNet<float> model(LVNetConfig{}, 15);
  Rng rng(16);
  auto clip = random_clip<float>({1, 1, 2, 32, 32}, rng);
  auto swapped = Tensor<float>::zeros(clip.shape());
  int64_t frame = 32 * 32;
  std::copy(clip.data().begin() + frame, clip.data().end(), swapped.raw_data().begin());
  std::copy(clip.data().begin(), clip.data().begin() + frame,
            swapped.raw_data().begin() + frame);

  auto out = model.forward(clip);
  auto out_sw = model.forward(swapped);
  // compare frame 0 of the original against frame 1 of the swapped clip:
  // a per-frame model would make them identical
  double diff = 0;
  for (int64_t i = 0; i < frame; ++i)
    diff = std::max(diff, std::abs(static_cast<double>(out.logits.data()[static_cast<size_t>(i)]) -
                                   out_sw.logits.data()[static_cast<size_t>(frame + i)]));
  CHECK(diff > 1e-6);
}

TEST_CASE("output spatial shape equals input shape across valid sizes") {
  LVNet<float> model(LVNetConfig{}, 17);
  Rng rng(18);
  for (auto [h, w] : {std::pair<int64_t, int64_t>{16, 16}, {32, 48}, {64, 32}}) {
    auto clip = random_clip<float>({1, 1, 2, h, w}, rng);
    CHECK(model.forward(clip).logits.shape() == Shape{1, 2, h, w});
  }
}
