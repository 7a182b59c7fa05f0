#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lvnet/grad_check.hpp"
#include "lvnet/ops.hpp"
#include "lvnet/random.hpp"
#include "lvnet/rearrange.hpp"

using namespace lvnet;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  auto t = Tensor<T>::zeros(shape);
  for (auto& v : t.raw_data()) v = static_cast<T>(rng.normal(0.0, scale));
  return t;
}

}  // namespace

TEST_CASE("tensor basics and shape checks") {
  auto t = Tensor<float>::from_vector({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.dim(-1) == 3);
  CHECK_THROWS_AS(Tensor<float>::from_vector({2, 2}, {1, 2, 3}), ConfigError);
  CHECK_THROWS_AS(t.item(), UsageError);
  CHECK(Tensor<float>::scalar(4.f).item() == 4.f);
}

TEST_CASE("non-finite op output is rejected") {
  auto x = Tensor<float>::from_vector({2}, {0.f, -1.f});
  CHECK_THROWS_AS(pointwise(x, Pointwise::log), NumericError);
}

TEST_CASE("autodiff add/mul chain") {
  auto a = Tensor<double>::from_vector({2}, {2.0, 3.0}, true);
  auto b = Tensor<double>::from_vector({2}, {5.0, 7.0}, true);
  auto loss = sum_all(mul(a, add(a, b)));  // sum a*(a+b)
  loss.backward();
  // d/da = 2a + b, d/db = a
  CHECK(a.grad()[0] == doctest::Approx(9.0));
  CHECK(a.grad()[1] == doctest::Approx(13.0));
  CHECK(b.grad()[0] == doctest::Approx(2.0));
  CHECK(b.grad()[1] == doctest::Approx(3.0));
}

TEST_CASE("gradients accumulate across backward calls") {
  auto a = Tensor<double>::from_vector({1}, {3.0}, true);
  auto l1 = sum_all(mul(a, a));
  l1.backward();
  auto l2 = sum_all(mul(a, a));
  l2.backward();
  CHECK(a.grad()[0] == doctest::Approx(12.0));
  a.zero_grad();
  CHECK(!a.has_grad());
}

TEST_CASE("broadcast add/mul shapes and reduction gradient") {
  auto a = Tensor<double>::from_vector({2, 2}, {1, 2, 3, 4}, true);
  auto b = Tensor<double>::from_vector({2}, {10, 20}, true);
  auto y = add(a, b);
  CHECK(y.shape() == Shape{2, 2});
  CHECK(y.data() == std::vector<double>{11, 22, 13, 24});
  sum_all(y).backward();
  CHECK(b.grad() == std::vector<double>{2, 2});

  Rng rng(5);
  auto err = grad_check(
      [](const std::vector<Tensor<double>>& in) { return sum_all(mul(in[0], in[1])); },
      {random_tensor<double>({3, 1, 4}, rng), random_tensor<double>({2, 4}, rng)});
  CHECK(err < 1e-6);
}

TEST_CASE("broadcast incompatible shapes throw") {
  auto a = Tensor<float>::zeros({2, 3});
  auto b = Tensor<float>::zeros({4});
  CHECK_THROWS_AS(add(a, b), ConfigError);
}

TEST_CASE("division gradient") {
  Rng rng(11);
  auto num = random_tensor<double>({5}, rng);
  auto den = Tensor<double>::zeros({5});
  for (auto& v : den.raw_data()) v = 1.5 + std::abs(rng.normal());
  auto err = grad_check(
      [](const std::vector<Tensor<double>>& in) { return sum_all(div(in[0], in[1])); },
      {num, den});
  CHECK(err < 1e-6);
}

TEST_CASE("rearrange: space_to_channel pins the (c,dy,dx) ordering") {
  auto x = Tensor<float>::from_vector({1, 1, 2, 2}, {1, 2, 3, 4});
  auto y = space_to_channel(x, 2);
  CHECK(y.shape() == Shape{1, 4, 1, 1});
  CHECK(y.data() == std::vector<float>{1, 2, 3, 4});
  auto back = channel_to_space(y, 2);
  CHECK(back.data() == x.data());
}

TEST_CASE("rearrange: inverse pairs are exact on random tensors") {
  Rng rng(7);
  auto x = random_tensor<float>({2, 6, 8, 4}, rng);
  CHECK(channel_to_space(space_to_channel(x, 2), 2).data() == x.data());

  auto v = random_tensor<float>({1, 4, 14, 14, 3}, rng);
  auto w = window_partition(v, 2, 7, 7);
  CHECK(w.shape() == Shape{2 * 2 * 2, 2 * 7 * 7, 3});
  CHECK(window_reverse(w, 2, 7, 7, 1, 4, 14, 14).data() == v.data());

  auto r = roll(v, {0, 1, -3, 2, 0});
  CHECK(roll(r, {0, -1, 3, -2, 0}).data() == v.data());

  auto cl = random_tensor<float>({1, 2, 3, 3, 8}, rng);
  CHECK(space_to_channel_lastdim(channel_to_space_lastdim(cl, 2), 2).data() == cl.data());
}

TEST_CASE("rearrange: indivisible axes are configuration errors") {
  auto x = Tensor<float>::zeros({1, 3, 5, 4});
  CHECK_THROWS_AS(space_to_channel(x, 2), ConfigError);
  auto v = Tensor<float>::zeros({1, 3, 7, 7, 2});
  CHECK_THROWS_AS(window_partition(v, 2, 7, 7), ConfigError);
}

TEST_CASE("roll moves content cyclically") {
  auto x = Tensor<float>::from_vector({4}, {1, 2, 3, 4});
  CHECK(roll(x, {1}).data() == std::vector<float>{4, 1, 2, 3});
  CHECK(roll(x, {-1}).data() == std::vector<float>{2, 3, 4, 1});
}

TEST_CASE("concat and slice round-trip with gradients") {
  auto a = Tensor<double>::from_vector({2, 2}, {1, 2, 3, 4}, true);
  auto b = Tensor<double>::from_vector({2, 1}, {9, 8}, true);
  auto y = concat(1, std::vector<Tensor<double>>{a, b});
  CHECK(y.shape() == Shape{2, 3});
  CHECK(y.data() == std::vector<double>{1, 2, 9, 3, 4, 8});
  auto sl = slice(y, 1, 2, 1);
  CHECK(sl.data() == std::vector<double>{9, 8});
  sum_all(sl).backward();
  CHECK(b.grad() == std::vector<double>{1, 1});
  // a's pixels do not feed the slice, so any accumulated grad is zero
  if (a.has_grad())
    for (double g : a.grad()) CHECK(g == 0.0);
}

TEST_CASE("movement ops pass gradient checks") {
  Rng rng(13);
  auto err1 = grad_check(
      [](const std::vector<Tensor<double>>& in) {
        auto p = permute(in[0], {2, 0, 1});
        return sum_all(mul(p, p));
      },
      {random_tensor<double>({2, 3, 4}, rng)});
  CHECK(err1 < 1e-6);

  auto err2 = grad_check(
      [](const std::vector<Tensor<double>>& in) {
        auto y = bilinear_up2x(in[0]);
        return sum_all(mul(y, y));
      },
      {random_tensor<double>({1, 2, 3, 3, 2}, rng)});
  CHECK(err2 < 1e-6);

  auto err3 = grad_check(
      [](const std::vector<Tensor<double>>& in) {
        auto y = crop_hw(pad_hw(in[0], 5, 6), 3, 4);
        return sum_all(mul(y, y));
      },
      {random_tensor<double>({1, 2, 3, 4, 2}, rng)});
  CHECK(err3 < 1e-6);
}

TEST_CASE("pad_hw fills with zeros and crop recovers the original") {
  Rng rng(3);
  auto x = random_tensor<float>({1, 1, 2, 3, 2}, rng);
  auto padded = pad_hw(x, 4, 5);
  CHECK(padded.shape() == Shape{1, 1, 4, 5, 2});
  CHECK(crop_hw(padded, 2, 3).data() == x.data());
  // padded region is exactly zero
  float s = 0;
  for (float v : padded.data()) s += std::abs(v);
  float s0 = 0;
  for (float v : x.data()) s0 += std::abs(v);
  CHECK(s == doctest::Approx(s0));
}

TEST_CASE("determinism: same seed gives bit-identical op sequences") {
  auto run = [] {
    Rng rng(123);
    auto x = random_tensor<float>({4, 9}, rng);
    auto w = random_tensor<float>({9, 5}, rng);
    auto y = softmax_lastdim(affine(x, w));
    return y.data();
  };
  CHECK(run() == run());
}

TEST_CASE("rng: deterministic, serializable, truncated draws bounded") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  uint64_t snap = a.state();
  double v1 = a.normal();
  Rng c(0);
  c.set_state(snap);
  CHECK(c.normal() == v1);
  Rng d(9);
  for (int i = 0; i < 1000; ++i) {
    double t = d.trunc_normal(0.0, 0.02);
    CHECK(std::abs(t) <= 0.04 + 1e-12);
  }
}
