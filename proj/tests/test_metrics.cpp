#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "lvnet/metrics.hpp"
#include "lvnet/random.hpp"

using namespace lvnet;

namespace {

Mask make_mask(int64_t h, int64_t w, std::initializer_list<std::pair<int64_t, int64_t>> on = {}) {
  Mask m{h, w, std::vector<uint8_t>(static_cast<size_t>(h * w), 0)};
  for (auto [y, x] : on) m.v[static_cast<size_t>(y * w + x)] = 1;
  return m;
}

Mask random_mask(int64_t h, int64_t w, double density, Rng& rng) {
  Mask m{h, w, std::vector<uint8_t>(static_cast<size_t>(h * w), 0)};
  for (auto& v : m.v) v = rng.uniform() < density ? 1 : 0;
  return m;
}

// Label-propagation connected components: sweep until no label changes.
// Slower than BFS and structurally unrelated to it.
std::vector<int> label_prop_oracle(const Mask& m) {
  std::vector<int> label(m.v.size(), -1);
  for (size_t i = 0; i < m.v.size(); ++i)
    if (m.v[i]) label[i] = static_cast<int>(i);
  bool changed = true;
  while (changed) {
    changed = false;
    for (int64_t y = 0; y < m.h; ++y)
      for (int64_t x = 0; x < m.w; ++x) {
        size_t i = static_cast<size_t>(y * m.w + x);
        if (!m.v[i]) continue;
        for (int64_t dy = -1; dy <= 1; ++dy)
          for (int64_t dx = -1; dx <= 1; ++dx) {
            int64_t ny = y + dy, nx = x + dx;
            if (ny < 0 || ny >= m.h || nx < 0 || nx >= m.w) continue;
            size_t j = static_cast<size_t>(ny * m.w + nx);
            if (m.v[j] && label[j] < label[i]) {
              label[i] = label[j];
              changed = true;
            }
          }
      }
  }
  return label;
}

// Direct pixel counting for IoU / per-frame IoU, independent loops.
struct PixelOracle {
  int64_t tp = 0, t = 0, p = 0;
  PixelOracle(const Mask& pred, const Mask& gt) {
    for (size_t i = 0; i < gt.v.size(); ++i) {
      t += gt.v[i];
      p += pred.v[i];
      if (gt.v[i] && pred.v[i]) tp += 1;
    }
  }
};

}  // namespace

TEST_CASE("pixel IoU: exact fixed points") {
  auto gt = make_mask(4, 4, {{0, 0}, {1, 1}, {2, 2}});
  auto [iou, niou] = pixel_iou(std::span(&gt, 1), std::span(&gt, 1));
  CHECK(iou == 1.0);
  CHECK(niou == 1.0);

  // T=4, P=4, TP=2 -> IoU = 2/6
  auto g2 = make_mask(4, 4, {{0, 0}, {0, 1}, {0, 2}, {0, 3}});
  auto p2 = make_mask(4, 4, {{0, 0}, {0, 1}, {1, 0}, {1, 1}});
  auto [iou2, niou2] = pixel_iou(std::span(&p2, 1), std::span(&g2, 1));
  CHECK(iou2 == doctest::Approx(2.0 / 6.0));
}

TEST_CASE("nIoU averages per-frame ratios; global IoU pools pixels") {
  // frame A: perfect 2-pixel match (IoU 1); frame B: 1 of 2 predicted (IoU 0.5)
  std::vector<Mask> gt{make_mask(4, 4, {{0, 0}, {0, 1}}), make_mask(4, 4, {{2, 2}})};
  std::vector<Mask> pred{make_mask(4, 4, {{0, 0}, {0, 1}}), make_mask(4, 4, {{2, 2}, {3, 3}})};
  auto [iou, niou] = pixel_iou(pred, gt);
  CHECK(niou == doctest::Approx(0.75));
  CHECK(iou == doctest::Approx(3.0 / 4.0));  // pooled: TP=3, T=3, P=4
}

TEST_CASE("empty-vs-empty frames score per-frame IoU 1") {
  std::vector<Mask> empty{make_mask(4, 4), make_mask(4, 4)};
  auto [iou, niou] = pixel_iou(empty, empty);
  CHECK(iou == 1.0);
  CHECK(niou == 1.0);
}

TEST_CASE("non-binary input is a validation error") {
  Mask bad{2, 2, {0, 1, 2, 0}};
  auto good = make_mask(2, 2);
  CHECK_THROWS_AS(pixel_iou(std::span(&bad, 1), std::span(&good, 1)), ValidationError);
}

TEST_CASE("extract_targets: single pixel and diagonal connectivity") {
  auto single = make_mask(10, 10, {{5, 7}});
  auto comps = extract_targets(single);
  REQUIRE(comps.size() == 1);
  CHECK(comps[0].cy == 5.0);
  CHECK(comps[0].cx == 7.0);

  auto diag = make_mask(10, 10, {{2, 2}, {3, 3}});
  CHECK(extract_targets(diag).size() == 1);  // 8-connectivity joins diagonals

  auto apart = make_mask(10, 10, {{2, 2}, {2, 4}});
  CHECK(extract_targets(apart).size() == 2);
}

TEST_CASE("extract_targets matches the label-propagation oracle on random masks") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    auto m = random_mask(16, 16, 0.25, rng);
    auto comps = extract_targets(m);
    auto labels = label_prop_oracle(m);
    // same partition: pixels share a component iff they share an oracle label
    std::set<int> oracle_roots;
    for (int l : labels)
      if (l >= 0) oracle_roots.insert(l);
    CHECK(comps.size() == oracle_roots.size());
    for (const auto& comp : comps) {
      std::set<int> roots;
      for (auto [y, x] : comp.pixels) roots.insert(labels[static_cast<size_t>(y * 16 + x)]);
      CHECK(roots.size() == 1);
    }
  }
}

TEST_CASE("the 3-pixel rule is strict: 2.9 matches, 3.0 does not") {
  auto gt = make_mask(20, 20, {{10, 5}});
  auto near = make_mask(20, 20, {{10, 7}});  // distance 2.0
  auto r_near = match_and_count(near, gt);
  CHECK(r_near.n_true == 1);

  auto at3 = make_mask(20, 20, {{10, 8}});  // distance exactly 3.0
  auto r_at3 = match_and_count(at3, gt);
  CHECK(r_at3.n_true == 0);
  CHECK(r_at3.n_false_pixels == 1);

  // fractional centroids: two-pixel component centred 2.9 px away
  auto frac = make_mask(20, 20, {{10, 7}, {10, 8}});  // centroid (10, 7.5): dist 2.5
  CHECK(match_and_count(frac, gt).n_true == 1);
}

TEST_CASE("Pd and Fa arithmetic on a crafted frame") {
  // 3 GT targets, predictions match 2; one stray 5-px blob -> Fa pixels
  auto gt = make_mask(100, 100, {{10, 10}, {50, 50}, {90, 90}});
  auto pred = make_mask(100, 100,
                        {{10, 11},  // match 1
                         {50, 49},  // match 2
                         {30, 30},
                         {30, 31},
                         {30, 32},
                         {31, 30},
                         {31, 31}});  // stray component of 5 px
  auto r = match_and_count(pred, gt);
  CHECK(r.n_gt == 3);
  CHECK(r.n_true == 2);
  CHECK(r.n_false_pixels == 5);
  CHECK(r.n_all == 10000);
  std::vector<Mask> preds{pred}, gts{gt};
  auto rep = evaluate_masks(preds, gts);
  CHECK(rep.pd == doctest::Approx(2.0 / 3.0));
  CHECK(rep.fa_e6 == doctest::Approx(500.0));
}

TEST_CASE("greedy matching is one-to-one in ascending distance order") {
  // two predictions near one GT target: only the closer one matches
  auto gt = make_mask(20, 20, {{10, 10}});
  auto pred = make_mask(20, 20, {{10, 11}, {10, 12}});
  // the two predicted pixels are 8-connected? (10,11) and (10,12) touch -> one component
  // use separated ones instead
  auto pred2 = make_mask(20, 20, {{10, 12}, {8, 10}});
  auto r = match_and_count(pred2, gt);
  CHECK(r.n_gt == 1);
  CHECK(r.n_true == 1);
  REQUIRE(r.matches.size() == 1);
  CHECK(std::get<2>(r.matches[0]) == doctest::Approx(2.0));  // (8,10) at distance 2
  CHECK(r.n_false_pixels == 1);
}

TEST_CASE("all four metrics agree with brute-force counting on random masks") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Mask> preds, gts;
    int frames = 1 + static_cast<int>(rng.next_below(3));
    for (int f = 0; f < frames; ++f) {
      preds.push_back(random_mask(32, 32, 0.02 + 0.04 * rng.uniform(), rng));
      gts.push_back(random_mask(32, 32, 0.02 + 0.04 * rng.uniform(), rng));
    }
    auto rep = evaluate_masks(preds, gts);

    int64_t tp = 0, t = 0, p = 0;
    double per_frame = 0;
    int64_t n_true = 0, n_gt = 0, n_false = 0, n_all = 0;
    for (int f = 0; f < frames; ++f) {
      PixelOracle po(preds[static_cast<size_t>(f)], gts[static_cast<size_t>(f)]);
      tp += po.tp;
      t += po.t;
      p += po.p;
      per_frame += (po.t + po.p - po.tp) == 0
                       ? 1.0
                       : static_cast<double>(po.tp) / static_cast<double>(po.t + po.p - po.tp);
      auto r = match_and_count(preds[static_cast<size_t>(f)], gts[static_cast<size_t>(f)]);
      n_true += r.n_true;
      n_gt += r.n_gt;
      n_false += r.n_false_pixels;
      n_all += r.n_all;
    }
    CHECK(rep.tp == tp);
    CHECK(rep.t_gt == t);
    CHECK(rep.p_pred == p);
    CHECK(rep.n_true == n_true);
    CHECK(rep.n_gt == n_gt);
    CHECK(rep.n_false_pixels == n_false);
    CHECK(rep.n_all == n_all);
    double iou_ref = (t + p - tp) == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(t + p - tp);
    CHECK(std::abs(rep.iou - iou_ref) < 1e-12);
    CHECK(std::abs(rep.niou - per_frame / frames) < 1e-12);
    if (n_gt) CHECK(std::abs(rep.pd - static_cast<double>(n_true) / static_cast<double>(n_gt)) < 1e-12);
    CHECK(std::abs(rep.fa_e6 - static_cast<double>(n_false) / static_cast<double>(n_all) * 1e6) < 1e-12);
    // Fa * 1e-6 * N_all recovers an integer pixel count
    double recovered = rep.fa_e6 * 1e-6 * static_cast<double>(rep.n_all);
    CHECK(std::abs(recovered - std::round(recovered)) < 1e-6);
    CHECK(rep.pd >= 0.0);
    CHECK(rep.pd <= 1.0);
  }
}

TEST_CASE("metrics are invariant to frame order") {
  Rng rng(13);
  std::vector<Mask> preds, gts;
  for (int f = 0; f < 4; ++f) {
    preds.push_back(random_mask(16, 16, 0.05, rng));
    gts.push_back(random_mask(16, 16, 0.05, rng));
  }
  auto rep = evaluate_masks(preds, gts);
  std::vector<Mask> preds_r(preds.rbegin(), preds.rend());
  std::vector<Mask> gts_r(gts.rbegin(), gts.rend());
  auto rep_r = evaluate_masks(preds_r, gts_r);
  CHECK(rep.iou == rep_r.iou);
  CHECK(rep.niou == rep_r.niou);
  CHECK(rep.pd == rep_r.pd);
  CHECK(rep.fa_e6 == rep_r.fa_e6);
}

TEST_CASE("roc: extreme thresholds and pixel-set nesting") {
  Rng rng(17);
  std::vector<ProbMap> probs;
  std::vector<Mask> gts;
  for (int f = 0; f < 3; ++f) {
    ProbMap pm{16, 16, std::vector<float>(256)};
    for (auto& v : pm.v) v = static_cast<float>(rng.uniform());
    probs.push_back(pm);
    gts.push_back(random_mask(16, 16, 0.05, rng));
  }
  std::vector<double> thresholds{1.0, 0.5, 0.0};
  auto curve = roc(probs, gts, thresholds);
  REQUIRE(curve.size() == 3);
  CHECK(curve[0].pd == 0.0);                // threshold 1: empty predictions
  CHECK(curve[2].fa_e6 >= curve[1].fa_e6);  // threshold 0 maximal false pixels

  // nesting: lowering the threshold can only add predicted pixels
  for (const auto& pm : probs) {
    auto hi = binarize(pm, 0.7);
    auto lo = binarize(pm, 0.3);
    for (size_t i = 0; i < hi.v.size(); ++i)
      if (hi.v[i]) CHECK(lo.v[i] == 1);
  }

  auto defaults = default_roc_thresholds();
  CHECK(defaults.front() == 0.999);
  CHECK(defaults.back() == doctest::Approx(0.05));
  CHECK(std::is_sorted(defaults.rbegin(), defaults.rend()));
}
