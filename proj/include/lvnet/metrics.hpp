#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "lvnet/errors.hpp"

namespace lvnet {

// Binary mask frame, values 0/1.
struct Mask {
  int64_t h = 0, w = 0;
  std::vector<uint8_t> v;

  uint8_t at(int64_t y, int64_t x) const { return v[static_cast<size_t>(y * w + x)]; }
};

// Per-frame probability map in [0,1].
struct ProbMap {
  int64_t h = 0, w = 0;
  std::vector<float> v;
};

inline void validate_binary(const Mask& m) {
  if (static_cast<int64_t>(m.v.size()) != m.h * m.w)
    throw ValidationError("mask: buffer size does not match dims");
  for (uint8_t x : m.v)
    if (x > 1) throw ValidationError("mask: non-binary value " + std::to_string(int(x)));
}

inline Mask binarize(const ProbMap& p, double threshold) {
  Mask m{p.h, p.w, std::vector<uint8_t>(p.v.size())};
  for (size_t i = 0; i < p.v.size(); ++i) m.v[i] = p.v[i] > threshold ? 1 : 0;
  return m;
}

struct ConfusionTotals {
  int64_t tp = 0, t_gt = 0, p_pred = 0;
};

// Pixel-level metrics of Eq. (1)-(2): IoU pools counts over all frames,
// nIoU averages the per-frame ratio with empty-vs-empty scoring 1.
inline std::pair<double, double> pixel_iou(std::span<const Mask> pred, std::span<const Mask> gt) {
  if (pred.size() != gt.size()) throw ValidationError("pixel_iou: frame count mismatch");
  ConfusionTotals total;
  double per_frame_sum = 0;
  for (size_t f = 0; f < pred.size(); ++f) {
    validate_binary(pred[f]);
    validate_binary(gt[f]);
    if (pred[f].h != gt[f].h || pred[f].w != gt[f].w)
      throw ValidationError("pixel_iou: frame shape mismatch");
    int64_t tp = 0, t = 0, p = 0;
    for (size_t i = 0; i < gt[f].v.size(); ++i) {
      t += gt[f].v[i];
      p += pred[f].v[i];
      tp += gt[f].v[i] & pred[f].v[i];
    }
    total.tp += tp;
    total.t_gt += t;
    total.p_pred += p;
    int64_t denom = t + p - tp;
    per_frame_sum += denom == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(denom);
  }
  int64_t denom = total.t_gt + total.p_pred - total.tp;
  double iou = denom == 0 ? 1.0 : static_cast<double>(total.tp) / static_cast<double>(denom);
  double niou = pred.empty() ? 1.0 : per_frame_sum / static_cast<double>(pred.size());
  return {iou, niou};
}

struct Component {
  std::vector<std::pair<int64_t, int64_t>> pixels;  // (y,x)
  double cy = 0, cx = 0;                            // unweighted centroid
};

// 8-connected components via an explicit BFS flood fill.
inline std::vector<Component> extract_targets(const Mask& mask) {
  validate_binary(mask);
  std::vector<Component> out;
  std::vector<uint8_t> seen(mask.v.size(), 0);
  std::vector<int64_t> queue;
  for (int64_t y = 0; y < mask.h; ++y)
    for (int64_t x = 0; x < mask.w; ++x) {
      int64_t idx = y * mask.w + x;
      if (!mask.v[static_cast<size_t>(idx)] || seen[static_cast<size_t>(idx)]) continue;
      Component comp;
      queue.clear();
      queue.push_back(idx);
      seen[static_cast<size_t>(idx)] = 1;
      while (!queue.empty()) {
        int64_t cur = queue.back();
        queue.pop_back();
        int64_t cy = cur / mask.w, cx = cur % mask.w;
        comp.pixels.emplace_back(cy, cx);
        for (int64_t dy = -1; dy <= 1; ++dy)
          for (int64_t dx = -1; dx <= 1; ++dx) {
            if (!dy && !dx) continue;
            int64_t ny = cy + dy, nx = cx + dx;
            if (ny < 0 || ny >= mask.h || nx < 0 || nx >= mask.w) continue;
            int64_t nidx = ny * mask.w + nx;
            if (mask.v[static_cast<size_t>(nidx)] && !seen[static_cast<size_t>(nidx)]) {
              seen[static_cast<size_t>(nidx)] = 1;
              queue.push_back(nidx);
            }
          }
      }
      double sy = 0, sx = 0;
      for (auto& [py, px] : comp.pixels) {
        sy += static_cast<double>(py);
        sx += static_cast<double>(px);
      }
      comp.cy = sy / static_cast<double>(comp.pixels.size());
      comp.cx = sx / static_cast<double>(comp.pixels.size());
      out.push_back(std::move(comp));
    }
  return out;
}

struct TargetMatchResult {
  int64_t n_true = 0;          // matched ground-truth targets
  int64_t n_gt = 0;            // all ground-truth targets
  int64_t n_false_pixels = 0;  // pixels of unmatched predicted components
  int64_t n_all = 0;           // total pixels
  std::vector<std::tuple<int64_t, int64_t, double>> matches;  // (pred, gt, dist)
};

// Greedy one-to-one matching in ascending centroid distance; a pair counts
// as detected only when the distance is strictly below 3 px.
inline TargetMatchResult match_and_count(const Mask& pred, const Mask& gt) {
  auto pred_comps = extract_targets(pred);
  auto gt_comps = extract_targets(gt);
  TargetMatchResult r;
  r.n_gt = static_cast<int64_t>(gt_comps.size());
  r.n_all = pred.h * pred.w;

  struct Pair {
    double dist;
    int64_t pi, gi;
  };
  std::vector<Pair> pairs;
  for (int64_t pi = 0; pi < static_cast<int64_t>(pred_comps.size()); ++pi)
    for (int64_t gi = 0; gi < static_cast<int64_t>(gt_comps.size()); ++gi) {
      double dy = pred_comps[static_cast<size_t>(pi)].cy - gt_comps[static_cast<size_t>(gi)].cy;
      double dx = pred_comps[static_cast<size_t>(pi)].cx - gt_comps[static_cast<size_t>(gi)].cx;
      double dist = std::sqrt(dy * dy + dx * dx);
      if (dist < 3.0) pairs.push_back({dist, pi, gi});
    }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    if (a.dist != b.dist) return a.dist < b.dist;
    if (a.gi != b.gi) return a.gi < b.gi;
    return a.pi < b.pi;
  });
  std::vector<uint8_t> pred_used(pred_comps.size(), 0), gt_used(gt_comps.size(), 0);
  for (const auto& p : pairs) {
    if (pred_used[static_cast<size_t>(p.pi)] || gt_used[static_cast<size_t>(p.gi)]) continue;
    pred_used[static_cast<size_t>(p.pi)] = 1;
    gt_used[static_cast<size_t>(p.gi)] = 1;
    r.matches.emplace_back(p.pi, p.gi, p.dist);
    r.n_true += 1;
  }
  for (size_t pi = 0; pi < pred_comps.size(); ++pi)
    if (!pred_used[pi]) r.n_false_pixels += static_cast<int64_t>(pred_comps[pi].pixels.size());
  return r;
}

struct MetricReport {
  double iou = 0, niou = 0, pd = 0, fa_e6 = 0;  // Fa in 1e-6 units
  int64_t n_frames = 0;
  // raw totals for auditability
  int64_t tp = 0, t_gt = 0, p_pred = 0;
  int64_t n_true = 0, n_gt = 0, n_false_pixels = 0, n_all = 0;
};

inline MetricReport evaluate_masks(std::span<const Mask> pred, std::span<const Mask> gt) {
  MetricReport rep;
  auto [iou, niou] = pixel_iou(pred, gt);
  rep.iou = iou;
  rep.niou = niou;
  rep.n_frames = static_cast<int64_t>(pred.size());
  for (size_t f = 0; f < pred.size(); ++f) {
    for (size_t i = 0; i < gt[f].v.size(); ++i) {
      rep.t_gt += gt[f].v[i];
      rep.p_pred += pred[f].v[i];
      rep.tp += gt[f].v[i] & pred[f].v[i];
    }
    auto match = match_and_count(pred[f], gt[f]);
    rep.n_true += match.n_true;
    rep.n_gt += match.n_gt;
    rep.n_false_pixels += match.n_false_pixels;
    rep.n_all += match.n_all;
  }
  rep.pd = rep.n_gt == 0 ? 1.0 : static_cast<double>(rep.n_true) / static_cast<double>(rep.n_gt);
  rep.fa_e6 = rep.n_all == 0
                  ? 0.0
                  : static_cast<double>(rep.n_false_pixels) / static_cast<double>(rep.n_all) * 1e6;
  return rep;
}

struct RocPoint {
  double threshold = 0, pd = 0, fa_e6 = 0;
};

inline std::vector<double> default_roc_thresholds() {
  std::vector<double> t{0.999, 0.99};
  for (int i = 19; i >= 1; --i) t.push_back(static_cast<double>(i) * 0.05);
  return t;  // descending
}

inline std::vector<RocPoint> roc(std::span<const ProbMap> probs, std::span<const Mask> gt,
                                 std::span<const double> thresholds) {
  if (probs.size() != gt.size()) throw ValidationError("roc: frame count mismatch");
  std::vector<RocPoint> curve;
  for (double thr : thresholds) {
    int64_t n_true = 0, n_gt = 0, n_false = 0, n_all = 0;
    for (size_t f = 0; f < probs.size(); ++f) {
      auto match = match_and_count(binarize(probs[f], thr), gt[f]);
      n_true += match.n_true;
      n_gt += match.n_gt;
      n_false += match.n_false_pixels;
      n_all += match.n_all;
    }
    RocPoint pt;
    pt.threshold = thr;
    pt.pd = n_gt == 0 ? 1.0 : static_cast<double>(n_true) / static_cast<double>(n_gt);
    pt.fa_e6 = n_all == 0 ? 0.0 : static_cast<double>(n_false) / static_cast<double>(n_all) * 1e6;
    curve.push_back(pt);
  }
  return curve;
}

}  // namespace lvnet
