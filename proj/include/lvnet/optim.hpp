#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lvnet/param_store.hpp"

namespace lvnet {

template <typename T>
struct AdamState {
  struct Slot {
    std::vector<T> m;
    std::vector<T> v;
  };
  std::map<std::string, Slot> slots;
  int64_t t = 0;
};

struct AdamHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over every parameter in store order. Gradients are
// consumed and cleared; a trainable parameter without a gradient means the
// caller skipped backward() and is an error.
template <typename T>
void adam_step(ParameterStore<T>& store, AdamState<T>& state, const AdamHyper& hp) {
  state.t += 1;
  double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.t));
  double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.t));
  for (auto& [name, param] : store) {
    if (!param.requires_grad()) continue;
    if (!param.has_grad())
      throw NumericError("adam_step: missing gradient for trainable parameter '" + name + "'");
    auto& slot = state.slots[name];
    size_t n = param.data().size();
    if (slot.m.empty()) {
      slot.m.assign(n, T(0));
      slot.v.assign(n, T(0));
    }
    const std::vector<T>& g = param.grad();
    std::vector<T>& w = param.raw_data();
    for (size_t i = 0; i < n; ++i) {
      double gi = static_cast<double>(g[i]);
      double m = hp.beta1 * static_cast<double>(slot.m[i]) + (1.0 - hp.beta1) * gi;
      double v = hp.beta2 * static_cast<double>(slot.v[i]) + (1.0 - hp.beta2) * gi * gi;
      slot.m[i] = static_cast<T>(m);
      slot.v[i] = static_cast<T>(v);
      double mhat = m / bc1;
      double vhat = v / bc2;
      w[i] = static_cast<T>(static_cast<double>(w[i]) - hp.lr * mhat / (std::sqrt(vhat) + hp.eps));
      if (!std::isfinite(static_cast<double>(w[i])))
        throw NumericError("adam_step: non-finite update for parameter '" + name + "'");
    }
    param.zero_grad();
  }
}

}  // namespace lvnet
