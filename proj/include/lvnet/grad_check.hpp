#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "lvnet/tensor.hpp"

namespace lvnet {

// Central finite differences against reverse-mode gradients, in float64.
// The closure must map the inputs to a scalar. Returns the worst relative
// error; the denominator floors at 1e-4 so true-zero gradients are judged
// on an absolute scale instead of blowing up.
inline double grad_check(
    const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& closure,
    std::vector<Tensor<double>> inputs, double eps = 1e-4) {
  for (auto& in : inputs) in.set_requires_grad(true);
  Tensor<double> out = closure(inputs);
  if (out.numel() != 1) throw UsageError("grad_check: closure output must be scalar");
  for (auto& in : inputs) in.zero_grad();
  out.backward();

  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (auto& in : inputs)
    analytic.push_back(in.has_grad() ? in.grad() : std::vector<double>(in.data().size(), 0.0));

  double worst = 0.0;
  for (size_t t = 0; t < inputs.size(); ++t) {
    auto& values = inputs[t].raw_data();
    for (size_t i = 0; i < values.size(); ++i) {
      double orig = values[i];
      values[i] = orig + eps;
      double fp = closure(inputs).item();
      values[i] = orig - eps;
      double fm = closure(inputs).item();
      values[i] = orig;
      double fd = (fp - fm) / (2.0 * eps);
      double ad = analytic[t][i];
      double denom = std::max({std::abs(ad), std::abs(fd), 1e-4});
      worst = std::max(worst, std::abs(ad - fd) / denom);
    }
  }
  for (auto& in : inputs) in.zero_grad();
  return worst;
}

}  // namespace lvnet
