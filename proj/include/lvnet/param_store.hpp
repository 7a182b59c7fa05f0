#pragma once

#include <map>
#include <string>

#include "lvnet/random.hpp"
#include "lvnet/tensor.hpp"

namespace lvnet {

// Ordered map from hierarchical name to parameter tensor. std::map keeps
// iteration lexicographic, which makes optimizer sweeps and checkpoint
// layout deterministic.
template <typename T>
class ParameterStore {
 public:
  using Map = std::map<std::string, Tensor<T>>;

  Tensor<T>& add(const std::string& name, Tensor<T> t) {
    auto [it, inserted] = params_.emplace(name, std::move(t));
    if (!inserted) throw ConfigError("parameter registered twice: " + name);
    it->second.set_requires_grad(true);
    return it->second;
  }

  Tensor<T>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }

  const Tensor<T>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  size_t size() const { return params_.size(); }
  typename Map::iterator begin() { return params_.begin(); }
  typename Map::iterator end() { return params_.end(); }
  typename Map::const_iterator begin() const { return params_.begin(); }
  typename Map::const_iterator end() const { return params_.end(); }

  int64_t total_params() const {
    int64_t n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
  }

  int64_t total_params_with_prefix(const std::string& prefix) const {
    int64_t n = 0;
    for (const auto& [name, t] : params_)
      if (name.rfind(prefix, 0) == 0) n += t.numel();
    return n;
  }

  void zero_grads() {
    for (auto& [name, t] : params_) t.zero_grad();
  }

 private:
  Map params_;
};

// Bundles a store with the init RNG so module constructors can draw
// deterministic weights while registering under hierarchical names.
template <typename T>
struct ParamBuilder {
  ParameterStore<T>& store;
  Rng& rng;

  Tensor<T>& trunc_normal(const std::string& name, Shape shape, double stddev = 0.02) {
    auto t = Tensor<T>::zeros(shape);
    for (auto& v : t.raw_data()) v = static_cast<T>(rng.trunc_normal(0.0, stddev));
    return store.add(name, std::move(t));
  }

  // He-normal over fan-in; used for conv kernels.
  Tensor<T>& he_normal(const std::string& name, Shape shape, int64_t fan_in) {
    double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    auto t = Tensor<T>::zeros(shape);
    for (auto& v : t.raw_data()) v = static_cast<T>(rng.normal(0.0, stddev));
    return store.add(name, std::move(t));
  }

  Tensor<T>& zeros(const std::string& name, Shape shape) {
    return store.add(name, Tensor<T>::zeros(std::move(shape)));
  }

  Tensor<T>& ones(const std::string& name, Shape shape) {
    return store.add(name, Tensor<T>::filled(std::move(shape), T(1)));
  }
};

}  // namespace lvnet
