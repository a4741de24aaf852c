#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "ris/tensor.hpp"

namespace ris {

struct Parameter {
  std::string name;
  Tensor tensor;
  bool frozen = false;
};

struct Init {
  enum class Kind { Constant, Uniform, Normal } kind = Kind::Constant;
  double value = 0.0;  // constant value, uniform half-width, or normal stddev

  static Init constant(double v) { return {Kind::Constant, v}; }
  static Init uniform(double half_width) { return {Kind::Uniform, half_width}; }
  static Init normal(double stddev) { return {Kind::Normal, stddev}; }
  // U(-1/sqrt(fan_in), 1/sqrt(fan_in))
  static Init fan_in(std::size_t fan) { return uniform(1.0 / std::sqrt(static_cast<double>(fan))); }
};

// Named registry of every trainable (or frozen) tensor of a model. Modules
// keep Tensor handles that share storage with the registry entries.
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0) : rng_(seed) {}

  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  Tensor add(const std::string& name, Shape shape, Init init) {
    if (index_.count(name)) throw Error(ErrorCode::ConfigError, "duplicate parameter " + name);
    std::vector<double> v(numel(shape));
    switch (init.kind) {
      case Init::Kind::Constant:
        std::fill(v.begin(), v.end(), init.value);
        break;
      case Init::Kind::Uniform: {
        std::uniform_real_distribution<double> d(-init.value, init.value);
        for (auto& x : v) x = d(rng_);
        break;
      }
      case Init::Kind::Normal: {
        std::normal_distribution<double> d(0.0, init.value);
        for (auto& x : v) x = d(rng_);
        break;
      }
    }
    Tensor t(std::move(shape), std::move(v), true);
    index_[name] = params_.size();
    params_.push_back({name, t, false});
    return t;
  }

  // Freezes every parameter whose name starts with `prefix`.
  void freeze(const std::string& prefix) {
    for (auto& p : params_) {
      if (p.name.rfind(prefix, 0) == 0) {
        p.frozen = true;
        p.tensor.set_requires_grad(false);
        p.tensor.zero_grad();
      }
    }
  }

  const std::vector<Parameter>& params() const { return params_; }
  std::vector<Parameter>& params() { return params_; }

  const Parameter* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
  }
  Parameter* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
  }

  // Number of scalar values, optionally excluding frozen tensors.
  std::size_t census(bool include_frozen = true) const {
    std::size_t n = 0;
    for (const auto& p : params_)
      if (include_frozen || !p.frozen) n += p.tensor.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  // Scales every accumulated gradient (minibatch averaging).
  void scale_grad(double s) {
    for (auto& p : params_)
      if (p.tensor.has_grad())
        for (auto& g : p.tensor.mutable_grad()) g *= s;
  }

 private:
  std::mt19937_64 rng_;
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace ris
