#pragma once

#include <cmath>
#include <vector>

#include "ris/parameter.hpp"

namespace ris {

struct AdamWOptions {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
};

// Decoupled weight decay Adam. Frozen parameters and parameters that received
// no gradient are left untouched.
class AdamW {
 public:
  struct Slot {
    std::vector<double> m, v;
  };

  AdamW(ParameterStore& store, AdamWOptions options) : store_(&store), options_(options) {
    for (const auto& p : store.params()) slots_.push_back({std::vector<double>(p.tensor.size(), 0.0),
                                                           std::vector<double>(p.tensor.size(), 0.0)});
  }

  const AdamWOptions& options() const { return options_; }
  void set_lr(double lr) { options_.lr = lr; }
  long step_count() const { return step_; }
  std::vector<Slot>& slots() { return slots_; }
  const std::vector<Slot>& slots() const { return slots_; }

  void restore(long step, std::vector<Slot> slots) {
    step_ = step;
    slots_ = std::move(slots);
    check_state();
  }

  void step() {
    check_state();
    ++step_;
    const double b1 = options_.beta1, b2 = options_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    auto& params = store_->params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      if (p.frozen || !p.tensor.has_grad()) continue;
      auto value = p.tensor.mutable_data();
      auto grad = p.tensor.grad();
      auto& [m, v] = slots_[i];
      for (std::size_t k = 0; k < value.size(); ++k) {
        m[k] = b1 * m[k] + (1.0 - b1) * grad[k];
        v[k] = b2 * v[k] + (1.0 - b2) * grad[k] * grad[k];
        value[k] *= 1.0 - options_.lr * options_.weight_decay;
        value[k] -= options_.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + options_.eps);
      }
    }
  }

 private:
  void check_state() const {
    const auto& params = store_->params();
    if (slots_.size() != params.size())
      throw Error(ErrorCode::StateMismatch, "optimizer tracks " + std::to_string(slots_.size()) +
                                                " tensors, model has " + std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i)
      if (slots_[i].m.size() != params[i].tensor.size() || slots_[i].v.size() != params[i].tensor.size())
        throw Error(ErrorCode::StateMismatch, "optimizer state for " + params[i].name + " has the wrong size");
  }

  ParameterStore* store_;
  AdamWOptions options_;
  std::vector<Slot> slots_;
  long step_ = 0;
};

}  // namespace ris
