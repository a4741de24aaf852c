#pragma once

// Central finite differences against the tape gradient.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "ris/ops.hpp"

namespace ris {

struct GradCheckOptions {
  double h = 1e-5;
  double tolerance = 1e-5;
  std::size_t probes = 10;
  std::uint64_t seed = 0;
  // Random unit direction over all inputs instead of single coordinates.
  bool directional = false;
  // Denominator floor of the relative error.
  double floor = 1e-8;
};

struct GradCheckProbe {
  std::size_t input = 0;
  std::size_t index = 0;  // coordinate probes only
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckProbe> probes;
  std::size_t skipped_kinks = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

inline double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// `f` must rebuild a scalar from the current values of `inputs` (leaf tensors)
// on every call. Probes whose +/-h evaluations land on different sides of a
// kink (relu sign pattern changes) are discarded and redrawn.
template <class F>
GradCheckReport finite_difference_check(F&& f, std::vector<Tensor> inputs, const GradCheckOptions& opt = {}) {
  for (auto& t : inputs) {
    if (!t.is_leaf()) throw Error(ErrorCode::ConfigError, "finite_difference_check needs leaf inputs");
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tensor loss = f();
    if (loss.size() != 1) throw Error(ErrorCode::NotScalar, "finite_difference_check on " + shape_string(loss.shape()));
    backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  std::size_t total = 0;
  for (auto& t : inputs) {
    analytic.emplace_back(t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                       : std::vector<double>(t.size(), 0.0));
    total += t.size();
  }

  NoGradGuard no_grad;
  auto evaluate = [&](std::uint64_t& signature) {
    detail::kink_monitor = {};
    detail::kink_monitor.active = true;
    const double v = f().item();
    signature = detail::kink_monitor.signature;
    detail::kink_monitor.active = false;
    return v;
  };
  // Moves every input by step * direction (coordinate probes pass a one-hot direction).
  auto shift = [&](const std::vector<std::vector<double>>& dir, double step) {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      auto d = inputs[i].mutable_data();
      for (std::size_t k = 0; k < d.size(); ++k) d[k] += step * dir[i][k];
    }
  };

  std::mt19937_64 rng(opt.seed);
  GradCheckReport report;
  std::uint64_t sig0 = 0, sig_plus = 0, sig_minus = 0;
  const std::size_t max_attempts = opt.probes * 50;
  std::vector<std::vector<double>> backup;
  for (auto& t : inputs) backup.emplace_back(t.data().begin(), t.data().end());

  for (std::size_t attempt = 0; attempt < max_attempts && report.probes.size() < opt.probes; ++attempt) {
    std::vector<std::vector<double>> dir;
    for (auto& t : inputs) dir.emplace_back(t.size(), 0.0);
    GradCheckProbe probe;
    if (opt.directional) {
      std::normal_distribution<double> normal(0.0, 1.0);
      double norm = 0.0;
      for (auto& d : dir)
        for (auto& x : d) {
          x = normal(rng);
          norm += x * x;
        }
      norm = std::sqrt(norm);
      for (std::size_t i = 0; i < dir.size(); ++i)
        for (std::size_t k = 0; k < dir[i].size(); ++k) {
          dir[i][k] /= norm;
          probe.analytic += dir[i][k] * analytic[i][k];
        }
    } else {
      std::size_t flat = std::uniform_int_distribution<std::size_t>(0, total - 1)(rng);
      while (flat >= dir[probe.input].size()) flat -= dir[probe.input++].size();
      probe.index = flat;
      dir[probe.input][flat] = 1.0;
      probe.analytic = analytic[probe.input][flat];
    }
    evaluate(sig0);
    shift(dir, opt.h);
    const double plus = evaluate(sig_plus);
    shift(dir, -2.0 * opt.h);
    const double minus = evaluate(sig_minus);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      auto d = inputs[i].mutable_data();
      std::copy(backup[i].begin(), backup[i].end(), d.begin());
    }
    if (sig_plus != sig0 || sig_minus != sig0) {
      ++report.skipped_kinks;
      continue;
    }
    probe.numeric = (plus - minus) / (2.0 * opt.h);
    probe.rel_error = relative_error(probe.analytic, probe.numeric, opt.floor);
    report.max_rel_error = std::max(report.max_rel_error, probe.rel_error);
    report.probes.push_back(probe);
  }
  report.passed = !report.probes.empty() && report.max_rel_error < opt.tolerance;
  return report;
}

}  // namespace ris
