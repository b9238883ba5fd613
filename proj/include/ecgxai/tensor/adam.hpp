#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "ecgxai/tensor/tensor.hpp"

namespace ecgxai::tensor {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

template <typename T>
struct AdamState {
  AdamConfig config;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
  std::size_t step = 0;
  std::size_t skipped_steps = 0;

  AdamState() = default;
  explicit AdamState(AdamConfig cfg) : config(cfg) {}
};

/// One bias-corrected Adam update from the gradients stored on `params`.
/// Parameters without a gradient are treated as having a zero gradient. If
/// any gradient is non-finite the whole step is skipped and counted.
/// Returns false when the step was skipped.
template <typename T>
bool adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state, double lr_scale = 1.0) {
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.numel(), T(0));
      state.second_moment.emplace_back(p.numel(), T(0));
    }
  }
  require(state.first_moment.size() == params.size(), "adam_step: optimizer state does not match parameter list");
  for (std::size_t k = 0; k < params.size(); ++k) {
    require(state.first_moment[k].size() == params[k].numel(),
            "adam_step: moment shape mismatch for parameter " + std::to_string(k));
    if (!params[k].has_grad()) continue;
    for (T g : params[k].grad())
      if (!std::isfinite(static_cast<double>(g))) {
        ++state.skipped_steps;
        return false;
      }
  }
  ++state.step;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double step_size =
      c.learning_rate * lr_scale * std::sqrt(1.0 - std::pow(c.beta2, t)) / (1.0 - std::pow(c.beta1, t));
  // Epsilon is applied to the bias-corrected second moment.
  const double eps_hat = c.epsilon * std::sqrt(1.0 - std::pow(c.beta2, t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!params[k].has_grad()) continue;
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    auto g = params[k].grad();
    auto w = params[k].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = static_cast<T>(c.beta1 * m[i] + (1.0 - c.beta1) * g[i]);
      v[i] = static_cast<T>(c.beta2 * v[i] + (1.0 - c.beta2) * static_cast<double>(g[i]) * g[i]);
      w[i] -= static_cast<T>(step_size * m[i] / (std::sqrt(static_cast<double>(v[i])) + eps_hat));
    }
  }
  return true;
}

/// Cosine decay multiplier for step `t` of `total` (1 at t=0, floor at the end).
inline double cosine_decay(std::size_t t, std::size_t total, double floor = 0.0) {
  if (total == 0) return 1.0;
  const double progress = std::min(1.0, static_cast<double>(t) / static_cast<double>(total));
  return floor + (1.0 - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace ecgxai::tensor
