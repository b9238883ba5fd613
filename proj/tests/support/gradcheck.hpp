#pragma once

// Central-difference gradient oracle. Independent of the reverse-mode path:
// it only evaluates forward values under NoGradGuard.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ecgxai/core/random.hpp"
#include "ecgxai/tensor/ops.hpp"

namespace ecgxai::testing {

using tensor::Tensor;
using TensorFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// |analytic - numeric| / max(|analytic|, |numeric|, floor)
inline double relative_error(double analytic, double numeric, double floor = 1e-2) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares reverse-mode gradients of sum(f(inputs) * R), R a fixed random
/// projection, against central differences with step h.
inline GradCheckResult gradcheck(const TensorFn& f, std::vector<Tensor<double>> inputs, std::uint64_t seed,
                                 double h = 1e-4) {
  Rng rng(seed ^ 0xA5A5A5A5ULL);
  Tensor<double> probe;
  {
    tensor::NoGradGuard guard;
    const Tensor<double> out = f(inputs);
    probe = Tensor<double>::zeros(out.shape());
    for (auto& v : probe.values()) v = rng.uniform(-1.0, 1.0);
  }
  auto loss_value = [&](const std::vector<Tensor<double>>& in) {
    tensor::NoGradGuard guard;
    const Tensor<double> out = f(in);
    double acc = 0.0;
    for (std::size_t i = 0; i < out.numel(); ++i) acc += out[i] * probe[i];
    return acc;
  };

  for (auto& t : inputs) {
    t.zero_grad();
    t.set_requires_grad(true);
  }
  const Tensor<double> loss = tensor::sum(tensor::mul(f(inputs), probe));
  tensor::backward(loss);

  GradCheckResult result;
  for (auto& t : inputs) {
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double analytic = t.has_grad() ? t.grad()[i] : 0.0;
      const double saved = t[i];
      t[i] = saved + h;
      const double up = loss_value(inputs);
      t[i] = saved - h;
      const double down = loss_value(inputs);
      t[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      result.max_rel_error = std::max(result.max_rel_error, relative_error(analytic, numeric));
      ++result.checked;
    }
  }
  return result;
}

}  // namespace ecgxai::testing
