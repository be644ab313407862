// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "diffseg/core/gradcheck.hpp"

#include <cmath>

#include "diffseg/core/errors.hpp"

namespace diffseg {

GradCheckResult grad_check(const std::function<Tensor()>& loss_fn, ParameterSet& params,
                           int probe_count, double epsilon, RngStream& rng) {
  if (!(epsilon > 0.0)) {
    throw ConfigError("grad_check epsilon must be positive");
  }
  params.zero_grad();
  Tensor loss = loss_fn();
  if (!loss.all_finite()) {
    throw NumericError("grad_check: non-finite loss");
  }
  loss.backward();

  std::vector<Parameter*> trainable;
  std::vector<std::int64_t> offsets;
  std::int64_t total = 0;
  for (auto& p : params.items()) {
    if (p.trainable) {
      trainable.push_back(&p);
      offsets.push_back(total);
      total += p.tensor.numel();
    }
  }
  if (total == 0) {
    throw ConfigError("grad_check: no trainable parameters");
  }

  auto eval = [&]() {
    NoGradGuard guard;
    Tensor l = loss_fn();
    if (!l.all_finite()) {
      throw NumericError("grad_check: non-finite loss during differencing");
    }
    return l.item();
  };

  GradCheckResult result;
  for (int probe = 0; probe < probe_count; ++probe) {
    const std::int64_t flat = rng.uniform_int(0, total - 1);
    std::size_t k = 0;
    while (k + 1 < offsets.size() && offsets[k + 1] <= flat) {
      ++k;
    }
    Parameter& p = *trainable[k];
    const std::int64_t idx = flat - offsets[k];
    const double analytic = p.tensor.has_grad() ? p.tensor.grad().at(idx) : 0.0;
    const double w0 = p.tensor.at(idx);
    // Use the stored (possibly rounded) perturbed values as the step.
    p.tensor.set(idx, w0 + epsilon);
    const double w_up = p.tensor.at(idx);
    const double up = eval();
    p.tensor.set(idx, w0 - epsilon);
    const double w_down = p.tensor.at(idx);
    const double down = eval();
    p.tensor.set(idx, w0);
    const double numeric = (up - down) / (w_up - w_down);
    const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
    if (err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_parameter = p.name;
    }
    ++result.probes;
  }
  return result;
}

}  // namespace diffseg
