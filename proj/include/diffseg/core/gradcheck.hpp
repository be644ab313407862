// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>

#include "diffseg/core/nn.hpp"
#include "diffseg/core/rng.hpp"

namespace diffseg {

struct GradCheckResult {
  double max_rel_error = 0.0;
  int probes = 0;
  std::string worst_parameter;
};

// Compares reverse-mode gradients against central differences
// (f(w+eps) - f(w-eps)) / 2eps on randomly probed trainable coordinates.
// Error per probe: |analytic - numeric| / max(1, |analytic|).
GradCheckResult grad_check(const std::function<Tensor()>& loss_fn, ParameterSet& params,
                           int probe_count, double epsilon, RngStream& rng);

}  // namespace diffseg
