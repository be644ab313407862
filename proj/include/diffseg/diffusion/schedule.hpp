// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "diffseg/core/archive.hpp"

namespace diffseg::diffusion {

enum class ScheduleKind { linear, cosine, table };

std::string to_string(ScheduleKind kind);
ScheduleKind schedule_kind_from_string(const std::string& s);

// Tables are 1-indexed by step: index 0 holds the t=0 convention
// (beta 0, alpha 1, alpha_bar 1); steps 1..T follow.
struct NoiseSchedule {
  int steps = 0;  // T
  ScheduleKind kind = ScheduleKind::linear;
  double beta_start = 0.0;
  double beta_end = 0.0;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;

  double beta(int t) const { return betas.at(t); }
  double alpha(int t) const { return alphas.at(t); }
  double alpha_bar(int t) const { return alpha_bars.at(t); }
  // Posterior variance ((1 - abar_{t-1}) / (1 - abar_t)) * beta_t.
  double posterior_variance(int t) const;
  void check_step(int t) const;  // 1 <= t <= T

  void to_metadata(Metadata& meta) const;
  static NoiseSchedule from_metadata(const Metadata& meta);
};

// Linear: beta_t = beta_start + (t-1)(beta_end-beta_start)/(T-1).
// Cosine: the squared-cosine alpha_bar curve with offset 0.008, betas clipped
// at 0.999; the bounds are ignored.
NoiseSchedule make_schedule(int steps, double beta_start, double beta_end, ScheduleKind kind);
NoiseSchedule schedule_from_betas(const std::vector<double>& betas);

// Sinusoidal step embedding: first half sin(t*f_i), second half cos(t*f_i),
// f_i = 10000^(-2i/dim).
std::vector<double> time_embedding(int t, int dim);

}  // namespace diffseg::diffusion
