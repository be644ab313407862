// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <vector>

#include "diffseg/core/rng.hpp"
#include "diffseg/core/tensor.hpp"
#include "diffseg/diffusion/schedule.hpp"

namespace diffseg::diffusion {

// Maps (x_t [B,...], per-item steps) to a noise estimate of the same shape.
using NoiseModel = std::function<Tensor(const Tensor& x_t, const std::vector<int>& steps)>;

// sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched);
// Same with one step per leading-axis item.
Tensor q_sample(const Tensor& x0, const std::vector<int>& steps, const Tensor& eps,
                const NoiseSchedule& sched);

// One forward transition: sqrt(1 - beta_t) x_prev + sqrt(beta_t) noise.
Tensor q_step(const Tensor& x_prev, int t, const Tensor& noise, const NoiseSchedule& sched);

// (1/sqrt(alpha_t)) (x_t - beta_t / sqrt(1 - abar_t) * eps_hat).
Tensor posterior_mu(const Tensor& x_t, int t, const Tensor& eps_hat, const NoiseSchedule& sched);

// posterior_mu + sigma_t * noise, sigma_t^2 the posterior variance; no noise at t = 1.
Tensor p_sample_step(const Tensor& x_t, int t, const Tensor& eps_hat, const NoiseSchedule& sched,
                     const Tensor& noise);

using NoiseSource = std::function<Tensor(const Shape&, DType)>;

// Runs t = T..1 from the given x_T. Returns raw (unclamped) x_0.
Tensor reverse_process(const NoiseModel& model, const Tensor& x_T, const NoiseSchedule& sched,
                       const NoiseSource& noise);

// Draws x_T ~ N(0, I) and per-step noise from rng.
Tensor sample_loop(const NoiseModel& model, const Shape& shape, const NoiseSchedule& sched,
                   RngStream& rng, DType dtype = DType::f32);

// Copy clamped to [-1, 1], for image export.
Tensor clamp_unit(const Tensor& x);

struct DdpmLoss {
  Tensor loss;             // scalar, attached to the model graph
  std::vector<int> steps;  // sampled t per item
  bool suspicious_range = false;  // input outside [-1.5, 1.5]
};

// Mean over all elements of (eps - model(q_sample(x0, t, eps), t))^2 with
// t ~ U{1..T} per item and eps ~ N(0, I).
DdpmLoss ddpm_loss(const NoiseModel& model, const Tensor& x0, const NoiseSchedule& sched,
                   RngStream& rng);

}  // namespace diffseg::diffusion
