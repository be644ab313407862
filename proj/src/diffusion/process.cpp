// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "diffseg/diffusion/process.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include "diffseg/core/errors.hpp"
#include "diffseg/core/ops.hpp"

namespace diffseg::diffusion {

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape() || a.dtype() != b.dtype()) {
    throw ConfigError(std::string(what) + ": tensors " + shape_str(a.shape()) + " and " +
                      shape_str(b.shape()) + " must match");
  }
}

// out = ca * a + cb * b, elementwise, item-wise coefficients.
Tensor affine2(const Tensor& a, const Tensor& b, const std::vector<double>& ca,
               const std::vector<double>& cb) {
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  const auto items = static_cast<std::int64_t>(ca.size());
  const auto per = a.numel() / items;
  visit_dtype(a.dtype(), [&]<class T>() {
    auto av = a.data<T>();
    auto bv = b.data<T>();
    auto ov = out.data<T>();
    for (std::int64_t n = 0; n < items; ++n) {
      for (std::int64_t i = n * per; i < (n + 1) * per; ++i) {
        ov[i] = static_cast<T>(ca[n] * av[i] + cb[n] * bv[i]);
      }
    }
  });
  return out;
}

}  // namespace

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
  sched.check_step(t);
  require_same(x0, eps, "q_sample");
  const double ab = sched.alpha_bar(t);
  return affine2(x0, eps, {std::sqrt(ab)}, {std::sqrt(1.0 - ab)});
}

Tensor q_sample(const Tensor& x0, const std::vector<int>& steps, const Tensor& eps,
                const NoiseSchedule& sched) {
  require_same(x0, eps, "q_sample");
  if (x0.ndim() == 0 || static_cast<std::int64_t>(steps.size()) != x0.dim(0)) {
    throw ConfigError("q_sample: one step per batch item required");
  }
  std::vector<double> ca;
  std::vector<double> cb;
  for (int t : steps) {
    sched.check_step(t);
    ca.push_back(std::sqrt(sched.alpha_bar(t)));
    cb.push_back(std::sqrt(1.0 - sched.alpha_bar(t)));
  }
  return affine2(x0, eps, ca, cb);
}

Tensor q_step(const Tensor& x_prev, int t, const Tensor& noise, const NoiseSchedule& sched) {
  sched.check_step(t);
  require_same(x_prev, noise, "q_step");
  const double b = sched.beta(t);
  return affine2(x_prev, noise, {std::sqrt(1.0 - b)}, {std::sqrt(b)});
}

Tensor posterior_mu(const Tensor& x_t, int t, const Tensor& eps_hat, const NoiseSchedule& sched) {
  sched.check_step(t);
  require_same(x_t, eps_hat, "posterior_mu");
  if (!x_t.all_finite() || !eps_hat.all_finite()) {
    throw NumericError("posterior_mu: non-finite input at step " + std::to_string(t));
  }
  const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha(t));
  const double coef = sched.beta(t) / std::sqrt(1.0 - sched.alpha_bar(t));
  return affine2(x_t, eps_hat, {inv_sqrt_alpha}, {-inv_sqrt_alpha * coef});
}

Tensor p_sample_step(const Tensor& x_t, int t, const Tensor& eps_hat, const NoiseSchedule& sched,
                     const Tensor& noise) {
  Tensor mu = posterior_mu(x_t, t, eps_hat, sched);
  if (t == 1 || !noise.defined()) {
    return mu;
  }
  require_same(mu, noise, "p_sample_step");
  const double sigma = std::sqrt(sched.posterior_variance(t));
  return affine2(mu, noise, {1.0}, {sigma});
}

Tensor reverse_process(const NoiseModel& model, const Tensor& x_T, const NoiseSchedule& sched,
                       const NoiseSource& noise) {
  NoGradGuard guard;
  Tensor x = x_T.clone();
  const auto batch = x.ndim() > 0 ? x.dim(0) : 1;
  for (int t = sched.steps; t >= 1; --t) {
    Tensor eps_hat = model(x, std::vector<int>(static_cast<std::size_t>(batch), t));
    if (eps_hat.shape() != x.shape()) {
      throw ConfigError("noise model returned " + shape_str(eps_hat.shape()) + " for input " +
                        shape_str(x.shape()) + " at step " + std::to_string(t));
    }
    Tensor z = t > 1 ? noise(x.shape(), x.dtype()) : Tensor();
    x = p_sample_step(x, t, eps_hat.detach(), sched, z);
  }
  return x;
}

Tensor sample_loop(const NoiseModel& model, const Shape& shape, const NoiseSchedule& sched,
                   RngStream& rng, DType dtype) {
  Tensor x_T = rng.normal_like(shape, dtype);
  return reverse_process(model, x_T, sched,
                         [&rng](const Shape& s, DType d) { return rng.normal_like(s, d); });
}

Tensor clamp_unit(const Tensor& x) {
  Tensor out = x.clone();
  visit_dtype(out.dtype(), [&]<class T>() {
    for (auto& v : out.data<T>()) v = std::clamp(v, T(-1), T(1));
  });
  return out;
}

DdpmLoss ddpm_loss(const NoiseModel& model, const Tensor& x0, const NoiseSchedule& sched,
                   RngStream& rng) {
  DdpmLoss result;
  visit_dtype(x0.dtype(), [&]<class T>() {
    for (T v : x0.data<T>()) {
      if (v < T(-1.5) || v > T(1.5)) {
        result.suspicious_range = true;
        break;
      }
    }
  });
  if (result.suspicious_range) {
    std::cerr << "warning: ddpm_loss input outside [-1.5, 1.5]; check intensity normalization\n";
  }
  const auto batch = x0.dim(0);
  for (std::int64_t i = 0; i < batch; ++i) {
    result.steps.push_back(static_cast<int>(rng.uniform_int(1, sched.steps)));
  }
  Tensor eps = rng.normal_like(x0.shape(), x0.dtype());
  Tensor x_t = q_sample(x0.detach(), result.steps, eps, sched);
  Tensor pred = model(x_t, result.steps);
  result.loss = ops::mse_loss(pred, eps);
  return result;
}

}  // namespace diffseg::diffusion
