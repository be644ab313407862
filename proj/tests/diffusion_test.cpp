// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include <doctest.h>

#include "diffseg/core/errors.hpp"
#include "diffseg/core/gradcheck.hpp"
#include "diffseg/core/ops.hpp"
#include "diffseg/diffusion/process.hpp"
#include "diffseg/diffusion/schedule.hpp"
#include "diffseg/unet/unet.hpp"
#include "helpers.hpp"

using namespace diffseg;
using namespace diffseg::diffusion;
using diffseg::testing::random_tensor;

namespace {

NoiseSchedule table4() { return schedule_from_betas({0.1, 0.2, 0.3, 0.4}); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a.at(i) - b.at(i)));
  return worst;
}

}  // namespace

TEST_CASE("linear schedule endpoints") {
  const auto s = make_schedule(1000, 1e-4, 0.02, ScheduleKind::linear);
  CHECK(s.beta(1) == 1e-4);
  CHECK(s.beta(1000) == 0.02);
  const auto one = make_schedule(1, 1e-4, 0.02, ScheduleKind::linear);
  CHECK(one.alpha_bar(1) == doctest::Approx(1.0 - 1e-4).epsilon(1e-15));
  CHECK_THROWS_AS(make_schedule(0, 1e-4, 0.02, ScheduleKind::linear), ConfigError);
  CHECK_THROWS_AS(make_schedule(10, 0.02, 1e-4, ScheduleKind::linear), ConfigError);
}

TEST_CASE("cosine schedule is a valid decreasing chain") {
  const auto s = make_schedule(200, 0, 0, ScheduleKind::cosine);
  for (int t = 1; t <= 200; ++t) {
    CHECK(s.beta(t) > 0.0);
    CHECK(s.beta(t) < 1.0);
    if (t > 1) CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
  }
}

TEST_CASE("explicit table gives product oracle and posterior variance") {
  const auto s = table4();
  CHECK(s.alpha_bar(4) == doctest::Approx(0.3024).epsilon(1e-15));
  CHECK(std::abs(s.posterior_variance(4) - 0.496 / 0.6976 * 0.4) < 1e-12);
  CHECK(std::abs(s.posterior_variance(4) - 0.2844) < 1e-4);
  CHECK_THROWS_AS(s.check_step(0), ConfigError);
  CHECK_THROWS_AS(s.check_step(5), ConfigError);
  Metadata meta;
  s.to_metadata(meta);
  const auto back = NoiseSchedule::from_metadata(meta);
  CHECK(back.betas == s.betas);
}

TEST_CASE("q_sample oracles") {
  const auto s = table4();
  const Tensor x0 = random_tensor({1, 1, 4, 4}, DType::f64, 1);
  const Tensor zero = Tensor::zeros({1, 1, 4, 4}, DType::f64);
  const Tensor xt = q_sample(x0, 4, zero, s);
  for (int i = 0; i < 16; ++i) CHECK(xt.at(i) == doctest::Approx(std::sqrt(0.3024) * x0.at(i)));
  const Tensor ones = Tensor::full({1, 1, 4, 4}, 1.0, DType::f64);
  const Tensor xt2 = q_sample(zero, 4, ones, s);
  CHECK(xt2.at(5) == doctest::Approx(0.8352).epsilon(1e-4));

  const auto full = make_schedule(1000, 1e-4, 0.02, ScheduleKind::linear);
  const Tensor eps = random_tensor({1, 1, 4, 4}, DType::f64, 2);
  const Tensor xT = q_sample(x0, 1000, eps, full);
  const double bound = std::sqrt(full.alpha_bar(1000));
  for (int i = 0; i < 16; ++i) {
    CHECK(std::abs(xT.at(i) - eps.at(i)) <= bound * std::abs(x0.at(i)) + 1e-3 * std::abs(eps.at(i)) + 1e-12);
  }
}

TEST_CASE("q_step oracles") {
  const auto s = schedule_from_betas({0.19});
  const Tensor x = random_tensor({8}, DType::f64, 3);
  const Tensor y = q_step(x, 1, Tensor::zeros({8}, DType::f64), s);
  for (int i = 0; i < 8; ++i) CHECK(y.at(i) == doctest::Approx(0.9 * x.at(i)).epsilon(1e-12));
  const auto tiny = schedule_from_betas({1e-12});
  const Tensor z = q_step(x, 1, random_tensor({8}, DType::f64, 4), tiny);
  CHECK(max_abs_diff(x, z) < 1e-5);
}

TEST_CASE("q_step chain variance matches 1 - alpha_bar") {
  const auto s = table4();
  const std::int64_t n = 100000;
  RngStream rng(11, 0);
  Tensor x = Tensor::zeros({n}, DType::f64);
  for (int t = 1; t <= 4; ++t) x = q_step(x, t, rng.normal_like({n}, DType::f64), s);
  double m = 0.0, v = 0.0;
  for (std::int64_t i = 0; i < n; ++i) m += x.at(i);
  m /= n;
  for (std::int64_t i = 0; i < n; ++i) v += (x.at(i) - m) * (x.at(i) - m);
  v /= n - 1;
  CHECK(std::abs(v / 0.6976 - 1.0) < 0.02);
}

TEST_CASE("posterior_mu oracles") {
  const auto s = table4();
  const Tensor xt = random_tensor({1, 1, 4, 4}, DType::f64, 5);
  const Tensor zero = Tensor::zeros({1, 1, 4, 4}, DType::f64);
  const Tensor mu0 = posterior_mu(xt, 2, zero, s);
  for (int i = 0; i < 16; ++i) CHECK(mu0.at(i) == doctest::Approx(xt.at(i) / std::sqrt(0.8)));

  // Scalar case with beta_t = 0.1, abar_t = 0.3024.
  NoiseSchedule custom = table4();
  custom.betas = {0.0, 0.4, 0.3, 0.2, 0.1};
  custom.alphas = {1.0, 0.6, 0.7, 0.8, 0.9};
  custom.alpha_bars = {1.0, 0.6, 0.42, 0.336, 0.3024};
  const Tensor one = Tensor::full({1}, 1.0, DType::f64);
  const Tensor mu = posterior_mu(one, 4, one, custom);
  CHECK(mu.at(0) == doctest::Approx((1.0 - 0.1 / std::sqrt(0.6976)) / std::sqrt(0.9)).epsilon(1e-12));
  CHECK(mu.at(0) == doctest::Approx(0.9280).epsilon(1e-4));

  const auto full = make_schedule(1000, 1e-4, 0.02, ScheduleKind::linear);
  const Tensor x0 = random_tensor({1, 1, 16, 16}, DType::f64, 6);
  const Tensor eps = random_tensor({1, 1, 16, 16}, DType::f64, 7);
  for (int t : {2, 10, 500, 1000}) {
    const Tensor x_t = q_sample(x0, t, eps, full);
    const Tensor m = posterior_mu(x_t, t, eps, full);
    const double ab = full.alpha_bar(t), abp = full.alpha_bar(t - 1), b = full.beta(t);
    double worst = 0.0;
    for (int i = 0; i < 256; ++i) {
      const double ref =
          (std::sqrt(abp) * b * x0.at(i) + std::sqrt(full.alpha(t)) * (1 - abp) * x_t.at(i)) / (1 - ab);
      worst = std::max(worst, std::abs(ref - m.at(i)));
    }
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("p_sample_step terminal and deterministic branches") {
  const auto s = table4();
  const Tensor xt = random_tensor({4}, DType::f64, 8);
  const Tensor eh = random_tensor({4}, DType::f64, 9);
  const Tensor noise = random_tensor({4}, DType::f64, 10);
  CHECK(max_abs_diff(p_sample_step(xt, 1, eh, s, noise), posterior_mu(xt, 1, eh, s)) == 0.0);
  CHECK(max_abs_diff(p_sample_step(xt, 3, eh, s, Tensor::zeros({4}, DType::f64)),
                     posterior_mu(xt, 3, eh, s)) == 0.0);
  const Tensor stoch = p_sample_step(xt, 4, eh, s, noise);
  const Tensor mu = posterior_mu(xt, 4, eh, s);
  for (int i = 0; i < 4; ++i) {
    CHECK(stoch.at(i) == doctest::Approx(mu.at(i) + std::sqrt(s.posterior_variance(4)) * noise.at(i)));
  }
}

TEST_CASE("reverse process with a zero model and zero noise") {
  const auto s = table4();
  const NoiseModel zero_model = [](const Tensor& x, const std::vector<int>&) {
    return Tensor::zeros(x.shape(), x.dtype());
  };
  const Tensor xT = Tensor::full({1, 1, 2, 2}, 1.0, DType::f64);
  const Tensor x0 = reverse_process(zero_model, xT, s, [](const Shape& sh, DType d) {
    return Tensor::zeros(sh, d);
  });
  CHECK(x0.at(0) == doctest::Approx(1.0 / std::sqrt(0.3024)).epsilon(1e-12));
  CHECK(x0.at(0) == doctest::Approx(1.8185).epsilon(1e-4));
}

TEST_CASE("sample_loop shape and determinism") {
  const auto s = table4();
  unet::UNet net = unet::build_noise_unet(diffseg::testing::tiny_unet(), 1);
  diffseg::testing::perturb(net.params(), 2, 0.05);
  const NoiseModel model = [&](const Tensor& x, const std::vector<int>& t) { return net.forward(x, t); };
  NoGradGuard guard;
  RngStream a(5, 1), b(5, 1);
  const Tensor x1 = sample_loop(model, {1, 1, 8, 8}, s, a);
  const Tensor x2 = sample_loop(model, {1, 1, 8, 8}, s, b);
  CHECK(x1.shape() == Shape{1, 1, 8, 8});
  CHECK(max_abs_diff(x1, x2) == 0.0);
}

TEST_CASE("ddpm_loss oracles") {
  const auto s = make_schedule(50, 1e-4, 0.02, ScheduleKind::linear);
  const Tensor x0 = random_tensor({4, 1, 8, 8}, DType::f64, 12, 0.3);

  // Inverts q_sample with the known x0, so it predicts the true noise.
  RngStream probe(3, 0);
  const NoiseModel oracle = [&](const Tensor& x_t, const std::vector<int>& steps) {
    Tensor eps = Tensor::zeros(x_t.shape(), x_t.dtype());
    const auto per = x_t.numel() / x_t.dim(0);
    for (std::int64_t b = 0; b < x_t.dim(0); ++b) {
      const double ab = s.alpha_bar(steps[b]);
      for (std::int64_t i = 0; i < per; ++i) {
        const auto k = b * per + i;
        eps.set(k, (x_t.at(k) - std::sqrt(ab) * x0.at(k)) / std::sqrt(1 - ab));
      }
    }
    return eps;
  };
  const auto exact = ddpm_loss(oracle, x0, s, probe);
  CHECK(exact.loss.item() < 1e-12);

  const NoiseModel zero = [](const Tensor& x, const std::vector<int>&) {
    return Tensor::zeros(x.shape(), x.dtype());
  };
  RngStream rng(4, 0);
  const Tensor big = random_tensor({100, 1, 10, 10}, DType::f64, 13, 0.3);
  CHECK(std::abs(ddpm_loss(zero, big, s, rng).loss.item() - 1.0) < 0.05);
}

TEST_CASE("ddpm_loss gradient on a tiny U-Net passes grad_check in f32") {
  const auto s = make_schedule(20, 1e-4, 0.02, ScheduleKind::linear);
  unet::UNet net = unet::build_noise_unet(diffseg::testing::tiny_unet(), 3);
  diffseg::testing::perturb(net.params(), 4, 0.05);
  const Tensor x0 = random_tensor({2, 1, 8, 8}, DType::f32, 14, 0.5);
  const NoiseModel model = [&](const Tensor& x, const std::vector<int>& t) { return net.forward(x, t); };
  auto loss = [&] {
    RngStream rng(9, 0);
    return ddpm_loss(model, x0, s, rng).loss;
  };
  RngStream probes(1, 0);
  const auto r = grad_check(loss, net.params(), 20, 1e-2, probes);
  INFO("worst: " << r.worst_parameter);
  CHECK(r.max_rel_error < 1e-2);
}

TEST_CASE("time embedding oracles") {
  const auto e0 = time_embedding(0, 8);
  for (int i = 0; i < 4; ++i) {
    CHECK(e0[i] == 0.0);
    CHECK(e0[4 + i] == 1.0);
  }
  const auto e1 = time_embedding(1, 4);
  CHECK(e1[0] == doctest::Approx(std::sin(1.0)).epsilon(1e-12));
  CHECK(e1[1] == doctest::Approx(std::sin(1e-2)).epsilon(1e-12));
  CHECK(e1[2] == doctest::Approx(std::cos(1.0)).epsilon(1e-12));
  CHECK(e1[3] == doctest::Approx(std::cos(1e-2)).epsilon(1e-12));
  CHECK(time_embedding(37, 16) == time_embedding(37, 16));
  CHECK_THROWS_AS(time_embedding(1, 3), ConfigError);
}
