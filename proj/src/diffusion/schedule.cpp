// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "diffseg/diffusion/schedule.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "diffseg/core/errors.hpp"

namespace diffseg::diffusion {

std::string to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::linear:
      return "linear";
    case ScheduleKind::cosine:
      return "cosine";
    case ScheduleKind::table:
      return "table";
  }
  return "linear";
}

ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "linear") return ScheduleKind::linear;
  if (s == "cosine") return ScheduleKind::cosine;
  if (s == "table") return ScheduleKind::table;
  throw ConfigError("unknown schedule kind: " + s);
}

namespace {

void fill_products(NoiseSchedule& s) {
  s.alphas.assign(s.betas.size(), 1.0);
  s.alpha_bars.assign(s.betas.size(), 1.0);
  for (int t = 1; t <= s.steps; ++t) {
    s.alphas[t] = 1.0 - s.betas[t];
    s.alpha_bars[t] = s.alpha_bars[t - 1] * s.alphas[t];
  }
}

}  // namespace

double NoiseSchedule::posterior_variance(int t) const {
  check_step(t);
  return (1.0 - alpha_bars[t - 1]) / (1.0 - alpha_bars[t]) * betas[t];
}

void NoiseSchedule::check_step(int t) const {
  if (t < 1 || t > steps) {
    throw ConfigError("diffusion step " + std::to_string(t) + " outside [1, " +
                      std::to_string(steps) + "]");
  }
}

NoiseSchedule make_schedule(int steps, double beta_start, double beta_end, ScheduleKind kind) {
  if (steps < 1) {
    throw ConfigError("schedule needs T >= 1");
  }
  NoiseSchedule s;
  s.steps = steps;
  s.kind = kind;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.betas.assign(static_cast<std::size_t>(steps) + 1, 0.0);
  if (kind == ScheduleKind::linear) {
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
      throw ConfigError("linear schedule needs 0 < beta_start <= beta_end < 1");
    }
    for (int t = 1; t <= steps; ++t) {
      s.betas[t] = steps == 1 ? beta_start
                              : beta_start + (t - 1) * (beta_end - beta_start) / (steps - 1);
    }
    // Pin the endpoint exactly.
    s.betas[steps] = steps == 1 ? beta_start : beta_end;
  } else if (kind == ScheduleKind::cosine) {
    constexpr double offset = 0.008;
    auto f = [&](double t) {
      const double c = std::cos((t / steps + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
      return c * c;
    };
    for (int t = 1; t <= steps; ++t) {
      s.betas[t] = std::min(1.0 - f(t) / f(t - 1), 0.999);
    }
  } else {
    throw ConfigError("use schedule_from_betas for explicit tables");
  }
  fill_products(s);
  return s;
}

NoiseSchedule schedule_from_betas(const std::vector<double>& betas) {
  if (betas.empty()) {
    throw ConfigError("schedule table is empty");
  }
  NoiseSchedule s;
  s.steps = static_cast<int>(betas.size());
  s.kind = ScheduleKind::table;
  s.betas.assign(1, 0.0);
  for (double b : betas) {
    if (!(b > 0.0 && b < 1.0)) {
      throw ConfigError("schedule betas must lie in (0, 1)");
    }
    s.betas.push_back(b);
  }
  s.beta_start = betas.front();
  s.beta_end = betas.back();
  fill_products(s);
  return s;
}

void NoiseSchedule::to_metadata(Metadata& meta) const {
  auto fmt = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  meta["diffusion.T"] = std::to_string(steps);
  meta["diffusion.kind"] = to_string(kind);
  meta["diffusion.beta_start"] = fmt(beta_start);
  meta["diffusion.beta_end"] = fmt(beta_end);
  if (kind == ScheduleKind::table) {
    std::string table;
    for (int t = 1; t <= steps; ++t) {
      table += (t > 1 ? "," : "") + fmt(betas[t]);
    }
    meta["diffusion.betas"] = table;
  }
}

NoiseSchedule NoiseSchedule::from_metadata(const Metadata& meta) {
  auto get = [&](const std::string& k) {
    auto it = meta.find(k);
    if (it == meta.end()) {
      throw ConfigError("checkpoint metadata lacks " + k);
    }
    return it->second;
  };
  const auto kind = schedule_kind_from_string(get("diffusion.kind"));
  if (kind == ScheduleKind::table) {
    std::vector<double> betas;
    std::stringstream ss(get("diffusion.betas"));
    std::string item;
    while (std::getline(ss, item, ',')) {
      betas.push_back(std::stod(item));
    }
    return schedule_from_betas(betas);
  }
  return make_schedule(std::stoi(get("diffusion.T")), std::stod(get("diffusion.beta_start")),
                       std::stod(get("diffusion.beta_end")), kind);
}

std::vector<double> time_embedding(int t, int dim) {
  if (dim <= 0 || dim % 2 != 0) {
    throw ConfigError("time embedding dimension must be even and positive, got " +
                      std::to_string(dim));
  }
  if (t < 0) {
    throw ConfigError("time embedding step must be non-negative");
  }
  const int half = dim / 2;
  std::vector<double> out(static_cast<std::size_t>(dim));
  for (int i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -2.0 * i / dim);
    out[i] = std::sin(t * freq);
    out[half + i] = std::cos(t * freq);
  }
  return out;
}

}  // namespace diffseg::diffusion
