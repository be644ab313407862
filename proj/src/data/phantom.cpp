// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "diffseg/data/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "diffseg/core/errors.hpp"
#include "diffseg/core/rng.hpp"

namespace diffseg::data {

namespace {

constexpr double kAir = -1000.0;
constexpr double kFat = -100.0;
constexpr double kBoneLo = 350.0;
constexpr double kBoneHi = 500.0;

struct Placed {
  OrganSpec organ;
  std::array<double, 3> center;  // voxels
  std::array<double, 3> radii;   // voxels
  std::array<double, 3> phase;
};

double ellipsoid_radius(const Placed& p, double z, double y, double x) {
  const double dz = (z - p.center[0]) / p.radii[0];
  const double dy = (y - p.center[1]) / p.radii[1];
  const double dx = (x - p.center[2]) / p.radii[2];
  return std::sqrt(dz * dz + dy * dy + dx * dx);
}

double texture(const Placed& p, double z, double y, double x) {
  const double w = 2.0 * std::numbers::pi / p.organ.texture_period;
  const double u = 0.5 + 0.2 * std::sin(w * x + p.phase[0]) + 0.2 * std::sin(w * y + p.phase[1]) +
                   0.1 * std::sin(0.5 * w * z + p.phase[2]);
  return p.organ.band_lo + (p.organ.band_hi - p.organ.band_lo) * u;
}

}  // namespace

const std::vector<OrganSpec>& organ_templates() {
  static const std::vector<OrganSpec> t = {
      {"liver", 50, 80, {0.55, -0.18, -0.42}, {0.42, 0.38, 0.36}, 3.0},
      {"spleen", 45, 75, {0.60, 0.02, 0.60}, {0.30, 0.26, 0.20}, 6.0},
      {"kidney_r", 120, 160, {0.35, 0.45, -0.44}, {0.26, 0.18, 0.15}, 2.5},
      {"kidney_l", 120, 160, {0.35, 0.45, 0.44}, {0.26, 0.18, 0.15}, 2.5},
      {"stomach", 0, 45, {0.72, -0.40, 0.22}, {0.24, 0.26, 0.24}, 7.0},
      {"aorta", 150, 200, {0.50, 0.40, 0.00}, {0.70, 0.09, 0.08}, 4.0},
      {"ivc", 80, 120, {0.50, 0.34, -0.18}, {0.70, 0.08, 0.07}, 4.0},
      {"pancreas", 30, 60, {0.45, 0.12, 0.10}, {0.16, 0.09, 0.30}, 3.0},
      {"gallbladder", -10, 20, {0.40, 0.02, -0.36}, {0.14, 0.10, 0.08}, 8.0},
      {"esophagus", 20, 50, {0.88, 0.28, 0.04}, {0.20, 0.06, 0.06}, 4.0},
      {"duodenum", 10, 45, {0.28, 0.05, -0.10}, {0.12, 0.09, 0.14}, 5.0},
      {"adrenal_r", 60, 90, {0.72, 0.30, -0.30}, {0.10, 0.05, 0.05}, 3.0},
      {"adrenal_l", 60, 90, {0.72, 0.30, 0.30}, {0.10, 0.05, 0.05}, 3.0},
  };
  return t;
}

void PhantomSpec::validate() const {
  if (organs < 0 || organs > static_cast<int>(organ_templates().size())) {
    throw ConfigError("phantom organ count must lie in [0, 13]");
  }
  if (size < 32 || depth < 1) {
    throw ConfigError("phantom grid must be at least 32 in-plane and 1 deep");
  }
  if (noise_sigma < 0 || jitter < 0 || halo <= 0 || margin < 0 || max_attempts < 1) {
    throw ConfigError("phantom noise, jitter, halo, margin and attempts must be non-negative");
  }
  for (double s : spacing) {
    if (!(s > 0)) throw ConfigError("phantom spacing must be positive");
  }
}

Volume gen_phantom(const PhantomSpec& spec) {
  spec.validate();
  RngStream rng(spec.seed, 0x7068616e);  // "phan"
  const auto D = spec.depth;
  const auto N = spec.size;
  Volume vol;
  vol.dims = {D, N, N};
  vol.spacing = spec.spacing;
  const auto count = static_cast<std::size_t>(vol.voxel_count());
  vol.intensities.assign(count, static_cast<float>(kAir));
  vol.labels.assign(count, 0);

  const double cy = 0.5 * static_cast<double>(N - 1) + 0.03 * N * (rng.uniform() - 0.5);
  const double cx = 0.5 * static_cast<double>(N - 1) + 0.03 * N * (rng.uniform() - 0.5);
  const double ay = 0.36 * N * (0.92 + 0.16 * rng.uniform());
  const double ax = 0.46 * N * (0.92 + 0.16 * rng.uniform());
  auto body_radius = [&](double y, double x) {
    const double dy = (y - cy) / ay;
    const double dx = (x - cx) / ax;
    return std::sqrt(dy * dy + dx * dx);
  };
  const double tissue_tilt = 10.0 * (rng.uniform() - 0.5);

  std::vector<Placed> placed;
  for (int k = 0; k < spec.organs; ++k) {
    const auto& organ = organ_templates()[static_cast<std::size_t>(k)];
    bool ok = false;
    for (int attempt = 0; attempt < spec.max_attempts && !ok; ++attempt) {
      Placed p;
      p.organ = organ;
      const double jz = organ.center[0] + spec.jitter * (2 * rng.uniform() - 1);
      const double jy = organ.center[1] + spec.jitter * (2 * rng.uniform() - 1);
      const double jx = organ.center[2] + spec.jitter * (2 * rng.uniform() - 1);
      p.center = {jz * static_cast<double>(D - 1), cy + jy * ay, cx + jx * ax};
      for (int a = 0; a < 3; ++a) {
        const double scale = a == 0 ? static_cast<double>(D) : (a == 1 ? ay : ax);
        p.radii[a] = std::max(0.75, organ.radii[a] * scale * (0.85 + 0.3 * rng.uniform()));
      }
      for (auto& ph : p.phase) ph = 2.0 * std::numbers::pi * rng.uniform();

      // Reject placements touching another organ or leaving the body core.
      ok = true;
      const double reach = 1.0 + spec.margin;
      const auto lo = [&](int a) {
        return std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(p.center[a] - reach * p.radii[a])));
      };
      const auto hi = [&](int a) {
        return std::min<std::int64_t>(vol.dims[a] - 1,
                                      static_cast<std::int64_t>(std::ceil(p.center[a] + reach * p.radii[a])));
      };
      for (auto z = lo(0); ok && z <= hi(0); ++z) {
        for (auto y = lo(1); ok && y <= hi(1); ++y) {
          for (auto x = lo(2); ok && x <= hi(2); ++x) {
            const double r = ellipsoid_radius(p, static_cast<double>(z), static_cast<double>(y),
                                              static_cast<double>(x));
            if (r > reach) continue;
            if (vol.labels[static_cast<std::size_t>(vol.index(z, y, x))] != 0 ||
                (r <= 1.0 && body_radius(static_cast<double>(y), static_cast<double>(x)) > 0.85)) {
              ok = false;
            }
          }
        }
      }
      if (!ok) continue;
      for (auto z = lo(0); z <= hi(0); ++z) {
        for (auto y = lo(1); y <= hi(1); ++y) {
          for (auto x = lo(2); x <= hi(2); ++x) {
            if (ellipsoid_radius(p, static_cast<double>(z), static_cast<double>(y),
                                 static_cast<double>(x)) <= 1.0) {
              vol.labels[static_cast<std::size_t>(vol.index(z, y, x))] =
                  static_cast<std::uint8_t>(k + 1);
            }
          }
        }
      }
      placed.push_back(p);
    }
    if (!ok) {
      throw DataError("could not place organ '" + organ.name + "' without overlap after " +
                      std::to_string(spec.max_attempts) + " attempts");
    }
  }

  const double spine_y = cy + 0.72 * ay;
  const double spine_r = 0.13 * ay;
  for (std::int64_t z = 0; z < D; ++z) {
    for (std::int64_t y = 0; y < N; ++y) {
      for (std::int64_t x = 0; x < N; ++x) {
        const auto i = static_cast<std::size_t>(vol.index(z, y, x));
        const double fy = static_cast<double>(y);
        const double fx = static_cast<double>(x);
        const double rb = body_radius(fy, fx);
        double v = kAir;
        if (rb <= 1.0) {
          const double ny = (fy - cy) / ay;
          v = rb > 0.88 ? kFat : 25.0 + 15.0 * ny + tissue_tilt;
          const double ds = std::hypot(fy - spine_y, fx - cx) / spine_r;
          if (ds <= 1.0) {
            v = kBoneLo + (kBoneHi - kBoneLo) * (1.0 - ds);
          }
        }
        const int label = vol.labels[i];
        if (label > 0) {
          const auto& p = placed[static_cast<std::size_t>(label - 1)];
          v = texture(p, static_cast<double>(z), fy, fx);
        } else if (rb <= 1.0) {
          for (const auto& p : placed) {
            const double r = ellipsoid_radius(p, static_cast<double>(z), fy, fx);
            if (r < 1.0 + spec.halo) {
              const double w = 0.5 * (1.0 - (r - 1.0) / spec.halo);
              v = (1.0 - w) * v + w * 0.5 * (p.organ.band_lo + p.organ.band_hi);
              break;
            }
          }
        }
        vol.intensities[i] = static_cast<float>(v + spec.noise_sigma * rng.normal());
      }
    }
  }
  return vol;
}

}  // namespace diffseg::data
