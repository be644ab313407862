// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "diffseg/data/volume.hpp"

namespace diffseg::data {

// Organ placement in body coordinates: z in [0, 1] along the depth, y and x
// in [-1, 1] across the body ellipse (y grows toward the back).
struct OrganSpec {
  std::string name;
  double band_lo = 0.0;  // intensity band, pseudo-HU
  double band_hi = 0.0;
  std::array<double, 3> center{};  // z, y, x
  std::array<double, 3> radii{};   // z, y, x
  double texture_period = 4.0;     // voxels
};

// Abdominal-like templates, at most 13.
const std::vector<OrganSpec>& organ_templates();

struct PhantomSpec {
  std::uint64_t seed = 0;
  std::int64_t depth = 40;
  std::int64_t size = 64;  // in-plane grid, H = W
  int organs = 6;          // K, labels 1..K
  double noise_sigma = 20.0;
  double jitter = 0.06;   // organ center jitter, body units
  double halo = 0.25;     // soft edge width outside each organ, in ellipsoid radii
  double margin = 0.15;   // minimum gap between organs, in ellipsoid radii
  std::array<double, 3> spacing{2.5, 1.5, 1.5};
  int max_attempts = 200;

  void validate() const;
};

// Air, a body ellipse with a fat rim and an unlabeled spine, K textured
// ellipsoids, then Gaussian noise. Labels are exact ellipsoid membership.
Volume gen_phantom(const PhantomSpec& spec);

}  // namespace diffseg::data
