// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "diffseg/data/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "diffseg/core/errors.hpp"

namespace diffseg::data {

namespace {

struct AxisSample {
  std::int64_t lo = 0;
  std::int64_t hi = 0;
  double frac = 0.0;
  std::int64_t nearest = 0;
};

// Output voxel i covers physical center (i + 0.5) * out_sp; express that in
// input voxel units and clamp to the valid range.
std::vector<AxisSample> axis_samples(std::int64_t in_n, double in_sp, std::int64_t out_n,
                                     double out_sp) {
  std::vector<AxisSample> s(static_cast<std::size_t>(out_n));
  for (std::int64_t i = 0; i < out_n; ++i) {
    double pos = (static_cast<double>(i) + 0.5) * out_sp / in_sp - 0.5;
    pos = std::clamp(pos, 0.0, static_cast<double>(in_n - 1));
    auto& a = s[static_cast<std::size_t>(i)];
    a.lo = static_cast<std::int64_t>(std::floor(pos));
    a.hi = std::min(a.lo + 1, in_n - 1);
    a.frac = pos - static_cast<double>(a.lo);
    a.nearest = std::min(static_cast<std::int64_t>(std::floor(pos + 0.5)), in_n - 1);
  }
  return s;
}

std::vector<AxisSample> corner_samples(std::int64_t in_n, std::int64_t out_n) {
  std::vector<AxisSample> s(static_cast<std::size_t>(out_n));
  for (std::int64_t i = 0; i < out_n; ++i) {
    const double pos =
        out_n == 1 ? 0.0
                   : static_cast<double>(i) * static_cast<double>(in_n - 1) / static_cast<double>(out_n - 1);
    auto& a = s[static_cast<std::size_t>(i)];
    a.lo = std::min(static_cast<std::int64_t>(std::floor(pos)), in_n - 1);
    a.hi = std::min(a.lo + 1, in_n - 1);
    a.frac = pos - static_cast<double>(a.lo);
    a.nearest = std::min(static_cast<std::int64_t>(std::floor(pos + 0.5)), in_n - 1);
  }
  return s;
}

}  // namespace

Volume resample_volume(const Volume& vol, const std::array<double, 3>& target) {
  vol.validate();
  Volume out;
  for (int a = 0; a < 3; ++a) {
    if (!(target[a] > 0.0)) {
      throw ConfigError("target spacing must be positive");
    }
    out.dims[a] = std::llround(static_cast<double>(vol.dims[a]) * vol.spacing[a] / target[a]);
    if (out.dims[a] < 1) {
      throw DataError("resampling would produce an empty axis");
    }
    out.spacing[a] = target[a];
  }
  if (out.dims == vol.dims && target == vol.spacing) {
    return vol;
  }
  const auto sz = axis_samples(vol.dims[0], vol.spacing[0], out.dims[0], target[0]);
  const auto sy = axis_samples(vol.dims[1], vol.spacing[1], out.dims[1], target[1]);
  const auto sx = axis_samples(vol.dims[2], vol.spacing[2], out.dims[2], target[2]);
  const auto n = static_cast<std::size_t>(out.voxel_count());
  out.intensities.resize(n);
  if (vol.has_labels()) {
    out.labels.resize(n);
  }
  const auto& src = vol.intensities;
  for (std::int64_t z = 0; z < out.dims[0]; ++z) {
    const auto& az = sz[static_cast<std::size_t>(z)];
    for (std::int64_t y = 0; y < out.dims[1]; ++y) {
      const auto& ay = sy[static_cast<std::size_t>(y)];
      for (std::int64_t x = 0; x < out.dims[2]; ++x) {
        const auto& ax = sx[static_cast<std::size_t>(x)];
        auto at = [&](std::int64_t zz, std::int64_t yy, std::int64_t xx) {
          return static_cast<double>(src[static_cast<std::size_t>(vol.index(zz, yy, xx))]);
        };
        auto lerp_x = [&](std::int64_t zz, std::int64_t yy) {
          return at(zz, yy, ax.lo) * (1.0 - ax.frac) + at(zz, yy, ax.hi) * ax.frac;
        };
        auto lerp_y = [&](std::int64_t zz) {
          return lerp_x(zz, ay.lo) * (1.0 - ay.frac) + lerp_x(zz, ay.hi) * ay.frac;
        };
        const double v = lerp_y(az.lo) * (1.0 - az.frac) + lerp_y(az.hi) * az.frac;
        const auto o = static_cast<std::size_t>(out.index(z, y, x));
        out.intensities[o] = static_cast<float>(v);
        if (vol.has_labels()) {
          out.labels[o] =
              vol.labels[static_cast<std::size_t>(vol.index(az.nearest, ay.nearest, ax.nearest))];
        }
      }
    }
  }
  return out;
}

std::array<double, 3> median_spacing(std::span<const Volume> volumes) {
  if (volumes.empty()) {
    throw DataError("median spacing of an empty corpus");
  }
  std::array<double, 3> out{};
  for (int a = 0; a < 3; ++a) {
    std::vector<double> v;
    for (const auto& vol : volumes) {
      v.push_back(vol.spacing[a]);
    }
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    out[a] = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  }
  return out;
}

void IntensityStats::to_metadata(Metadata& meta) const {
  auto put = [&](const char* k, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    meta[k] = buf;
  };
  put("norm.p0_5", p0_5);
  put("norm.p99_5", p99_5);
  put("norm.min", min);
  put("norm.max", max);
}

IntensityStats IntensityStats::from_metadata(const Metadata& meta) {
  auto get = [&](const char* k) {
    auto it = meta.find(k);
    if (it == meta.end()) {
      throw ConfigError(std::string("normalization statistics missing from metadata: ") + k);
    }
    return std::stod(it->second);
  };
  return {get("norm.p0_5"), get("norm.p99_5"), get("norm.min"), get("norm.max")};
}

double percentile_sorted(std::span<const float> sorted, double p) {
  if (sorted.empty()) {
    throw DataError("percentile of an empty sample");
  }
  const double rank = p / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double f = rank - static_cast<double>(lo);
  return static_cast<double>(sorted[lo]) * (1.0 - f) + static_cast<double>(sorted[hi]) * f;
}

IntensityStats corpus_intensity_stats(std::span<const Volume> volumes) {
  std::vector<float> pooled;
  for (const auto& v : volumes) {
    pooled.insert(pooled.end(), v.intensities.begin(), v.intensities.end());
  }
  if (pooled.empty()) {
    throw DataError("intensity statistics of an empty corpus");
  }
  std::sort(pooled.begin(), pooled.end());
  return {percentile_sorted(pooled, 0.5), percentile_sorted(pooled, 99.5), pooled.front(),
          pooled.back()};
}

double normalize_value(double v, const IntensityStats& stats) {
  const double range = stats.p99_5 - stats.p0_5;
  const double c = std::clamp(v, stats.p0_5, stats.p99_5);
  return 2.0 * ((c - stats.p0_5) / range) - 1.0;
}

double denormalize_value(double v, const IntensityStats& stats) {
  return (v + 1.0) * 0.5 * (stats.p99_5 - stats.p0_5) + stats.p0_5;
}

Volume normalize_intensity(Volume vol, const IntensityStats& stats) {
  if (!(stats.p99_5 > stats.p0_5)) {
    throw DataError("degenerate intensity statistics: p99.5 must exceed p0.5");
  }
  for (auto& v : vol.intensities) {
    v = static_cast<float>(normalize_value(v, stats));
  }
  return vol;
}

std::vector<float> resize_bilinear(std::span<const float> src, std::int64_t h, std::int64_t w,
                                   std::int64_t out_h, std::int64_t out_w) {
  if (h < 1 || w < 1 || out_h < 1 || out_w < 1 || static_cast<std::int64_t>(src.size()) != h * w) {
    throw DataError("bilinear resize: invalid sizes");
  }
  if (h == out_h && w == out_w) {
    return {src.begin(), src.end()};
  }
  const auto sy = corner_samples(h, out_h);
  const auto sx = corner_samples(w, out_w);
  std::vector<float> out(static_cast<std::size_t>(out_h * out_w));
  for (std::int64_t y = 0; y < out_h; ++y) {
    const auto& ay = sy[static_cast<std::size_t>(y)];
    for (std::int64_t x = 0; x < out_w; ++x) {
      const auto& ax = sx[static_cast<std::size_t>(x)];
      auto at = [&](std::int64_t yy, std::int64_t xx) {
        return static_cast<double>(src[static_cast<std::size_t>(yy * w + xx)]);
      };
      const double top = at(ay.lo, ax.lo) * (1.0 - ax.frac) + at(ay.lo, ax.hi) * ax.frac;
      const double bot = at(ay.hi, ax.lo) * (1.0 - ax.frac) + at(ay.hi, ax.hi) * ax.frac;
      out[static_cast<std::size_t>(y * out_w + x)] =
          static_cast<float>(top * (1.0 - ay.frac) + bot * ay.frac);
    }
  }
  return out;
}

std::vector<std::uint8_t> resize_nearest(std::span<const std::uint8_t> src, std::int64_t h,
                                         std::int64_t w, std::int64_t out_h, std::int64_t out_w) {
  if (h < 1 || w < 1 || out_h < 1 || out_w < 1 || static_cast<std::int64_t>(src.size()) != h * w) {
    throw DataError("nearest resize: invalid sizes");
  }
  const auto sy = corner_samples(h, out_h);
  const auto sx = corner_samples(w, out_w);
  std::vector<std::uint8_t> out(static_cast<std::size_t>(out_h * out_w));
  for (std::int64_t y = 0; y < out_h; ++y) {
    for (std::int64_t x = 0; x < out_w; ++x) {
      out[static_cast<std::size_t>(y * out_w + x)] =
          src[static_cast<std::size_t>(sy[static_cast<std::size_t>(y)].nearest * w +
                                       sx[static_cast<std::size_t>(x)].nearest)];
    }
  }
  return out;
}

}  // namespace diffseg::data
