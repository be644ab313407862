// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <span>
#include <vector>

#include "diffseg/core/archive.hpp"
#include "diffseg/data/volume.hpp"

namespace diffseg::data {

// Trilinear for intensities, nearest for labels. Voxel centers are matched in
// physical space; output dims are round(dims * spacing / target).
Volume resample_volume(const Volume& vol, const std::array<double, 3>& target_spacing);

// Per-axis median spacing of a corpus.
std::array<double, 3> median_spacing(std::span<const Volume> volumes);

struct IntensityStats {
  double p0_5 = 0.0;
  double p99_5 = 0.0;
  double min = 0.0;
  double max = 0.0;

  // "norm.*" keys, so a checkpoint can map samples back to intensities.
  void to_metadata(Metadata& meta) const;
  static IntensityStats from_metadata(const Metadata& meta);
};

// Linear interpolation between order statistics at rank (p/100)(n-1).
double percentile_sorted(std::span<const float> sorted, double p);

// Percentiles over the pooled voxels of every volume, background included.
IntensityStats corpus_intensity_stats(std::span<const Volume> volumes);

// Clip to [p0_5, p99_5] and map linearly onto [-1, 1].
double normalize_value(double v, const IntensityStats& stats);
// Inverse of normalize_value on the unclipped range.
double denormalize_value(double v, const IntensityStats& stats);
Volume normalize_intensity(Volume vol, const IntensityStats& stats);

// 2-D resizes on row-major [h, w] planes with corner-aligned sampling.
std::vector<float> resize_bilinear(std::span<const float> src, std::int64_t h, std::int64_t w,
                                   std::int64_t out_h, std::int64_t out_w);
std::vector<std::uint8_t> resize_nearest(std::span<const std::uint8_t> src, std::int64_t h,
                                         std::int64_t w, std::int64_t out_h, std::int64_t out_w);

}  // namespace diffseg::data
