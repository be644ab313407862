// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace diffseg::data {

// Grayscale volume indexed (z, y, x) with z the transverse (slicing) axis.
struct Volume {
  std::array<std::int64_t, 3> dims{0, 0, 0};  // D, H, W
  std::array<double, 3> spacing{1.0, 1.0, 1.0};  // mm per voxel along D, H, W
  std::vector<float> intensities;
  std::vector<std::uint8_t> labels;  // empty when unlabeled

  bool has_labels() const { return !labels.empty(); }
  std::int64_t voxel_count() const { return dims[0] * dims[1] * dims[2]; }
  std::int64_t index(std::int64_t z, std::int64_t y, std::int64_t x) const {
    return (z * dims[1] + y) * dims[2] + x;
  }
  // Throws DataError when buffers disagree with dims or spacing is not positive.
  void validate() const;
};

std::string encode_volume(const Volume& vol);
Volume decode_volume(std::string_view bytes);

void save_volume(const Volume& vol, const std::filesystem::path& path);
Volume load_volume(const std::filesystem::path& path);

}  // namespace diffseg::data
