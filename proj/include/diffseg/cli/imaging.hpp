// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace diffseg::cli {

struct Window {
  double width = 350.0;
  double level = 40.0;

  std::string tag() const;  // "w350_l40"
};

// "W:L[,W:L...]"
std::vector<Window> parse_windows(const std::string& text);

// L - W/2 maps to 0 and L + W/2 to 255, clamped outside.
std::uint8_t window_level(double intensity, const Window& window);

struct Gray8 {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::uint8_t> pixels;
};

Gray8 apply_window(std::span<const double> intensities, std::int64_t height, std::int64_t width,
                   const Window& window);

// Binary P5 graymap.
std::string encode_pgm(const Gray8& image);
Gray8 decode_pgm(const std::string& bytes);

// Row-major grid of equally sized tiles separated by `gap` black pixels.
Gray8 contact_sheet(const std::vector<Gray8>& tiles, int columns, int gap = 2);

}  // namespace diffseg::cli
