// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "diffseg/cli/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "diffseg/cli/config.hpp"
#include "diffseg/core/errors.hpp"

namespace diffseg::cli {

std::string Window::tag() const {
  return "w" + format_shortest(width) + "_l" + format_shortest(level);
}

std::vector<Window> parse_windows(const std::string& text) {
  std::vector<Window> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    try {
      if (colon == std::string::npos) throw std::invalid_argument(item);
      std::size_t used = 0;
      Window w;
      const auto ws = item.substr(0, colon);
      const auto ls = item.substr(colon + 1);
      w.width = std::stod(ws, &used);
      if (used != ws.size()) throw std::invalid_argument(item);
      w.level = std::stod(ls, &used);
      if (used != ls.size()) throw std::invalid_argument(item);
      if (!(w.width > 0.0)) throw std::invalid_argument(item);
      out.push_back(w);
    } catch (const std::logic_error&) {
      throw ConfigError("bad window '" + item + "' (expected WIDTH:LEVEL with WIDTH > 0)");
    }
  }
  if (out.empty()) {
    throw ConfigError("no display windows given");
  }
  return out;
}

std::uint8_t window_level(double intensity, const Window& window) {
  const double lo = window.level - window.width / 2.0;
  const double v = (intensity - lo) / window.width * 255.0;
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
}

Gray8 apply_window(std::span<const double> intensities, std::int64_t height, std::int64_t width,
                   const Window& window) {
  if (static_cast<std::int64_t>(intensities.size()) != height * width) {
    throw DataError("image buffer does not match its size");
  }
  Gray8 g{height, width, {}};
  g.pixels.reserve(intensities.size());
  for (double v : intensities) {
    g.pixels.push_back(window_level(v, window));
  }
  return g;
}

std::string encode_pgm(const Gray8& image) {
  if (static_cast<std::int64_t>(image.pixels.size()) != image.height * image.width) {
    throw DataError("graymap buffer does not match its size");
  }
  std::string out = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) +
                    "\n255\n";
  out.append(image.pixels.begin(), image.pixels.end());
  return out;
}

Gray8 decode_pgm(const std::string& bytes) {
  std::istringstream in(bytes);
  std::string magic;
  Gray8 g;
  int maxval = 0;
  in >> magic >> g.width >> g.height >> maxval;
  if (magic != "P5" || maxval != 255 || g.width <= 0 || g.height <= 0) {
    throw FormatError(FormatError::Kind::bad_magic, "not an 8-bit P5 graymap");
  }
  in.get();
  const auto offset = static_cast<std::size_t>(in.tellg());
  const auto n = static_cast<std::size_t>(g.width * g.height);
  if (bytes.size() - offset != n) {
    throw FormatError(FormatError::Kind::truncated, "graymap pixel data has the wrong length");
  }
  g.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end());
  return g;
}

Gray8 contact_sheet(const std::vector<Gray8>& tiles, int columns, int gap) {
  if (tiles.empty() || columns <= 0 || gap < 0) {
    throw ConfigError("contact sheet needs tiles and a positive column count");
  }
  const auto th = tiles.front().height;
  const auto tw = tiles.front().width;
  for (const auto& t : tiles) {
    if (t.height != th || t.width != tw) {
      throw DataError("contact sheet tiles differ in size");
    }
  }
  const auto n = static_cast<std::int64_t>(tiles.size());
  const std::int64_t cols = std::min<std::int64_t>(columns, n);
  const std::int64_t rows = (n + cols - 1) / cols;
  Gray8 sheet;
  sheet.width = cols * tw + (cols - 1) * gap;
  sheet.height = rows * th + (rows - 1) * gap;
  sheet.pixels.assign(static_cast<std::size_t>(sheet.width * sheet.height), 0);
  for (std::int64_t i = 0; i < n; ++i) {
    const auto oy = (i / cols) * (th + gap);
    const auto ox = (i % cols) * (tw + gap);
    for (std::int64_t y = 0; y < th; ++y) {
      std::copy_n(tiles[i].pixels.begin() + y * tw, tw,
                  sheet.pixels.begin() + (oy + y) * sheet.width + ox);
    }
  }
  return sheet;
}

}  // namespace diffseg::cli
