// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "diffseg/data/volume.hpp"

#include <bit>
#include <cmath>

#include "diffseg/core/archive.hpp"
#include "diffseg/core/errors.hpp"

namespace diffseg::data {

namespace {

constexpr std::string_view kMagic = "NVG1";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
}

std::uint32_t get_u32(std::string_view bytes, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
  }
  return v;
}

}  // namespace

void Volume::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 1) {
      throw DataError("volume dims must be positive");
    }
    if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a])) {
      throw DataError("volume spacing must be positive");
    }
  }
  const auto n = static_cast<std::size_t>(voxel_count());
  if (intensities.size() != n) {
    throw DataError("volume holds " + std::to_string(intensities.size()) + " intensities, dims imply " +
                    std::to_string(n));
  }
  if (has_labels() && labels.size() != n) {
    throw DataError("label map size does not match volume dims");
  }
}

std::string encode_volume(const Volume& vol) {
  vol.validate();
  std::string out;
  out.append(kMagic);
  out.push_back(vol.has_labels() ? 1 : 0);
  for (auto d : vol.dims) {
    put_u32(out, static_cast<std::uint32_t>(d));
  }
  for (auto s : vol.spacing) {
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(s)));
  }
  out.reserve(out.size() + vol.intensities.size() * 5);
  for (float v : vol.intensities) {
    put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  out.append(reinterpret_cast<const char*>(vol.labels.data()), vol.labels.size());
  return out;
}

Volume decode_volume(std::string_view bytes) {
  constexpr std::size_t header = 4 + 1 + 12 + 12;
  if (bytes.size() < 4 || bytes.substr(0, 4) != kMagic) {
    throw FormatError(FormatError::Kind::bad_magic, "not an NVG1 volume (bad magic)");
  }
  if (bytes.size() < header) {
    throw FormatError(FormatError::Kind::truncated, "NVG1 header truncated");
  }
  Volume vol;
  const auto has_labels = static_cast<unsigned char>(bytes[4]);
  if (has_labels > 1) {
    throw FormatError(FormatError::Kind::invalid_field, "NVG1 has_labels must be 0 or 1");
  }
  for (int a = 0; a < 3; ++a) {
    vol.dims[a] = get_u32(bytes, 5 + 4 * a);
    vol.spacing[a] = std::bit_cast<float>(get_u32(bytes, 17 + 4 * a));
  }
  const auto n = static_cast<std::size_t>(vol.voxel_count());
  const std::size_t expected = header + n * 4 + (has_labels ? n : 0);
  if (bytes.size() < expected) {
    throw FormatError(FormatError::Kind::truncated, "NVG1 payload truncated");
  }
  if (bytes.size() > expected) {
    throw FormatError(FormatError::Kind::invalid_field, "trailing bytes after NVG1 payload");
  }
  vol.intensities.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    vol.intensities[i] = std::bit_cast<float>(get_u32(bytes, header + 4 * i));
  }
  if (has_labels) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(bytes.data() + header + 4 * n);
    vol.labels.assign(p, p + n);
  }
  try {
    vol.validate();
  } catch (const DataError& e) {
    throw FormatError(FormatError::Kind::invalid_field, e.what());
  }
  return vol;
}

void save_volume(const Volume& vol, const std::filesystem::path& path) {
  write_file_atomic(path, encode_volume(vol));
}

Volume load_volume(const std::filesystem::path& path) { return decode_volume(read_file(path)); }

}  // namespace diffseg::data
