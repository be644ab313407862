// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "diffseg/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "diffseg/core/archive.hpp"
#include "diffseg/core/errors.hpp"
#include "diffseg/core/sha256.hpp"
#include "diffseg/data/preprocess.hpp"

namespace diffseg::data {

namespace {

constexpr const char* kManifest = "manifest.tsv";

// Fisher-Yates prefix: the first k entries become a uniform random k-subset.
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, RngStream& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(n - 1)));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

SliceDataset pick(const SliceDataset& ds, const std::vector<std::size_t>& which) {
  SliceDataset out;
  out.height = ds.height;
  out.width = ds.width;
  for (auto i : which) {
    out.slices.push_back(ds.slices[i]);
  }
  return out;
}

std::string slice_filename(const Slice& s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_%05lld.nvg", static_cast<long long>(s.index));
  return s.case_id + buf;
}

}  // namespace

bool SliceDataset::labeled() const {
  return !slices.empty() &&
         std::all_of(slices.begin(), slices.end(), [](const Slice& s) { return s.has_labels(); });
}

std::set<int> SliceDataset::label_values() const {
  std::set<int> out;
  for (const auto& s : slices) {
    out.insert(s.labels.begin(), s.labels.end());
  }
  return out;
}

void SliceDataset::append(SliceDataset other) {
  if (slices.empty()) {
    height = other.height;
    width = other.width;
  } else if (!other.slices.empty() && (other.height != height || other.width != width)) {
    throw DataError("cannot merge slice sets of different sizes");
  }
  for (auto& s : other.slices) {
    slices.push_back(std::move(s));
  }
}

Tensor SliceDataset::images(const std::vector<std::size_t>& which, DType dtype) const {
  const auto plane = static_cast<std::size_t>(height * width);
  std::vector<float> buf(which.size() * plane);
  for (std::size_t b = 0; b < which.size(); ++b) {
    const auto& img = slices.at(which[b]).image;
    std::copy(img.begin(), img.end(), buf.begin() + static_cast<std::ptrdiff_t>(b * plane));
  }
  Tensor t = Tensor::from_vector({static_cast<std::int64_t>(which.size()), 1, height, width},
                                 std::move(buf));
  return dtype == DType::f32 ? t : t.to(dtype);
}

std::vector<std::uint8_t> SliceDataset::labels(const std::vector<std::size_t>& which) const {
  const auto plane = static_cast<std::size_t>(height * width);
  std::vector<std::uint8_t> out(which.size() * plane);
  for (std::size_t b = 0; b < which.size(); ++b) {
    const auto& s = slices.at(which[b]);
    if (!s.has_labels()) {
      throw DataError("slice " + s.case_id + ":" + std::to_string(s.index) + " has no labels");
    }
    std::copy(s.labels.begin(), s.labels.end(), out.begin() + static_cast<std::ptrdiff_t>(b * plane));
  }
  return out;
}

void SliceDataset::validate() const {
  const auto plane = static_cast<std::size_t>(height * width);
  std::set<std::pair<std::string, std::int64_t>> seen;
  for (const auto& s : slices) {
    if (s.image.size() != plane || (s.has_labels() && s.labels.size() != plane)) {
      throw DataError("slice " + s.case_id + ":" + std::to_string(s.index) + " has wrong size");
    }
    if (!seen.emplace(s.case_id, s.index).second) {
      throw DataError("duplicate slice provenance " + s.case_id + ":" + std::to_string(s.index));
    }
  }
}

SliceDataset slice_and_resize(const Volume& vol, const std::string& case_id,
                              std::int64_t out_size) {
  vol.validate();
  if (out_size < 1) {
    throw ConfigError("slice size must be positive");
  }
  SliceDataset ds;
  ds.height = out_size;
  ds.width = out_size;
  const auto h = vol.dims[1];
  const auto w = vol.dims[2];
  const auto plane = static_cast<std::size_t>(h * w);
  for (std::int64_t z = 0; z < vol.dims[0]; ++z) {
    const auto off = static_cast<std::size_t>(z) * plane;
    Slice s;
    s.case_id = case_id;
    s.index = z;
    s.image = resize_bilinear(std::span(vol.intensities).subspan(off, plane), h, w, out_size,
                              out_size);
    if (vol.has_labels()) {
      s.labels =
          resize_nearest(std::span(vol.labels).subspan(off, plane), h, w, out_size, out_size);
    }
    ds.slices.push_back(std::move(s));
  }
  return ds;
}

void hflip_in_place(Slice& slice, std::int64_t width) {
  const auto w = static_cast<std::size_t>(width);
  for (std::size_t row = 0; row < slice.image.size() / w; ++row) {
    std::reverse(slice.image.begin() + static_cast<std::ptrdiff_t>(row * w),
                 slice.image.begin() + static_cast<std::ptrdiff_t>((row + 1) * w));
    if (slice.has_labels()) {
      std::reverse(slice.labels.begin() + static_cast<std::ptrdiff_t>(row * w),
                   slice.labels.begin() + static_cast<std::ptrdiff_t>((row + 1) * w));
    }
  }
}

Slice augment_hflip(Slice slice, std::int64_t width, RngStream& rng, double p) {
  if (rng.bernoulli(p)) {
    hflip_in_place(slice, width);
  }
  return slice;
}

SliceDataset subset_labeled(const SliceDataset& ds, double ratio, RngStream& rng,
                            bool require_coverage, int classes, int max_attempts) {
  if (!(ratio > 0.0 && ratio <= 1.0)) {
    throw ConfigError("label ratio must lie in (0, 1]");
  }
  if (ds.slices.empty()) {
    throw DataError("cannot subset an empty dataset");
  }
  const auto n = ds.slices.size();
  // Guard against products like 0.1 * 400 landing a hair above an integer.
  const auto k = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n) - 1e-9)), 1, n);
  if (!require_coverage) {
    return pick(ds, sample_without_replacement(n, k, rng));
  }
  std::set<int> missing_best;
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    auto idx = sample_without_replacement(n, k, rng);
    std::vector<bool> present(static_cast<std::size_t>(std::max(classes, 1)), false);
    for (auto i : idx) {
      for (auto l : ds.slices[i].labels) {
        if (l < present.size()) present[l] = true;
      }
    }
    std::set<int> missing;
    for (int c = 1; c < classes; ++c) {
      if (!present[static_cast<std::size_t>(c)]) missing.insert(c);
    }
    if (missing.empty()) {
      return pick(ds, idx);
    }
    if (attempt == 0 || missing.size() < missing_best.size()) {
      missing_best = missing;
    }
  }
  std::string list;
  for (int c : missing_best) {
    list += (list.empty() ? "" : ",") + std::to_string(c);
  }
  throw DataError("no subset of " + std::to_string(k) + " slices covering every class after " +
                  std::to_string(max_attempts) + " attempts; best draw still missing {" + list +
                  "}");
}

std::pair<SliceDataset, SliceDataset> split_dataset(const SliceDataset& ds, double fraction,
                                                    RngStream& rng) {
  const auto n = ds.slices.size();
  if (n < 2) {
    throw DataError("need at least two slices to split");
  }
  const auto k = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))), 1, n - 1);
  auto held = sample_without_replacement(n, k, rng);
  std::sort(held.begin(), held.end());
  std::vector<std::size_t> kept;
  for (std::size_t i = 0, j = 0; i < n; ++i) {
    if (j < held.size() && held[j] == i) {
      ++j;
    } else {
      kept.push_back(i);
    }
  }
  return {pick(ds, kept), pick(ds, held)};
}

std::string save_slice_dataset(const SliceDataset& ds, const std::filesystem::path& dir) {
  ds.validate();
  std::filesystem::create_directories(dir / "slices");
  std::ostringstream manifest;
  for (const auto& s : ds.slices) {
    Volume v;
    v.dims = {1, ds.height, ds.width};
    v.intensities = s.image;
    v.labels = s.labels;
    const std::string rel = "slices/" + slice_filename(s);
    const std::string bytes = encode_volume(v);
    write_file_atomic(dir / rel, bytes);
    manifest << rel << '\t' << s.case_id << '\t' << s.index << '\t' << sha256_hex(bytes) << '\n';
  }
  const std::string text = manifest.str();
  write_file_atomic(dir / kManifest, text);
  return sha256_hex(text);
}

SliceDataset load_slice_dataset(const std::filesystem::path& dir) {
  std::istringstream manifest(read_file(dir / kManifest));
  SliceDataset ds;
  std::string line;
  int line_no = 0;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string rel, case_id, index, digest;
    if (!std::getline(row, rel, '\t') || !std::getline(row, case_id, '\t') ||
        !std::getline(row, index, '\t') || !std::getline(row, digest)) {
      throw DataError("manifest line " + std::to_string(line_no) + " needs four tab-separated fields");
    }
    const std::string bytes = read_file(dir / rel);
    if (sha256_hex(bytes) != digest) {
      throw DataError("checksum mismatch for " + rel);
    }
    Volume v = decode_volume(bytes);
    if (v.dims[0] != 1) {
      throw DataError(rel + " is not a single slice");
    }
    if (ds.slices.empty()) {
      ds.height = v.dims[1];
      ds.width = v.dims[2];
    } else if (v.dims[1] != ds.height || v.dims[2] != ds.width) {
      throw DataError(rel + " differs in size from earlier slices");
    }
    Slice s;
    s.case_id = case_id;
    s.index = std::stoll(index);
    s.image = std::move(v.intensities);
    s.labels = std::move(v.labels);
    ds.slices.push_back(std::move(s));
  }
  ds.validate();
  return ds;
}

std::string manifest_checksum(const std::filesystem::path& dir) {
  return sha256_hex(read_file(dir / kManifest));
}

}  // namespace diffseg::data
