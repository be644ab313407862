// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "diffseg/core/rng.hpp"
#include "diffseg/core/tensor.hpp"
#include "diffseg/data/volume.hpp"

namespace diffseg::data {

struct Slice {
  std::vector<float> image;          // [H, W], normalized to [-1, 1]
  std::vector<std::uint8_t> labels;  // [H, W] or empty
  std::string case_id;
  std::int64_t index = 0;  // position along the transverse axis

  bool has_labels() const { return !labels.empty(); }
};

struct SliceDataset {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<Slice> slices;

  std::size_t size() const { return slices.size(); }
  bool labeled() const;
  std::set<int> label_values() const;

  void append(SliceDataset other);
  // Batches for the selected slices: images [B,1,H,W] and labels [B,H,W].
  Tensor images(const std::vector<std::size_t>& which, DType dtype = DType::f32) const;
  std::vector<std::uint8_t> labels(const std::vector<std::size_t>& which) const;
  // Throws DataError on mismatched sizes or duplicate (case, index) pairs.
  void validate() const;
};

// One slice per transverse position, resized to out_size x out_size
// (bilinear images, nearest labels).
SliceDataset slice_and_resize(const Volume& vol, const std::string& case_id,
                              std::int64_t out_size);

// Mirrors along the width with probability p; labels follow the image.
Slice augment_hflip(Slice slice, std::int64_t width, RngStream& rng, double p = 0.5);
void hflip_in_place(Slice& slice, std::int64_t width);

// ceil(ratio * N) slices drawn without replacement. With require_coverage,
// draws are repeated until every class 1..classes-1 appears.
SliceDataset subset_labeled(const SliceDataset& ds, double ratio, RngStream& rng,
                            bool require_coverage, int classes, int max_attempts = 10000);

// Deterministic split: `fraction` of slices (at least one) go to the second
// set. Used for validation hold-out.
std::pair<SliceDataset, SliceDataset> split_dataset(const SliceDataset& ds, double fraction,
                                                    RngStream& rng);

// Slice directory: one D=1 NVG1 file per slice plus "manifest.tsv" with
// "relative-path<TAB>case-id<TAB>slice-index<TAB>sha256" rows.
// Returns the sha256 of the manifest text.
std::string save_slice_dataset(const SliceDataset& ds, const std::filesystem::path& dir);
SliceDataset load_slice_dataset(const std::filesystem::path& dir);
std::string manifest_checksum(const std::filesystem::path& dir);

}  // namespace diffseg::data
