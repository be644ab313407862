// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <doctest.h>

#include "diffseg/core/archive.hpp"
#include "diffseg/core/errors.hpp"
#include "diffseg/data/dataset.hpp"
#include "diffseg/data/phantom.hpp"
#include "diffseg/data/preprocess.hpp"
#include "diffseg/data/volume.hpp"
#include "helpers.hpp"

using namespace diffseg;
using namespace diffseg::data;
using diffseg::testing::TempDir;

namespace {

Volume ramp_volume(std::array<std::int64_t, 3> dims, std::array<double, 3> spacing) {
  Volume v;
  v.dims = dims;
  v.spacing = spacing;
  v.intensities.resize(static_cast<std::size_t>(v.voxel_count()));
  for (std::int64_t z = 0; z < dims[0]; ++z)
    for (std::int64_t y = 0; y < dims[1]; ++y)
      for (std::int64_t x = 0; x < dims[2]; ++x)
        v.intensities[v.index(z, y, x)] = static_cast<float>(3.0 * z - 2.0 * y + 0.5 * x);
  return v;
}

// Trilinear lookup on a ramp at fractional voxel coordinates, clamped.
double trilinear(const Volume& v, double z, double y, double x) {
  auto clampc = [](double c, std::int64_t n) { return std::clamp(c, 0.0, static_cast<double>(n - 1)); };
  z = clampc(z, v.dims[0]);
  y = clampc(y, v.dims[1]);
  x = clampc(x, v.dims[2]);
  const auto z0 = static_cast<std::int64_t>(std::floor(z)), y0 = static_cast<std::int64_t>(std::floor(y)),
             x0 = static_cast<std::int64_t>(std::floor(x));
  const auto z1 = std::min(z0 + 1, v.dims[0] - 1), y1 = std::min(y0 + 1, v.dims[1] - 1),
             x1 = std::min(x0 + 1, v.dims[2] - 1);
  const double fz = z - z0, fy = y - y0, fx = x - x0;
  double s = 0.0;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int c = 0; c < 2; ++c) {
        const double w = (a ? fz : 1 - fz) * (b ? fy : 1 - fy) * (c ? fx : 1 - fx);
        s += w * v.intensities[v.index(a ? z1 : z0, b ? y1 : y0, c ? x1 : x0)];
      }
  return s;
}

SliceDataset labeled_dataset(int count, int classes, std::int64_t size = 4) {
  SliceDataset ds{size, size, {}};
  for (int i = 0; i < count; ++i) {
    Slice s;
    s.image.assign(static_cast<std::size_t>(size * size), static_cast<float>(i) / count);
    s.labels.assign(static_cast<std::size_t>(size * size), 0);
    s.labels[0] = static_cast<std::uint8_t>(1 + i % (classes - 1));
    s.case_id = "c" + std::to_string(i / 10);
    s.index = i % 10;
    ds.slices.push_back(std::move(s));
  }
  return ds;
}

}  // namespace

TEST_CASE("volume format round trip and corruption") {
  TempDir dir;
  Volume v = ramp_volume({3, 4, 5}, {2.5, 1.0, 1.0});
  v.labels.assign(static_cast<std::size_t>(v.voxel_count()), 2);
  save_volume(v, dir / "v.nvg");
  const Volume back = load_volume(dir / "v.nvg");
  CHECK(back.dims == v.dims);
  CHECK(back.spacing == v.spacing);
  CHECK(back.intensities == v.intensities);
  CHECK(back.labels == v.labels);
  std::string bytes = encode_volume(v);
  CHECK_THROWS_AS(decode_volume(bytes.substr(0, bytes.size() - 1)), FormatError);
  bytes[1] = '?';
  CHECK_THROWS_AS(decode_volume(bytes), FormatError);
  Volume bad = v;
  bad.spacing[1] = 0.0;
  CHECK_THROWS_AS(bad.validate(), DataError);
}

TEST_CASE("resample: identity spacing is a no-op") {
  Volume v = ramp_volume({4, 6, 5}, {2.0, 1.5, 1.5});
  v.labels.assign(static_cast<std::size_t>(v.voxel_count()), 1);
  const Volume r = resample_volume(v, {2.0, 1.5, 1.5});
  CHECK(r.dims == v.dims);
  CHECK(r.intensities == v.intensities);
  CHECK(r.labels == v.labels);
}

TEST_CASE("resample: 2x downsample matches a direct trilinear oracle") {
  const Volume v = ramp_volume({8, 10, 12}, {1.0, 1.0, 1.0});
  const Volume r = resample_volume(v, {2.0, 2.0, 2.0});
  CHECK(r.dims == std::array<std::int64_t, 3>{4, 5, 6});
  double worst = 0.0;
  for (std::int64_t z = 0; z < 4; ++z)
    for (std::int64_t y = 0; y < 5; ++y)
      for (std::int64_t x = 0; x < 6; ++x) {
        const double ref = trilinear(v, (z + 0.5) * 2 - 0.5, (y + 0.5) * 2 - 0.5, (x + 0.5) * 2 - 0.5);
        worst = std::max(worst, std::abs(ref - r.intensities[r.index(z, y, x)]));
      }
  CHECK(worst < 1e-5);
}

TEST_CASE("resample keeps binary labels binary") {
  Volume v = ramp_volume({12, 12, 12}, {1.0, 1.0, 1.0});
  v.labels.assign(static_cast<std::size_t>(v.voxel_count()), 0);
  for (std::int64_t z = 0; z < 12; ++z)
    for (std::int64_t y = 0; y < 12; ++y)
      for (std::int64_t x = 0; x < 12; ++x)
        if ((z - 6) * (z - 6) + (y - 6) * (y - 6) + (x - 6) * (x - 6) < 16) v.labels[v.index(z, y, x)] = 1;
  for (double s : {0.5, 2.0}) {
    const Volume r = resample_volume(v, {s, s, s});
    const std::set<std::uint8_t> values(r.labels.begin(), r.labels.end());
    CHECK(values == std::set<std::uint8_t>{0, 1});
  }
}

TEST_CASE("percentile statistics") {
  Volume v;
  v.dims = {1, 1, 1000};
  for (int i = 1; i <= 1000; ++i) v.intensities.push_back(static_cast<float>(i));
  const auto s = corpus_intensity_stats(std::vector<Volume>{v});
  CHECK(s.p0_5 == doctest::Approx(5.995).epsilon(1e-9));
  CHECK(s.p99_5 == doctest::Approx(995.005).epsilon(1e-9));
  CHECK(s.min == 1.0);
  CHECK(s.max == 1000.0);

  Volume c;
  c.dims = {1, 2, 2};
  c.intensities.assign(4, 7.0f);
  const auto cs = corpus_intensity_stats(std::vector<Volume>{c});
  CHECK((cs.p0_5 == 7.0 && cs.p99_5 == 7.0 && cs.min == 7.0 && cs.max == 7.0));

  Volume a, b;
  a.dims = {1, 1, 3};
  a.intensities = {0, 1, 2};
  b.dims = {1, 1, 5};
  b.intensities = {100, 101, 102, 103, 104};
  Volume pooled;
  pooled.dims = {1, 1, 8};
  pooled.intensities = {0, 1, 2, 100, 101, 102, 103, 104};
  const auto split = corpus_intensity_stats(std::vector<Volume>{a, b});
  const auto one = corpus_intensity_stats(std::vector<Volume>{pooled});
  CHECK(split.p0_5 == one.p0_5);
  CHECK(split.p99_5 == one.p99_5);
}

TEST_CASE("normalize endpoints, clipping, and inverse") {
  const IntensityStats s{-100.0, 300.0, -1000.0, 1000.0};
  CHECK(normalize_value(-100.0, s) == -1.0);
  CHECK(normalize_value(300.0, s) == 1.0);
  CHECK(normalize_value(-500.0, s) == -1.0);
  CHECK(normalize_value(100.0, s) == 0.0);
  for (double v : {-100.0, -3.5, 0.0, 42.0, 299.0}) {
    CHECK(denormalize_value(normalize_value(v, s), s) == doctest::Approx(v).epsilon(1e-12));
  }
  const IntensityStats flat{5.0, 5.0, 5.0, 5.0};
  Volume v;
  v.dims = {1, 1, 1};
  v.intensities = {5.0f};
  CHECK_THROWS(normalize_intensity(v, flat));
  Metadata meta;
  s.to_metadata(meta);
  const auto back = IntensityStats::from_metadata(meta);
  CHECK((back.p0_5 == s.p0_5 && back.p99_5 == s.p99_5));
  CHECK_THROWS_AS(IntensityStats::from_metadata({}), ConfigError);
}

TEST_CASE("slice_and_resize counts and closures") {
  Volume v = ramp_volume({10, 64, 64}, {1.0, 1.0, 1.0});
  v.labels.resize(static_cast<std::size_t>(v.voxel_count()));
  for (std::int64_t z = 0; z < 10; ++z)
    for (std::int64_t y = 0; y < 64; ++y)
      for (std::int64_t x = 0; x < 64; ++x) v.labels[v.index(z, y, x)] = ((y / 8 + x / 8) % 2) ? 3 : 1;
  const SliceDataset ds = slice_and_resize(v, "case", 256);
  CHECK(ds.size() == 10);
  CHECK(ds.height == 256);
  const auto values = ds.label_values();
  CHECK(values == std::set<int>{1, 3});

  // Corner-aligned bilinear upsample of a linear ramp stays on the ramp.
  const auto& img = ds.slices[2].image;
  double worst = 0.0;
  for (std::int64_t y = 0; y < 256; ++y)
    for (std::int64_t x = 0; x < 256; ++x) {
      const double sy = y * 63.0 / 255.0, sx = x * 63.0 / 255.0;
      worst = std::max(worst, std::abs(img[y * 256 + x] - (3.0 * 2 - 2.0 * sy + 0.5 * sx)));
    }
  CHECK(worst < 1e-4);
}

TEST_CASE("horizontal flip") {
  Slice s;
  for (int i = 0; i < 12; ++i) s.image.push_back(static_cast<float>(i));
  s.labels.assign(12, 0);
  s.labels[1] = 4;
  Slice twice = s;
  hflip_in_place(twice, 4);
  CHECK(twice.image[0] == 3.0f);
  CHECK(twice.image[4 + 3] == 4.0f);
  CHECK(twice.labels[2] == 4);
  hflip_in_place(twice, 4);
  CHECK(twice.image == s.image);
  RngStream rng(1, 0);
  for (int i = 0; i < 20; ++i) CHECK(augment_hflip(s, 4, rng, 0.0).image == s.image);
}

TEST_CASE("subset_labeled sizes and coverage") {
  const SliceDataset ds = labeled_dataset(400, 7);
  RngStream rng(3, 0);
  CHECK(subset_labeled(ds, 0.01, rng, false, 7).size() == 4);
  const SliceDataset full = subset_labeled(ds, 1.0, rng, false, 7);
  CHECK(full.size() == 400);
  std::set<std::pair<std::string, std::int64_t>> a, b;
  for (const auto& s : ds.slices) a.insert({s.case_id, s.index});
  for (const auto& s : full.slices) b.insert({s.case_id, s.index});
  CHECK(a == b);

  const SliceDataset big = labeled_dataset(3879, 7);
  CHECK(subset_labeled(big, 0.01, rng, false, 7).size() == 39);

  const SliceDataset covered = subset_labeled(ds, 0.02, rng, true, 7);
  const auto values = covered.label_values();
  CHECK(values == std::set<int>{0, 1, 2, 3, 4, 5, 6});
  CHECK_THROWS_AS(subset_labeled(ds, 0.0025, rng, true, 7, 50), DataError);

  RngStream r1(9, 0), r2(9, 0);
  const auto s1 = subset_labeled(ds, 0.05, r1, true, 7);
  const auto s2 = subset_labeled(ds, 0.05, r2, true, 7);
  for (std::size_t i = 0; i < s1.size(); ++i) CHECK(s1.slices[i].index == s2.slices[i].index);
}

TEST_CASE("split_dataset partitions") {
  const SliceDataset ds = labeled_dataset(400, 7);
  RngStream rng(4, 0);
  const auto [keep, held] = split_dataset(ds, 0.1, rng);
  CHECK(held.size() == 40);
  CHECK(keep.size() == 360);
  std::set<std::pair<std::string, std::int64_t>> seen;
  for (const auto& s : keep.slices) seen.insert({s.case_id, s.index});
  for (const auto& s : held.slices) CHECK(seen.insert({s.case_id, s.index}).second);
}

TEST_CASE("slice directory round trip with checksums") {
  TempDir dir;
  const SliceDataset ds = labeled_dataset(5, 4);
  const std::string digest = save_slice_dataset(ds, dir / "set");
  CHECK(digest == manifest_checksum(dir / "set"));
  const SliceDataset back = load_slice_dataset(dir / "set");
  REQUIRE(back.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(back.slices[i].image == ds.slices[i].image);
    CHECK(back.slices[i].labels == ds.slices[i].labels);
  }
  TempDir other;
  CHECK(save_slice_dataset(ds, other / "set") == digest);

  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir / "set")) {
    if (entry.path().extension() == ".nvg") {
      std::string bytes = read_file(entry.path());
      bytes[bytes.size() - 1] ^= 1;
      write_file_atomic(entry.path(), bytes);
      break;
    }
  }
  CHECK_THROWS_AS(load_slice_dataset(dir / "set"), DataError);
}

TEST_CASE("phantom determinism, labels, and bands") {
  PhantomSpec spec;
  spec.seed = 5;
  spec.depth = 12;
  spec.size = 48;
  spec.organs = 4;
  const Volume a = gen_phantom(spec);
  const Volume b = gen_phantom(spec);
  CHECK(a.intensities == b.intensities);
  CHECK(a.labels == b.labels);
  const std::set<std::uint8_t> labels(a.labels.begin(), a.labels.end());
  CHECK(labels == std::set<std::uint8_t>{0, 1, 2, 3, 4});

  spec.noise_sigma = 0.0;
  const Volume clean = gen_phantom(spec);
  const auto& templates = organ_templates();
  for (std::int64_t i = 0; i < clean.voxel_count(); ++i) {
    const auto l = clean.labels[static_cast<std::size_t>(i)];
    if (l == 0) continue;
    const auto& organ = templates[l - 1];
    const float v = clean.intensities[static_cast<std::size_t>(i)];
    CHECK(v >= organ.band_lo - 1e-3);
    CHECK(v <= organ.band_hi + 1e-3);
  }
  spec.organs = 14;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}
