// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "diffseg/core/rng.hpp"
#include "diffseg/core/tensor.hpp"
#include "diffseg/unet/unet.hpp"

namespace diffseg::testing {

// Directory removed on scope exit.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("diffseg_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline unet::UNetConfig tiny_unet(DType dtype = DType::f32) {
  unet::UNetConfig c;
  c.base_width = 8;
  c.channel_mult = {1, 2};
  c.res_blocks = 1;
  c.attention_levels = {1};
  c.norm_groups = 4;
  c.dtype = dtype;
  return c;
}

inline Tensor random_tensor(const Shape& shape, DType dtype, std::uint64_t seed,
                            double stddev = 1.0) {
  RngStream rng(seed, 99);
  Tensor t = Tensor::zeros(shape, dtype);
  rng.fill_normal(t, 0.0, stddev);
  return t;
}

// Zero-initialized layers make most gradients vanish; perturb everything.
inline void perturb(ParameterSet& params, std::uint64_t seed, double stddev = 0.1) {
  RngStream rng(seed, 7);
  for (auto& p : params.items()) {
    for (std::int64_t i = 0; i < p.tensor.numel(); ++i) {
      p.tensor.set(i, p.tensor.at(i) + stddev * rng.normal());
    }
  }
}

}  // namespace diffseg::testing
