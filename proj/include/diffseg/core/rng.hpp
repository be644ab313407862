// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>

#include "diffseg/core/tensor.hpp"

namespace diffseg {

// Counter-based generator (Philox4x32-10). The raw 32-bit draws depend only on
// (seed, stream, counter), so streams can be split without coordination and
// replayed on any platform. Normal draws go through Box-Muller in double
// precision.
class RngStream {
 public:
  RngStream() = default;
  RngStream(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  std::uint64_t counter() const { return counter_; }

  // Independent child stream; equal (parent, tag) pairs give equal children.
  RngStream split(std::uint64_t tag) const;

  std::uint32_t next_u32();
  std::uint64_t next_u64();
  double uniform();                          // [0, 1)
  double normal();                           // N(0, 1)
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);  // inclusive bounds
  bool bernoulli(double p);

  void fill_normal(Tensor& t, double mean = 0.0, double stddev = 1.0);
  Tensor normal_like(const Shape& shape, DType dtype);

  static std::array<std::uint32_t, 4> philox(std::array<std::uint32_t, 4> counter,
                                             std::array<std::uint32_t, 2> key);

 private:
  void refill();

  std::uint64_t seed_ = 0;
  std::uint64_t stream_ = 0;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  int used_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace diffseg
