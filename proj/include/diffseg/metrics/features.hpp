// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "diffseg/core/archive.hpp"
#include "diffseg/core/nn.hpp"

namespace diffseg::metrics {

struct GrayImage {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<float> pixels;  // row-major, values in [-1, 1]
};

struct FeatureSet {
  std::string extractor_id;
  std::uint64_t seed = 0;
  Eigen::MatrixXd global;   // N x 64
  Eigen::MatrixXd spatial;  // N x (16*8*8)

  Eigen::Index rows() const { return global.rows(); }
  TensorArchive to_archive() const;
  static FeatureSet from_archive(const TensorArchive& archive);
};

// Frozen random-filter CNN: three conv3x3 + ReLU + 2x2 average-pool stages
// (16, 16, 64 channels). Global features average the last map over space;
// spatial features are the second map average-pooled to 8x8 and flattened.
class RandomCnnExtractor {
 public:
  static constexpr const char* kId = "rand-cnn-v1";

  explicit RandomCnnExtractor(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }
  FeatureSet extract(const std::vector<GrayImage>& images, int batch = 32) const;

 private:
  std::uint64_t seed_;
  ParameterSet params_;
  nn::Conv2d conv1_, conv2_, conv3_;
};

FeatureSet extract_features(const std::vector<GrayImage>& images,
                            const RandomCnnExtractor& extractor);

}  // namespace diffseg::metrics
