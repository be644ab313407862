// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "diffseg/core/nn.hpp"

namespace diffseg::unet {

struct HeadConfig {
  int in_channels = 128;
  int hidden = 128;
  int classes = 14;
};

// conv3x3 -> BN -> ReLU, twice, then a 1x1 conv to class logits. Parameters
// live under "head." and batch-norm running statistics in a separate buffer set.
class ClassHead {
 public:
  ClassHead() = default;
  static ClassHead create(ParameterSet& params, ParameterSet& buffers, const HeadConfig& config,
                          RngStream& rng, DType dtype);

  const HeadConfig& config() const { return config_; }
  Tensor operator()(const Tensor& features, bool training);

 private:
  HeadConfig config_;
  nn::Conv2d conv1_;
  nn::BatchNorm2d bn1_;
  nn::Conv2d conv2_;
  nn::BatchNorm2d bn2_;
  nn::Conv2d out_;
};

}  // namespace diffseg::unet
