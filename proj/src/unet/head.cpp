// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "diffseg/unet/head.hpp"

#include "diffseg/core/errors.hpp"
#include "diffseg/core/ops.hpp"

namespace diffseg::unet {

ClassHead ClassHead::create(ParameterSet& params, ParameterSet& buffers, const HeadConfig& config,
                            RngStream& rng, DType dtype) {
  if (config.in_channels < 1 || config.hidden < 1 || config.classes < 2) {
    throw ConfigError("head needs positive widths and at least two classes");
  }
  ClassHead h;
  h.config_ = config;
  h.conv1_ = nn::Conv2d::create(params, "head.conv1", config.in_channels, config.hidden, 3, 1, 1,
                                rng, dtype);
  h.bn1_ = nn::BatchNorm2d::create(params, buffers, "head.bn1", config.hidden, dtype);
  h.conv2_ = nn::Conv2d::create(params, "head.conv2", config.hidden, config.hidden, 3, 1, 1, rng,
                                dtype);
  h.bn2_ = nn::BatchNorm2d::create(params, buffers, "head.bn2", config.hidden, dtype);
  h.out_ = nn::Conv2d::create(params, "head.out", config.hidden, config.classes, 1, 1, 0, rng,
                              dtype);
  return h;
}

Tensor ClassHead::operator()(const Tensor& features, bool training) {
  Tensor h = ops::relu(bn1_(conv1_(features), training));
  h = ops::relu(bn2_(conv2_(h), training));
  return out_(h);
}

}  // namespace diffseg::unet
