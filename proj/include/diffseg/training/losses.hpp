// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "diffseg/core/tensor.hpp"

namespace diffseg::training {

struct SegLossOptions {
  double weight = 0.5;  // share of cross-entropy; Dice gets 1 - weight
  double eps = 1e-5;
  bool macro_dice = false;  // mean of per-class Dice instead of one pooled ratio
};

struct SegLossParts {
  double cross_entropy = 0.0;
  double dice = 0.0;
  double total = 0.0;
};

// Softmax over channels, then weight * CE + (1 - weight) * Dice. Background
// is an ordinary class in both terms. logits [B,C,H,W]; labels [B*H*W].
Tensor seg_loss(const Tensor& logits, const std::vector<std::uint8_t>& labels,
                const SegLossOptions& options = {}, SegLossParts* parts = nullptr);

// Same value recomputed without a graph, with its two components.
SegLossParts seg_loss_parts(const Tensor& logits, const std::vector<std::uint8_t>& labels,
                            const SegLossOptions& options = {});

// Channel argmax of logits [B,C,H,W] -> [B*H*W].
std::vector<std::uint8_t> predict_labels(const Tensor& logits);

}  // namespace diffseg::training
