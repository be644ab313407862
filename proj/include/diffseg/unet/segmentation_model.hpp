// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "diffseg/core/archive.hpp"
#include "diffseg/unet/head.hpp"
#include "diffseg/unet/unet.hpp"

namespace diffseg::unet {

// U-Net backbone with its output layer replaced by a ClassHead.
class SegmentationModel {
 public:
  SegmentationModel(UNet backbone, const HeadConfig& head, std::uint64_t seed);

  const UNetConfig& backbone_config() const { return backbone_.config(); }
  const HeadConfig& head_config() const { return head_.config(); }
  const UNet& backbone() const { return backbone_; }

  // Backbone parameters plus "head.*".
  ParameterSet& params() { return backbone_.params(); }
  const ParameterSet& params() const { return backbone_.params(); }
  // Batch-norm running statistics.
  ParameterSet& buffers() { return buffers_; }
  const ParameterSet& buffers() const { return buffers_; }

  // Freezes the step embedding for t into a constant. Required before
  // forward() on a time-conditioned backbone.
  void fix_diffusion_step(int t, int max_step);
  std::optional<int> diffusion_step() const { return step_; }

  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }

  Tensor features(const Tensor& x) const;  // [B, feature_width, H, W]
  Tensor forward(const Tensor& x);         // logits [B, classes, H, W]

 private:
  UNet backbone_;
  ParameterSet buffers_;
  ClassHead head_;
  Tensor step_embedding_;  // [1, time_embed_dim], no graph
  std::optional<int> step_;
  bool training_ = true;
};

SegmentationModel attach_head(UNet backbone, const HeadConfig& head, std::uint64_t seed);

// Parameters, batch-norm buffers, and "unet.*" / "seg.*" metadata together.
TensorArchive segmentation_archive(const SegmentationModel& model, Metadata meta);
SegmentationModel load_segmentation_model(const TensorArchive& archive);

struct TransferReport {
  std::vector<std::string> loaded;   // copied into the model
  std::vector<std::string> skipped;  // in the checkpoint, unused by the model
  std::vector<std::string> missing;  // in the model, left at fresh init (head.* only)
};

// All-or-nothing copy of backbone weights. Any shape mismatch or absent
// backbone tensor throws before a single value is written.
TransferReport transfer_weights(const TensorArchive& checkpoint, SegmentationModel& model);

enum class Strategy { linear, decoder, scratch };

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

struct FreezePlan {
  Strategy strategy = Strategy::decoder;
  bool decoder_includes_middle = false;
  std::vector<std::string> trainable;
};

FreezePlan apply_freeze(SegmentationModel& model, Strategy strategy,
                        bool decoder_includes_middle = false);

}  // namespace diffseg::unet
