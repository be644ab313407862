// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "diffseg/core/archive.hpp"
#include "diffseg/data/dataset.hpp"
#include "diffseg/metrics/segmentation.hpp"
#include "diffseg/training/config_text.hpp"
#include "diffseg/training/losses.hpp"
#include "diffseg/training/pretrain.hpp"
#include "diffseg/unet/segmentation_model.hpp"

namespace diffseg::training {

inline constexpr std::int64_t kOneBatchIterationCap = 1000;

struct FinetuneConfig {
  unet::Strategy strategy = unet::Strategy::decoder;
  int t_init = 0;
  bool decoder_includes_middle = false;
  std::int64_t iterations = 10000;
  bool one_batch = false;  // caps iterations at kOneBatchIterationCap
  int batch_size = 4;
  double base_lr = 1e-4;
  double head_lr_scale = 10.0;
  double head_weight_decay = 1e-3;
  double body_weight_decay = 1e-4;
  SegLossOptions loss;
  int head_hidden = 128;
  int classes = 14;
  std::int64_t eval_every = 500;  // 0: evaluate only at the end
  std::uint64_t seed = 0;
  // Backbone for the scratch strategy (its time_conditioned flag is ignored).
  unet::UNetConfig scratch_model;

  void validate() const;
  std::int64_t effective_iterations() const;
  ConfigMap describe() const;
};

struct FinetuneResult {
  unet::FreezePlan plan;
  unet::TransferReport transfer;
  std::string config_hash;
  RunLog log;
  double best_val_dsc = -1.0;
  std::int64_t best_iter = 0;
  std::filesystem::path best_checkpoint;
  std::filesystem::path final_checkpoint;
};

// Builds the model for the strategy: transfer, fixed step, head, freeze for
// linear/decoder; a plain U-Net with a head for scratch.
unet::SegmentationModel build_segmentation_model(const FinetuneConfig& config,
                                                 const TensorArchive* checkpoint,
                                                 unet::TransferReport* transfer = nullptr,
                                                 unet::FreezePlan* plan = nullptr);

// Trains with seg_loss on batches drawn uniformly with replacement, two
// optimizer groups (head, body) and a constant base learning rate. Saves
// best.nta (by validation DSC) and final.nta into out_dir.
FinetuneResult finetune(const FinetuneConfig& config, const TensorArchive* checkpoint,
                        const data::SliceDataset& train, const data::SliceDataset& val,
                        const std::filesystem::path& out_dir, const ProgressFn& progress = {});

// Runs a model built by this module in inference mode over a labeled set.
metrics::SegScore evaluate_segmentation(unet::SegmentationModel& model,
                                        const data::SliceDataset& dataset, int batch = 16);

}  // namespace diffseg::training
