// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>

#include "diffseg/data/dataset.hpp"
#include "diffseg/data/preprocess.hpp"
#include "diffseg/diffusion/schedule.hpp"
#include "diffseg/training/config_text.hpp"
#include "diffseg/training/runlog.hpp"
#include "diffseg/unet/unet.hpp"

namespace diffseg::training {

// Linear interpolation from lr0 at iter 0 to lr1 at iter == total.
double lr_at(std::int64_t iter, std::int64_t total, double lr0, double lr1);

struct PretrainConfig {
  unet::UNetConfig model;
  int diffusion_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  diffusion::ScheduleKind schedule = diffusion::ScheduleKind::linear;
  std::int64_t iterations = 300000;
  int batch_size = 8;
  double lr_start = 2e-4;
  double lr_end = 2e-5;
  double ema_momentum = 0.9999;
  std::int64_t checkpoint_every = 0;  // 0: final checkpoints only
  bool hflip = true;
  std::uint64_t seed = 0;

  void validate() const;
  ConfigMap describe() const;
};

struct PretrainResult {
  std::filesystem::path live_checkpoint;
  std::filesystem::path ema_checkpoint;
  std::string config_hash;
  RunLog log;
};

using ProgressFn = std::function<void(const LogRecord&)>;

// Writes live_<iter>.nta / ema_<iter>.nta at the checkpoint cadence, then
// live.nta and ema.nta, plus config.txt and runlog.tsv, into out_dir.
// A non-finite loss throws NumericError; checkpoints already written stay.
PretrainResult pretrain(const PretrainConfig& config, const data::SliceDataset& dataset,
                        const data::IntensityStats& stats, const std::filesystem::path& out_dir,
                        const ProgressFn& progress = {});

}  // namespace diffseg::training
