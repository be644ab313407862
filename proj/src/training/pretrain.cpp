// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "diffseg/training/pretrain.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include "diffseg/core/archive.hpp"
#include "diffseg/core/errors.hpp"
#include "diffseg/core/optim.hpp"
#include "diffseg/core/sha256.hpp"
#include "diffseg/diffusion/process.hpp"

namespace diffseg::training {

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string canonical_text(const ConfigMap& config) {
  std::string out;
  for (const auto& [k, v] : config) {
    out += k + " = " + v + "\n";
  }
  return out;
}

std::string config_hash(const ConfigMap& config) { return sha256_hex(canonical_text(config)); }

double lr_at(std::int64_t iter, std::int64_t total, double lr0, double lr1) {
  if (total <= 0) {
    throw ConfigError("lr_at: total iterations must be positive");
  }
  if (iter < 0 || iter > total) {
    throw ConfigError("lr_at: iteration " + std::to_string(iter) + " outside [0, " +
                      std::to_string(total) + "]");
  }
  return lr0 + (lr1 - lr0) * static_cast<double>(iter) / static_cast<double>(total);
}

void PretrainConfig::validate() const {
  model.validate();
  if (!model.time_conditioned || model.in_channels != 1 || model.out_channels != 1) {
    throw ConfigError("pre-training needs a conditioned single-channel noise U-Net");
  }
  if (iterations < 1 || batch_size < 1) {
    throw ConfigError("pretrain iterations and batch size must be positive");
  }
  if (!(lr_start > 0.0) || !(lr_end > 0.0) || lr_end > lr_start) {
    throw ConfigError("pretrain learning rates need 0 < lr_end <= lr_start");
  }
  if (!(ema_momentum >= 0.0 && ema_momentum < 1.0)) {
    throw ConfigError("EMA momentum must lie in [0, 1)");
  }
  if (checkpoint_every < 0) {
    throw ConfigError("checkpoint cadence must be non-negative");
  }
}

ConfigMap PretrainConfig::describe() const {
  Metadata unet_meta;
  model.to_metadata(unet_meta);
  ConfigMap m(unet_meta.begin(), unet_meta.end());
  m["diffusion.T"] = std::to_string(diffusion_steps);
  m["diffusion.beta_start"] = format_real(beta_start);
  m["diffusion.beta_end"] = format_real(beta_end);
  m["diffusion.kind"] = diffusion::to_string(schedule);
  m["pretrain.iterations"] = std::to_string(iterations);
  m["pretrain.batch_size"] = std::to_string(batch_size);
  m["pretrain.lr_start"] = format_real(lr_start);
  m["pretrain.lr_end"] = format_real(lr_end);
  m["pretrain.ema_momentum"] = format_real(ema_momentum);
  m["pretrain.checkpoint_every"] = std::to_string(checkpoint_every);
  m["pretrain.hflip"] = hflip ? "true" : "false";
  m["pretrain.seed"] = std::to_string(seed);
  return m;
}

PretrainResult pretrain(const PretrainConfig& config, const data::SliceDataset& dataset,
                        const data::IntensityStats& stats, const std::filesystem::path& out_dir,
                        const ProgressFn& progress) {
  config.validate();
  if (dataset.size() == 0) {
    throw DataError("pre-training set is empty");
  }
  config.model.check_input({1, 1, dataset.height, dataset.width});
  const auto sched = diffusion::make_schedule(config.diffusion_steps, config.beta_start,
                                              config.beta_end, config.schedule);
  const ConfigMap described = config.describe();
  PretrainResult result;
  result.config_hash = config_hash(described);
  std::filesystem::create_directories(out_dir);
  write_file_atomic(out_dir / "config.txt", canonical_text(described));
  result.log = RunLog(out_dir / "runlog.tsv");
  result.log.note("config_hash", result.config_hash);
  result.log.note("seed", std::to_string(config.seed));

  unet::UNet net = unet::build_noise_unet(config.model, config.seed);
  ParameterSet ema = net.params().clone();
  Adam adam({ParamGroup{"all", net.params().names(), 1.0, 0.0}});
  RngStream data_rng = RngStream(config.seed, 1);
  RngStream noise_rng = RngStream(config.seed, 2);
  const diffusion::NoiseModel model = [&net](const Tensor& x, const std::vector<int>& t) {
    return net.forward(x, t);
  };

  Metadata meta;
  config.model.to_metadata(meta);
  sched.to_metadata(meta);
  stats.to_metadata(meta);
  meta["config_hash"] = result.config_hash;
  meta["seed"] = std::to_string(config.seed);
  meta["data.height"] = std::to_string(dataset.height);
  meta["data.width"] = std::to_string(dataset.width);
  auto save_pair = [&](std::int64_t iter, const std::string& suffix) {
    meta["iteration"] = std::to_string(iter);
    meta["ema"] = "false";
    const auto live = out_dir / ("live" + suffix + ".nta");
    save_weights(net.params(), meta, live);
    meta["ema"] = "true";
    const auto averaged = out_dir / ("ema" + suffix + ".nta");
    save_weights(ema, meta, averaged);
    return std::make_pair(live, averaged);
  };

  const auto start = std::chrono::steady_clock::now();
  const auto n = static_cast<std::int64_t>(dataset.size());
  for (std::int64_t iter = 0; iter < config.iterations; ++iter) {
    std::vector<std::size_t> which(static_cast<std::size_t>(config.batch_size));
    for (auto& w : which) w = static_cast<std::size_t>(data_rng.uniform_int(0, n - 1));
    data::SliceDataset batch;
    batch.height = dataset.height;
    batch.width = dataset.width;
    for (auto w : which) {
      data::Slice s = dataset.slices[w];
      s.labels.clear();
      batch.slices.push_back(config.hflip ? data::augment_hflip(std::move(s), dataset.width, data_rng)
                                          : std::move(s));
    }
    std::vector<std::size_t> all(which.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const Tensor x0 = batch.images(all, config.model.dtype);

    auto loss = diffusion::ddpm_loss(model, x0, sched, noise_rng);
    const double value = loss.loss.item();
    if (!std::isfinite(value)) {
      throw NumericError("non-finite pre-training loss at iteration " + std::to_string(iter + 1) +
                         "; last written checkpoints in " + out_dir.string() + " are kept");
    }
    loss.loss.backward();
    const double lr = lr_at(iter, config.iterations, config.lr_start, config.lr_end);
    adam.step(net.params(), lr);
    net.params().zero_grad();
    ema_update(ema, net.params(), config.ema_momentum);

    LogRecord rec{iter + 1, value, lr,
                  std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
                      .count()};
    result.log.record(rec);
    if (progress) progress(rec);
    if (config.checkpoint_every > 0 && (iter + 1) % config.checkpoint_every == 0) {
      char suffix[24];
      std::snprintf(suffix, sizeof suffix, "_%07lld", static_cast<long long>(iter + 1));
      save_pair(iter + 1, suffix);
    }
  }
  std::tie(result.live_checkpoint, result.ema_checkpoint) = save_pair(config.iterations, "");
  return result;
}

}  // namespace diffseg::training
