// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "diffseg/training/finetune.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "diffseg/core/errors.hpp"
#include "diffseg/core/optim.hpp"
#include "diffseg/diffusion/schedule.hpp"

namespace diffseg::training {

namespace {

std::string join(const std::vector<std::string>& names) {
  std::string out;
  for (const auto& n : names) {
    out += (out.empty() ? "" : ",") + n;
  }
  return out;
}

}  // namespace

void FinetuneConfig::validate() const {
  if (iterations < 1 || batch_size < 1 || eval_every < 0) {
    throw ConfigError("fine-tune iterations and batch size must be positive");
  }
  if (!(base_lr > 0.0) || !(head_lr_scale > 0.0) || head_weight_decay < 0.0 ||
      body_weight_decay < 0.0) {
    throw ConfigError("fine-tune learning rates must be positive and weight decays non-negative");
  }
  if (head_hidden < 1 || classes < 2 || classes > 255) {
    throw ConfigError("fine-tune head needs hidden >= 1 and 2..255 classes");
  }
  if (t_init < 0) {
    throw ConfigError("t_init must be non-negative");
  }
}

std::int64_t FinetuneConfig::effective_iterations() const {
  return one_batch ? std::min(iterations, kOneBatchIterationCap) : iterations;
}

ConfigMap FinetuneConfig::describe() const {
  ConfigMap m;
  m["finetune.strategy"] = unet::to_string(strategy);
  m["finetune.t_init"] = std::to_string(t_init);
  m["finetune.decoder_includes_middle"] = decoder_includes_middle ? "true" : "false";
  m["finetune.iterations"] = std::to_string(iterations);
  m["finetune.one_batch"] = one_batch ? "true" : "false";
  m["finetune.batch_size"] = std::to_string(batch_size);
  m["finetune.base_lr"] = format_real(base_lr);
  m["finetune.head_lr_scale"] = format_real(head_lr_scale);
  m["finetune.head_weight_decay"] = format_real(head_weight_decay);
  m["finetune.body_weight_decay"] = format_real(body_weight_decay);
  m["finetune.loss_weight"] = format_real(loss.weight);
  m["finetune.dice_eps"] = format_real(loss.eps);
  m["finetune.macro_dice"] = loss.macro_dice ? "true" : "false";
  m["finetune.head_hidden"] = std::to_string(head_hidden);
  m["finetune.classes"] = std::to_string(classes);
  m["finetune.eval_every"] = std::to_string(eval_every);
  m["finetune.seed"] = std::to_string(seed);
  if (strategy == unet::Strategy::scratch) {
    Metadata um;
    scratch_model.to_metadata(um);
    for (const auto& [k, v] : um) m["scratch." + k] = v;
  }
  return m;
}

unet::SegmentationModel build_segmentation_model(const FinetuneConfig& config,
                                                 const TensorArchive* checkpoint,
                                                 unet::TransferReport* transfer,
                                                 unet::FreezePlan* plan) {
  const std::uint64_t init_seed = config.seed * 0x9E3779B97F4A7C15ULL + 17;
  if (config.strategy == unet::Strategy::scratch) {
    unet::UNetConfig cfg = config.scratch_model;
    cfg.time_conditioned = false;
    unet::HeadConfig head{cfg.feature_width(), config.head_hidden, config.classes};
    auto model = unet::attach_head(unet::build_plain_unet(cfg, init_seed), head, init_seed);
    auto p = unet::apply_freeze(model, config.strategy);
    if (plan) *plan = p;
    return model;
  }
  if (!checkpoint) {
    throw ConfigError(unet::to_string(config.strategy) + " strategy needs a pre-trained checkpoint");
  }
  unet::UNetConfig cfg = unet::UNetConfig::from_metadata(checkpoint->meta);
  cfg.time_conditioned = true;
  const auto sched = diffusion::NoiseSchedule::from_metadata(checkpoint->meta);
  unet::HeadConfig head{cfg.feature_width(), config.head_hidden, config.classes};
  auto model = unet::attach_head(unet::build_noise_unet(cfg, init_seed), head, init_seed);
  auto report = unet::transfer_weights(*checkpoint, model);
  model.fix_diffusion_step(config.t_init, sched.steps);
  auto p = unet::apply_freeze(model, config.strategy, config.decoder_includes_middle);
  if (transfer) *transfer = report;
  if (plan) *plan = p;
  return model;
}

metrics::SegScore evaluate_segmentation(unet::SegmentationModel& model,
                                        const data::SliceDataset& dataset, int batch) {
  if (!dataset.labeled()) {
    throw DataError("evaluation needs a labeled slice set");
  }
  const bool was_training = model.training();
  model.set_training(false);
  NoGradGuard no_grad;
  std::vector<std::uint8_t> pred, truth;
  for (std::size_t start = 0; start < dataset.size(); start += static_cast<std::size_t>(batch)) {
    std::vector<std::size_t> which;
    for (std::size_t i = start; i < std::min(dataset.size(), start + static_cast<std::size_t>(batch)); ++i) {
      which.push_back(i);
    }
    const Tensor logits = model.forward(dataset.images(which, model.backbone_config().dtype));
    const auto p = predict_labels(logits);
    const auto g = dataset.labels(which);
    pred.insert(pred.end(), p.begin(), p.end());
    truth.insert(truth.end(), g.begin(), g.end());
  }
  model.set_training(was_training);
  return metrics::seg_scores(pred, truth, model.head_config().classes);
}

FinetuneResult finetune(const FinetuneConfig& config, const TensorArchive* checkpoint,
                        const data::SliceDataset& train, const data::SliceDataset& val,
                        const std::filesystem::path& out_dir, const ProgressFn& progress) {
  config.validate();
  if (train.size() == 0) {
    throw DataError("labeled training set is empty");
  }
  if (!train.labeled()) {
    throw DataError("fine-tuning needs labels on every training slice");
  }
  FinetuneResult result;
  const ConfigMap described = config.describe();
  result.config_hash = config_hash(described);
  std::filesystem::create_directories(out_dir);
  write_file_atomic(out_dir / "config.txt", canonical_text(described));
  result.log = RunLog(out_dir / "runlog.tsv");
  result.log.note("config_hash", result.config_hash);
  result.log.note("seed", std::to_string(config.seed));

  auto model = build_segmentation_model(config, checkpoint, &result.transfer, &result.plan);
  model.set_training(true);
  auto groups = group_by_prefix(
      model.params(),
      {{ParamGroup{"head", {}, config.head_lr_scale, config.head_weight_decay}, {"head."}}},
      ParamGroup{"body", {}, 1.0, config.body_weight_decay});
  for (const auto& g : groups) {
    result.log.note("group." + g.name, join(g.members));
  }
  result.log.note("transfer.loaded", std::to_string(result.transfer.loaded.size()));
  result.log.note("transfer.skipped", join(result.transfer.skipped));
  result.log.note("train.slices", std::to_string(train.size()));
  std::string provenance;
  for (const auto& s : train.slices) {
    provenance += (provenance.empty() ? "" : ",") + s.case_id + ":" + std::to_string(s.index);
  }
  result.log.note("train.provenance", provenance);
  Adam adam(groups);

  Metadata meta;
  meta["strategy"] = unet::to_string(config.strategy);
  meta["config_hash"] = result.config_hash;
  meta["seed"] = std::to_string(config.seed);
  if (checkpoint) {
    for (const auto& [k, v] : checkpoint->meta) {
      if (k.starts_with("norm.") || k.starts_with("diffusion.")) meta[k] = v;
    }
  }
  auto save = [&](const std::filesystem::path& path, std::int64_t iter) {
    Metadata m = meta;
    m["iteration"] = std::to_string(iter);
    save_archive(unet::segmentation_archive(model, m), path);
  };

  RngStream rng(config.seed, 3);
  const auto total = config.effective_iterations();
  const auto n = static_cast<std::int64_t>(train.size());
  const auto start = std::chrono::steady_clock::now();
  auto evaluate = [&](std::int64_t iter) {
    if (val.size() == 0) return;
    const auto score = evaluate_segmentation(model, val);
    result.log.note("val.dsc@" + std::to_string(iter), format_real(score.mean_dsc));
    if (score.mean_dsc > result.best_val_dsc) {
      result.best_val_dsc = score.mean_dsc;
      result.best_iter = iter;
      result.best_checkpoint = out_dir / "best.nta";
      save(result.best_checkpoint, iter);
    }
  };
  for (std::int64_t iter = 0; iter < total; ++iter) {
    std::vector<std::size_t> which(static_cast<std::size_t>(config.batch_size));
    for (auto& w : which) w = static_cast<std::size_t>(rng.uniform_int(0, n - 1));
    const Tensor x = train.images(which, model.backbone_config().dtype);
    Tensor loss = seg_loss(model.forward(x), train.labels(which), config.loss);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      throw NumericError("non-finite fine-tuning loss at iteration " + std::to_string(iter + 1));
    }
    loss.backward();
    adam.step(model.params(), config.base_lr);
    model.params().zero_grad();
    LogRecord rec{iter + 1, value, config.base_lr,
                  std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
                      .count()};
    result.log.record(rec);
    if (progress) progress(rec);
    if (config.eval_every > 0 && (iter + 1) % config.eval_every == 0 && iter + 1 < total) {
      evaluate(iter + 1);
    }
  }
  evaluate(total);
  result.final_checkpoint = out_dir / "final.nta";
  save(result.final_checkpoint, total);
  if (val.size() == 0) {
    result.best_checkpoint = result.final_checkpoint;
    result.best_iter = total;
  }
  return result;
}

}  // namespace diffseg::training
