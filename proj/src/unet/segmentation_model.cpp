// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "diffseg/unet/segmentation_model.hpp"

#include "diffseg/core/errors.hpp"
#include "diffseg/core/ops.hpp"

namespace diffseg::unet {

namespace {

ClassHead make_head(UNet& backbone, ParameterSet& buffers, const HeadConfig& head,
                    std::uint64_t seed) {
  const int width = backbone.config().feature_width();
  if (head.in_channels != width) {
    throw ConfigError("head expects " + std::to_string(head.in_channels) +
                      " input channels but the backbone produces " + std::to_string(width));
  }
  if (backbone.has_output_layer()) {
    backbone.drop_output_layer();
  }
  RngStream rng = RngStream(seed, 0).split(0x68656164);  // "head"
  return ClassHead::create(backbone.params(), buffers, head, rng, backbone.config().dtype);
}

}  // namespace

SegmentationModel::SegmentationModel(UNet backbone, const HeadConfig& head, std::uint64_t seed)
    : backbone_(std::move(backbone)) {
  head_ = make_head(backbone_, buffers_, head, seed);
}

void SegmentationModel::fix_diffusion_step(int t, int max_step) {
  if (!backbone_.config().time_conditioned) {
    throw ConfigError("plain backbone has no diffusion step to fix");
  }
  if (t < 0 || t > max_step) {
    throw ConfigError("t_init " + std::to_string(t) + " outside [0, " + std::to_string(max_step) +
                      "]");
  }
  NoGradGuard no_grad;
  step_embedding_ = backbone_.embed({t}).detach();
  step_ = t;
}

Tensor SegmentationModel::features(const Tensor& x) const {
  if (!backbone_.config().time_conditioned) {
    return backbone_.features(x, Tensor());
  }
  if (!step_) {
    throw ConfigError("diffusion step not fixed; call fix_diffusion_step first");
  }
  return backbone_.features(x, ops::repeat_rows(step_embedding_, x.dim(0)));
}

Tensor SegmentationModel::forward(const Tensor& x) { return head_(features(x), training_); }

SegmentationModel attach_head(UNet backbone, const HeadConfig& head, std::uint64_t seed) {
  return SegmentationModel(std::move(backbone), head, seed);
}

TensorArchive segmentation_archive(const SegmentationModel& model, Metadata meta) {
  model.backbone_config().to_metadata(meta);
  meta["seg.head_hidden"] = std::to_string(model.head_config().hidden);
  meta["seg.classes"] = std::to_string(model.head_config().classes);
  if (model.diffusion_step()) {
    meta["seg.t_init"] = std::to_string(*model.diffusion_step());
  }
  TensorArchive a = to_archive(model.params(), meta);
  for (const auto& b : model.buffers().items()) {
    a.tensors.push_back({b.name, b.tensor});
  }
  return a;
}

SegmentationModel load_segmentation_model(const TensorArchive& archive) {
  UNetConfig cfg = UNetConfig::from_metadata(archive.meta);
  HeadConfig head;
  head.in_channels = cfg.feature_width();
  head.hidden = std::stoi(archive.meta_at("seg.head_hidden"));
  head.classes = std::stoi(archive.meta_at("seg.classes"));
  SegmentationModel model(UNet(cfg, 0), head, 0);
  load_parameters(model.params(), archive);
  load_parameters(model.buffers(), archive);
  if (cfg.time_conditioned) {
    const int t = std::stoi(archive.meta_at("seg.t_init"));
    model.fix_diffusion_step(t, t);
  }
  model.set_training(false);
  return model;
}

TransferReport transfer_weights(const TensorArchive& checkpoint, SegmentationModel& model) {
  TransferReport report;
  for (const auto& p : model.params().items()) {
    const Tensor* src = checkpoint.find(p.name);
    if (starts_with(p.name, "head.")) {
      report.missing.push_back(p.name);
      continue;
    }
    if (!src) {
      throw ConfigError("checkpoint lacks backbone parameter " + p.name);
    }
    if (src->shape() != p.tensor.shape()) {
      throw ConfigError("shape mismatch for " + p.name + ": checkpoint " + shape_str(src->shape()) +
                        " vs model " + shape_str(p.tensor.shape()));
    }
    report.loaded.push_back(p.name);
  }
  if (checkpoint.meta.contains("unet.base_width")) {
    const auto saved = UNetConfig::from_metadata(checkpoint.meta);
    if (!saved.same_backbone(model.backbone_config())) {
      throw ConfigError("checkpoint architecture differs from the requested backbone");
    }
  }
  for (const auto& t : checkpoint.tensors) {
    if (!model.params().contains(t.name)) {
      report.skipped.push_back(t.name);
    }
  }
  for (const auto& name : report.loaded) {
    model.params().at(name).tensor.copy_from(*checkpoint.find(name));
  }
  return report;
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::linear: return "linear";
    case Strategy::decoder: return "decoder";
    case Strategy::scratch: return "scratch";
  }
  return "?";
}

Strategy strategy_from_string(const std::string& s) {
  if (s == "linear") return Strategy::linear;
  if (s == "decoder") return Strategy::decoder;
  if (s == "scratch") return Strategy::scratch;
  throw ConfigError("unknown strategy '" + s + "' (expected linear, decoder or scratch)");
}

FreezePlan apply_freeze(SegmentationModel& model, Strategy strategy,
                        bool decoder_includes_middle) {
  const bool conditioned = model.backbone_config().time_conditioned;
  if (strategy == Strategy::scratch && conditioned) {
    throw ConfigError("scratch strategy requires the plain (unconditioned) backbone");
  }
  if (strategy != Strategy::scratch && !conditioned) {
    throw ConfigError(to_string(strategy) + " strategy requires a pre-trained conditioned backbone");
  }
  FreezePlan plan;
  plan.strategy = strategy;
  plan.decoder_includes_middle = decoder_includes_middle;
  for (auto& p : model.params().items()) {
    bool train = false;
    switch (strategy) {
      case Strategy::scratch:
        train = true;
        break;
      case Strategy::linear:
        train = starts_with(p.name, "head.");
        break;
      case Strategy::decoder:
        train = starts_with(p.name, "head.") || starts_with(p.name, "decoder.") ||
                (decoder_includes_middle && starts_with(p.name, "middle."));
        break;
    }
    model.params().set_trainable(p.name, train);
    if (train) {
      plan.trainable.push_back(p.name);
    }
  }
  return plan;
}

}  // namespace diffseg::unet
