// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "diffseg/core/archive.hpp"
#include "diffseg/core/nn.hpp"

namespace diffseg::unet {

struct UNetConfig {
  int base_width = 128;                     // c
  std::vector<int> channel_mult{1, 1, 2, 2};  // one entry per resolution level
  int res_blocks = 2;                       // per encoder level; decoder uses res_blocks + 1
  std::vector<int> attention_levels{3};     // level indices carrying self-attention
  int in_channels = 1;
  int out_channels = 1;
  bool time_conditioned = true;
  int norm_groups = 32;
  int time_embed_mult = 4;
  DType dtype = DType::f32;

  int levels() const { return static_cast<int>(channel_mult.size()); }
  int level_width(int level) const { return base_width * channel_mult.at(level); }
  // Width of the last decoder block, i.e. what an output head consumes.
  int feature_width() const { return level_width(0); }
  int time_embed_dim() const { return base_width * time_embed_mult; }
  bool has_attention(int level) const;

  void validate() const;                   // ConfigError on violation
  void check_input(const Shape& shape) const;

  // Flat "unet.*" keys.
  void to_metadata(Metadata& meta) const;
  static UNetConfig from_metadata(const Metadata& meta);
  // Equal topology apart from output width and conditioning flag.
  bool same_backbone(const UNetConfig& other) const;
};

struct ResBlock {
  nn::GroupNorm norm1;
  nn::Conv2d conv1;
  std::optional<nn::Linear> emb;  // step-conditioned scale/shift
  nn::GroupNorm norm2;
  nn::Conv2d conv2;
  std::optional<nn::Conv2d> skip;

  Tensor operator()(const Tensor& x, const Tensor& emb_act) const;
};

struct AttentionBlock {
  nn::GroupNorm norm;
  nn::Conv2d qkv;
  nn::Conv2d proj;

  Tensor operator()(const Tensor& x) const;
};

// One entry of the encoder or decoder path.
struct Stage {
  std::optional<nn::Conv2d> conv;  // input conv or stride-2 downsample
  std::optional<ResBlock> res;
  std::optional<AttentionBlock> attn;
  std::optional<nn::Conv2d> up;  // nearest 2x upsample followed by this conv
};

// Noise-predicting U-Net (time_conditioned) or its plain variant.
//
// Parameter name prefixes:
//   time.*     step-embedding MLP (conditioned variant only)
//   encoder.*  input conv, down path, and its per-block conditioning
//   middle.*   bottleneck blocks
//   decoder.*  up path including its attention and upsampling convs
//   out.*      final norm + conv producing out_channels (dropped by attach_head)
class UNet {
 public:
  UNet(const UNetConfig& config, std::uint64_t seed);
  UNet(UNet&&) = default;
  UNet& operator=(UNet&&) = default;
  UNet(const UNet&) = delete;
  UNet& operator=(const UNet&) = delete;

  const UNetConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  // Output of the step MLP, [B, time_embed_dim].
  Tensor embed(const std::vector<int>& steps) const;

  // Decoder output, [B, feature_width, H, W]. emb may be undefined for the
  // plain variant.
  Tensor features(const Tensor& x, const Tensor& emb) const;
  Tensor output(const Tensor& features) const;

  // Noise prediction for the conditioned variant.
  Tensor forward(const Tensor& x, const std::vector<int>& steps) const;
  // Plain variant forward.
  Tensor forward(const Tensor& x) const;

  bool has_output_layer() const { return out_conv_.has_value(); }
  void drop_output_layer();

 private:
  UNetConfig config_;
  ParameterSet params_;
  std::optional<nn::Linear> time_fc1_;
  std::optional<nn::Linear> time_fc2_;
  std::vector<Stage> encoder_;
  ResBlock mid_res0_;
  std::optional<AttentionBlock> mid_attn_;
  ResBlock mid_res1_;
  std::vector<Stage> decoder_;
  std::optional<nn::GroupNorm> out_norm_;
  std::optional<nn::Conv2d> out_conv_;
};

UNet build_noise_unet(UNetConfig config, std::uint64_t seed);
UNet build_plain_unet(UNetConfig config, std::uint64_t seed);

// Copies archive tensors into matching parameters (same names and shapes).
// Throws on any shape mismatch or missing name among `params`.
void load_parameters(ParameterSet& params, const TensorArchive& archive);

}  // namespace diffseg::unet
