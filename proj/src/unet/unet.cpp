// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "diffseg/unet/unet.hpp"

#include <algorithm>
#include <sstream>

#include "diffseg/core/errors.hpp"
#include "diffseg/core/ops.hpp"
#include "diffseg/diffusion/schedule.hpp"

namespace diffseg::unet {

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    s += (i ? "," : "") + std::to_string(v[i]);
  }
  return s;
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) {
      out.push_back(std::stoi(item));
    }
  }
  return out;
}

ResBlock make_res_block(ParameterSet& params, const std::string& prefix, int in_ch, int out_ch,
                        const UNetConfig& cfg, RngStream& rng) {
  ResBlock b;
  b.norm1 = nn::GroupNorm::create(params, prefix + ".norm1", in_ch, cfg.norm_groups, cfg.dtype);
  b.conv1 = nn::Conv2d::create(params, prefix + ".conv1", in_ch, out_ch, 3, 1, 1, rng, cfg.dtype);
  if (cfg.time_conditioned) {
    b.emb = nn::Linear::create(params, prefix + ".emb", cfg.time_embed_dim(), 2 * out_ch, rng,
                               cfg.dtype);
  }
  b.norm2 = nn::GroupNorm::create(params, prefix + ".norm2", out_ch, cfg.norm_groups, cfg.dtype);
  b.conv2 = nn::Conv2d::create(params, prefix + ".conv2", out_ch, out_ch, 3, 1, 1, rng, cfg.dtype,
                               /*zero_init=*/true);
  if (in_ch != out_ch) {
    b.skip = nn::Conv2d::create(params, prefix + ".skip", in_ch, out_ch, 1, 1, 0, rng, cfg.dtype);
  }
  return b;
}

AttentionBlock make_attention(ParameterSet& params, const std::string& prefix, int ch,
                              const UNetConfig& cfg, RngStream& rng) {
  AttentionBlock a;
  a.norm = nn::GroupNorm::create(params, prefix + ".norm", ch, cfg.norm_groups, cfg.dtype);
  a.qkv = nn::Conv2d::create(params, prefix + ".qkv", ch, 3 * ch, 1, 1, 0, rng, cfg.dtype);
  a.proj = nn::Conv2d::create(params, prefix + ".proj", ch, ch, 1, 1, 0, rng, cfg.dtype,
                              /*zero_init=*/true);
  return a;
}

Tensor apply_stage(const Stage& s, Tensor h, const Tensor& emb_act) {
  if (s.conv) h = (*s.conv)(h);
  if (s.res) h = (*s.res)(h, emb_act);
  if (s.attn) h = (*s.attn)(h);
  if (s.up) h = (*s.up)(ops::upsample_nearest2x(h));
  return h;
}

}  // namespace

bool UNetConfig::has_attention(int level) const {
  return std::find(attention_levels.begin(), attention_levels.end(), level) !=
         attention_levels.end();
}

void UNetConfig::validate() const {
  if (base_width < 1 || channel_mult.empty() || res_blocks < 1 || in_channels < 1 ||
      out_channels < 1 || norm_groups < 1 || time_embed_mult < 1) {
    throw ConfigError("unet config: widths, levels, and block counts must be positive");
  }
  for (int m : channel_mult) {
    if (m < 1) throw ConfigError("unet config: channel multipliers must be positive");
    if ((base_width * m) % norm_groups != 0) {
      throw ConfigError("unet config: width " + std::to_string(base_width * m) +
                        " not divisible by norm_groups " + std::to_string(norm_groups));
    }
  }
  for (int l : attention_levels) {
    if (l < 0 || l >= levels()) {
      throw ConfigError("unet config: attention level " + std::to_string(l) + " outside [0, " +
                        std::to_string(levels()) + ")");
    }
  }
  if (base_width % 2 != 0) {
    throw ConfigError("unet config: base_width must be even for the step embedding");
  }
}

void UNetConfig::check_input(const Shape& shape) const {
  if (shape.size() != 4 || shape[1] != in_channels) {
    throw ConfigError("unet expects [B," + std::to_string(in_channels) + ",H,W], got " +
                      shape_str(shape));
  }
  const std::int64_t div = std::int64_t{1} << (levels() - 1);
  if (shape[2] % div != 0 || shape[3] % div != 0) {
    throw ConfigError("image size " + std::to_string(shape[2]) + "x" + std::to_string(shape[3]) +
                      " not divisible by 2^(levels-1) = " + std::to_string(div));
  }
}

void UNetConfig::to_metadata(Metadata& meta) const {
  meta["unet.base_width"] = std::to_string(base_width);
  meta["unet.channel_mult"] = join_ints(channel_mult);
  meta["unet.res_blocks"] = std::to_string(res_blocks);
  meta["unet.attention_levels"] = join_ints(attention_levels);
  meta["unet.in_channels"] = std::to_string(in_channels);
  meta["unet.out_channels"] = std::to_string(out_channels);
  meta["unet.time_conditioned"] = time_conditioned ? "true" : "false";
  meta["unet.norm_groups"] = std::to_string(norm_groups);
  meta["unet.time_embed_mult"] = std::to_string(time_embed_mult);
}

UNetConfig UNetConfig::from_metadata(const Metadata& meta) {
  auto get = [&](const std::string& k) {
    auto it = meta.find(k);
    if (it == meta.end()) {
      throw ConfigError("checkpoint metadata lacks " + k);
    }
    return it->second;
  };
  UNetConfig c;
  c.base_width = std::stoi(get("unet.base_width"));
  c.channel_mult = parse_ints(get("unet.channel_mult"));
  c.res_blocks = std::stoi(get("unet.res_blocks"));
  c.attention_levels = parse_ints(get("unet.attention_levels"));
  c.in_channels = std::stoi(get("unet.in_channels"));
  c.out_channels = std::stoi(get("unet.out_channels"));
  c.time_conditioned = get("unet.time_conditioned") == "true";
  c.norm_groups = std::stoi(get("unet.norm_groups"));
  c.time_embed_mult = std::stoi(get("unet.time_embed_mult"));
  c.validate();
  return c;
}

bool UNetConfig::same_backbone(const UNetConfig& o) const {
  return base_width == o.base_width && channel_mult == o.channel_mult &&
         res_blocks == o.res_blocks && attention_levels == o.attention_levels &&
         in_channels == o.in_channels && norm_groups == o.norm_groups &&
         time_embed_mult == o.time_embed_mult;
}

Tensor ResBlock::operator()(const Tensor& x, const Tensor& emb_act) const {
  Tensor h = conv1(ops::silu(norm1(x)));
  h = norm2(h);
  if (emb) {
    if (!emb_act.defined()) {
      throw ConfigError("conditioned residual block called without a step embedding");
    }
    h = ops::scale_shift(h, (*emb)(emb_act));
  }
  h = conv2(ops::silu(h));
  return ops::add(skip ? (*skip)(x) : x, h);
}

Tensor AttentionBlock::operator()(const Tensor& x) const {
  return ops::add(x, proj(ops::self_attention(qkv(norm(x)))));
}

UNet::UNet(const UNetConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const auto& cfg = config_;
  RngStream rng = RngStream(seed, 0).split(0x756e6574);  // "unet"
  const int c = cfg.base_width;

  if (cfg.time_conditioned) {
    time_fc1_ = nn::Linear::create(params_, "time.fc1", c, cfg.time_embed_dim(), rng, cfg.dtype);
    time_fc2_ = nn::Linear::create(params_, "time.fc2", cfg.time_embed_dim(), cfg.time_embed_dim(),
                                   rng, cfg.dtype);
  }

  std::vector<int> skip_widths;
  int ch = cfg.level_width(0);
  Stage input;
  input.conv = nn::Conv2d::create(params_, "encoder.in_conv", cfg.in_channels, ch, 3, 1, 1, rng,
                                  cfg.dtype);
  encoder_.push_back(std::move(input));
  skip_widths.push_back(ch);
  for (int level = 0; level < cfg.levels(); ++level) {
    const int width = cfg.level_width(level);
    for (int i = 0; i < cfg.res_blocks; ++i) {
      const std::string p = "encoder.l" + std::to_string(level);
      Stage s;
      s.res = make_res_block(params_, p + ".res" + std::to_string(i), ch, width, cfg, rng);
      ch = width;
      if (cfg.has_attention(level)) {
        s.attn = make_attention(params_, p + ".attn" + std::to_string(i), ch, cfg, rng);
      }
      encoder_.push_back(std::move(s));
      skip_widths.push_back(ch);
    }
    if (level + 1 < cfg.levels()) {
      Stage s;
      s.conv = nn::Conv2d::create(params_, "encoder.l" + std::to_string(level) + ".down", ch, ch,
                                  3, 2, 1, rng, cfg.dtype);
      encoder_.push_back(std::move(s));
      skip_widths.push_back(ch);
    }
  }

  mid_res0_ = make_res_block(params_, "middle.res0", ch, ch, cfg, rng);
  if (!cfg.attention_levels.empty()) {
    mid_attn_ = make_attention(params_, "middle.attn", ch, cfg, rng);
  }
  mid_res1_ = make_res_block(params_, "middle.res1", ch, ch, cfg, rng);

  for (int level = cfg.levels() - 1; level >= 0; --level) {
    const int width = cfg.level_width(level);
    const std::string p = "decoder.l" + std::to_string(level);
    for (int i = 0; i <= cfg.res_blocks; ++i) {
      const int skip_ch = skip_widths.back();
      skip_widths.pop_back();
      Stage s;
      s.res = make_res_block(params_, p + ".res" + std::to_string(i), ch + skip_ch, width, cfg, rng);
      ch = width;
      if (cfg.has_attention(level)) {
        s.attn = make_attention(params_, p + ".attn" + std::to_string(i), ch, cfg, rng);
      }
      if (level > 0 && i == cfg.res_blocks) {
        s.up = nn::Conv2d::create(params_, p + ".up", ch, ch, 3, 1, 1, rng, cfg.dtype);
      }
      decoder_.push_back(std::move(s));
    }
  }

  out_norm_ = nn::GroupNorm::create(params_, "out.norm", ch, cfg.norm_groups, cfg.dtype);
  out_conv_ = nn::Conv2d::create(params_, "out.conv", ch, cfg.out_channels, 3, 1, 1, rng,
                                 cfg.dtype, /*zero_init=*/true);
}

Tensor UNet::embed(const std::vector<int>& steps) const {
  if (!config_.time_conditioned) {
    throw ConfigError("plain U-Net has no step embedding");
  }
  const int c = config_.base_width;
  Tensor sinus = Tensor::zeros({static_cast<std::int64_t>(steps.size()), c}, config_.dtype);
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto e = diffusion::time_embedding(steps[i], c);
    for (int j = 0; j < c; ++j) {
      sinus.set(static_cast<std::int64_t>(i) * c + j, e[j]);
    }
  }
  return (*time_fc2_)(ops::silu((*time_fc1_)(sinus)));
}

Tensor UNet::features(const Tensor& x, const Tensor& emb) const {
  config_.check_input(x.shape());
  if (x.dtype() != config_.dtype) {
    throw ConfigError(std::string("unet built for ") + dtype_name(config_.dtype) + " got " +
                      dtype_name(x.dtype()));
  }
  Tensor emb_act;
  if (config_.time_conditioned) {
    if (!emb.defined() || emb.dim(0) != x.dim(0)) {
      throw ConfigError("conditioned U-Net needs one step embedding per batch item");
    }
    emb_act = ops::silu(emb);
  }
  std::vector<Tensor> skips;
  Tensor h = x;
  for (const auto& s : encoder_) {
    h = apply_stage(s, h, emb_act);
    skips.push_back(h);
  }
  h = mid_res0_(h, emb_act);
  if (mid_attn_) h = (*mid_attn_)(h);
  h = mid_res1_(h, emb_act);
  for (const auto& s : decoder_) {
    h = ops::concat_channels(h, skips.back());
    skips.pop_back();
    h = apply_stage(s, h, emb_act);
  }
  return h;
}

Tensor UNet::output(const Tensor& feats) const {
  if (!out_conv_) {
    throw ConfigError("output layer was removed from this U-Net");
  }
  return (*out_conv_)(ops::silu((*out_norm_)(feats)));
}

Tensor UNet::forward(const Tensor& x, const std::vector<int>& steps) const {
  if (!config_.time_conditioned) {
    throw ConfigError("plain U-Net takes no diffusion step");
  }
  if (static_cast<std::int64_t>(steps.size()) != x.dim(0)) {
    throw ConfigError("one diffusion step per batch item required");
  }
  return output(features(x, embed(steps)));
}

Tensor UNet::forward(const Tensor& x) const {
  if (config_.time_conditioned) {
    throw ConfigError("conditioned U-Net needs diffusion steps");
  }
  return output(features(x, Tensor()));
}

void UNet::drop_output_layer() {
  params_.erase_prefix("out.");
  out_norm_.reset();
  out_conv_.reset();
}

UNet build_noise_unet(UNetConfig config, std::uint64_t seed) {
  config.time_conditioned = true;
  return UNet(config, seed);
}

UNet build_plain_unet(UNetConfig config, std::uint64_t seed) {
  config.time_conditioned = false;
  return UNet(config, seed);
}

void load_parameters(ParameterSet& params, const TensorArchive& archive) {
  for (auto& p : params.items()) {
    const Tensor* src = archive.find(p.name);
    if (!src) {
      throw ConfigError("archive lacks parameter " + p.name);
    }
    if (src->shape() != p.tensor.shape()) {
      throw ConfigError("shape mismatch for " + p.name + ": archive " + shape_str(src->shape()) +
                        " vs model " + shape_str(p.tensor.shape()));
    }
    p.tensor.copy_from(*src);
  }
}

}  // namespace diffseg::unet
