// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>

#include <doctest.h>

#include "diffseg/core/errors.hpp"
#include "diffseg/core/gradcheck.hpp"
#include "diffseg/core/ops.hpp"
#include "diffseg/unet/segmentation_model.hpp"
#include "diffseg/unet/unet.hpp"
#include "helpers.hpp"

using namespace diffseg;
using namespace diffseg::unet;
using diffseg::testing::perturb;
using diffseg::testing::random_tensor;
using diffseg::testing::tiny_unet;

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double worst = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a.at(i) - b.at(i)));
  return worst;
}

TensorArchive checkpoint_of(const UNet& net) {
  Metadata meta;
  net.config().to_metadata(meta);
  return to_archive(net.params(), meta);
}

std::int64_t count_matching(const ParameterSet& params, const std::string& needle) {
  std::int64_t n = 0;
  for (const auto& p : params.items()) {
    if (p.name.find(needle) != std::string::npos) n += p.tensor.numel();
  }
  return n;
}

}  // namespace

TEST_CASE("noise U-Net shape contract and live conditioning") {
  UNet net = build_noise_unet(tiny_unet(), 1);
  perturb(net.params(), 2);
  const Tensor x = random_tensor({2, 1, 16, 16}, DType::f32, 3);
  const Tensor y = net.forward(x, {3, 7});
  CHECK(y.shape() == Shape{2, 1, 16, 16});
  CHECK(max_abs_diff(net.forward(x, {3, 3}), net.forward(x, {500, 500})) > 1e-6);

  for (const char* name : {"time.fc2.weight", "time.fc2.bias"}) {
    Tensor t = net.params().at(name).tensor;
    for (std::int64_t i = 0; i < t.numel(); ++i) t.set(i, 0.0);
  }
  CHECK(max_abs_diff(net.forward(x, {3, 3}), net.forward(x, {500, 900})) == 0.0);
}

TEST_CASE("fresh noise U-Net predicts zero") {
  UNet net = build_noise_unet(tiny_unet(), 1);
  const Tensor y = net.forward(random_tensor({1, 1, 8, 8}, DType::f32, 3), {5});
  CHECK(max_abs_diff(y, Tensor::zeros(y.shape())) == 0.0);
}

TEST_CASE("parameter prefixes and plain variant count") {
  UNet noise = build_noise_unet(tiny_unet(), 1);
  UNet plain = build_plain_unet(tiny_unet(), 1);
  for (const auto& p : noise.params().items()) {
    const bool known = p.name.starts_with("time.") || p.name.starts_with("encoder.") ||
                       p.name.starts_with("middle.") || p.name.starts_with("decoder.") ||
                       p.name.starts_with("out.");
    CHECK_MESSAGE(known, p.name);
  }
  const auto conditioning =
      count_matching(noise.params(), "time.") + count_matching(noise.params(), ".emb.");
  CHECK(plain.params().element_count() == noise.params().element_count() - conditioning);
  CHECK(plain.forward(random_tensor({2, 1, 16, 16}, DType::f32, 3)).shape() == Shape{2, 1, 16, 16});
  CHECK_THROWS_AS(plain.forward(random_tensor({1, 1, 8, 8}, DType::f32, 3), {1}), ConfigError);
}

TEST_CASE("config validation and metadata round trip") {
  UNetConfig c = tiny_unet();
  Metadata meta;
  c.to_metadata(meta);
  const UNetConfig back = UNetConfig::from_metadata(meta);
  CHECK(back.same_backbone(c));
  CHECK(back.channel_mult == c.channel_mult);

  UNetConfig bad = tiny_unet();
  bad.norm_groups = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = tiny_unet();
  bad.attention_levels = {2};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  UNet net = build_noise_unet(tiny_unet(), 1);
  CHECK_THROWS_AS(net.forward(random_tensor({1, 1, 5, 5}, DType::f32, 1), {1}), ConfigError);
  CHECK_THROWS_AS(net.forward(random_tensor({1, 2, 8, 8}, DType::f32, 1), {1}), ConfigError);
}

TEST_CASE("tiny noise U-Net passes grad_check in both precisions") {
  for (DType dtype : {DType::f32, DType::f64}) {
    UNet net = build_noise_unet(tiny_unet(dtype), 1);
    perturb(net.params(), 2);
    const Tensor x = random_tensor({2, 1, 16, 16}, dtype, 3);
    const Tensor target = random_tensor({2, 1, 16, 16}, dtype, 4);
    RngStream rng(5, 0);
    const auto r = grad_check([&] { return ops::mse_loss(net.forward(x, {3, 40}), target); },
                              net.params(), 20, dtype == DType::f32 ? 1e-2 : 1e-6, rng);
    INFO(dtype_name(dtype) << " worst " << r.worst_parameter << " " << r.max_rel_error);
    CHECK(r.max_rel_error < (dtype == DType::f32 ? 1e-2 : 1e-5));
  }
}

TEST_CASE("attach_head produces class logits with a fresh head") {
  UNet net = build_noise_unet(tiny_unet(), 1);
  SegmentationModel model = attach_head(std::move(net), HeadConfig{8, 8, 5}, 3);
  CHECK_FALSE(model.params().contains("out.conv.weight"));
  CHECK(model.params().contains("head.out.weight"));
  CHECK_THROWS_AS(model.forward(random_tensor({2, 1, 16, 16}, DType::f32, 1)), ConfigError);
  model.fix_diffusion_step(0, 100);
  CHECK(model.forward(random_tensor({2, 1, 16, 16}, DType::f32, 1)).shape() == Shape{2, 5, 16, 16});
  CHECK_THROWS_AS(attach_head(build_noise_unet(tiny_unet(), 1), HeadConfig{16, 8, 5}, 3),
                  ConfigError);
}

TEST_CASE("transfer copies every backbone tensor bit-exactly") {
  UNet pre = build_noise_unet(tiny_unet(), 1);
  perturb(pre.params(), 9);
  const TensorArchive ck = checkpoint_of(pre);
  SegmentationModel model = attach_head(build_noise_unet(tiny_unet(), 77), HeadConfig{8, 8, 5}, 3);
  const auto report = transfer_weights(ck, model);
  auto skipped = report.skipped;
  std::sort(skipped.begin(), skipped.end());
  CHECK(skipped == std::vector<std::string>{"out.conv.bias", "out.conv.weight",
                                                   "out.norm.bias", "out.norm.weight"});
  for (const auto& name : report.missing) CHECK(name.starts_with("head."));
  for (const auto& t : ck.tensors) {
    const Parameter* p = model.params().find(t.name);
    if (!p) continue;
    CHECK(max_abs_diff(p->tensor, t.tensor) == 0.0);
  }

  UNetConfig wide = tiny_unet();
  wide.base_width = 16;
  SegmentationModel other = attach_head(build_noise_unet(wide, 1), HeadConfig{16, 8, 5}, 3);
  const Tensor before = other.params().at("encoder.in_conv.weight").tensor.clone();
  CHECK_THROWS_AS(transfer_weights(ck, other), ConfigError);
  CHECK(max_abs_diff(before, other.params().at("encoder.in_conv.weight").tensor) == 0.0);
}

TEST_CASE("fix_diffusion_step changes logits unless the time branch is zero") {
  UNet pre = build_noise_unet(tiny_unet(), 1);
  perturb(pre.params(), 9);
  SegmentationModel model = attach_head(std::move(pre), HeadConfig{8, 8, 5}, 3);
  model.set_training(false);
  const Tensor x = random_tensor({1, 1, 16, 16}, DType::f32, 4);
  model.fix_diffusion_step(0, 1000);
  const Tensor a = model.forward(x);
  model.fix_diffusion_step(300, 1000);
  const Tensor b = model.forward(x);
  CHECK(max_abs_diff(a, b) > 1e-6);
  CHECK_THROWS_AS(model.fix_diffusion_step(1001, 1000), ConfigError);

  for (auto& p : model.params().items()) {
    if (p.name.starts_with("time.fc2.")) {
      for (std::int64_t i = 0; i < p.tensor.numel(); ++i) p.tensor.set(i, 0.0);
    }
  }
  model.fix_diffusion_step(0, 1000);
  const Tensor c = model.forward(x);
  model.fix_diffusion_step(300, 1000);
  CHECK(max_abs_diff(c, model.forward(x)) == 0.0);
}

TEST_CASE("freeze plans") {
  auto make = [] {
    UNet pre = build_noise_unet(tiny_unet(), 1);
    SegmentationModel m = attach_head(std::move(pre), HeadConfig{8, 8, 5}, 3);
    m.fix_diffusion_step(10, 100);
    return m;
  };
  SegmentationModel lin = make();
  apply_freeze(lin, Strategy::linear);
  for (const auto& p : lin.params().items()) CHECK(p.trainable == p.name.starts_with("head."));

  SegmentationModel dec = make();
  apply_freeze(dec, Strategy::decoder);
  for (const auto& p : dec.params().items()) {
    CHECK(p.trainable == (p.name.starts_with("head.") || p.name.starts_with("decoder.")));
  }
  SegmentationModel mid = make();
  apply_freeze(mid, Strategy::decoder, true);
  CHECK(mid.params().at("middle.res0.conv1.weight").trainable);
  CHECK_FALSE(mid.params().at("encoder.in_conv.weight").trainable);

  SegmentationModel cond = make();
  CHECK_THROWS_AS(apply_freeze(cond, Strategy::scratch), ConfigError);
  SegmentationModel plain = attach_head(build_plain_unet(tiny_unet(), 1), HeadConfig{8, 8, 5}, 3);
  CHECK_THROWS_AS(apply_freeze(plain, Strategy::linear), ConfigError);
  apply_freeze(plain, Strategy::scratch);
  for (const auto& p : plain.params().items()) CHECK(p.trainable);
}

TEST_CASE("gradient reaches the head under every strategy") {
  for (Strategy s : {Strategy::linear, Strategy::decoder, Strategy::scratch}) {
    SegmentationModel m =
        s == Strategy::scratch
            ? attach_head(build_plain_unet(tiny_unet(), 1), HeadConfig{8, 8, 5}, 3)
            : attach_head(build_noise_unet(tiny_unet(), 1), HeadConfig{8, 8, 5}, 3);
    if (s != Strategy::scratch) m.fix_diffusion_step(5, 100);
    apply_freeze(m, s);
    ops::mean(m.forward(random_tensor({2, 1, 8, 8}, DType::f32, 2))).backward();
    const Parameter& w = m.params().at("head.out.weight");
    REQUIRE(w.tensor.has_grad());
    double norm = 0.0;
    for (float g : w.tensor.grad_data<float>()) norm += std::abs(g);
    CHECK(norm > 0.0);
    if (s != Strategy::scratch) CHECK_FALSE(m.params().at("encoder.in_conv.weight").tensor.has_grad());
  }
}

TEST_CASE("segmentation archive round trip") {
  UNet pre = build_noise_unet(tiny_unet(), 1);
  perturb(pre.params(), 9);
  SegmentationModel model = attach_head(std::move(pre), HeadConfig{8, 8, 5}, 3);
  model.fix_diffusion_step(42, 100);
  const Tensor x = random_tensor({1, 1, 8, 8}, DType::f32, 4);
  model.forward(x);
  model.set_training(false);
  const Tensor y = model.forward(x);
  SegmentationModel back = load_segmentation_model(segmentation_archive(model, {}));
  CHECK(back.diffusion_step() == 42);
  CHECK(max_abs_diff(back.forward(x), y) == 0.0);
}
