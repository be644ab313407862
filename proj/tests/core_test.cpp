// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include <doctest.h>

#include "diffseg/core/archive.hpp"
#include "diffseg/core/errors.hpp"
#include "diffseg/core/gradcheck.hpp"
#include "diffseg/core/nn.hpp"
#include "diffseg/core/ops.hpp"
#include "diffseg/core/optim.hpp"
#include "diffseg/core/rng.hpp"
#include "diffseg/core/sha256.hpp"
#include "helpers.hpp"

using namespace diffseg;
using diffseg::testing::random_tensor;
using diffseg::testing::TempDir;

namespace {

double naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad,
                  std::int64_t n, std::int64_t o, std::int64_t oy, std::int64_t ox) {
  const auto ci = x.dim(1), h = x.dim(2), wd = x.dim(3), k = w.dim(2);
  double s = b.defined() ? b.at(o) : 0.0;
  for (std::int64_t c = 0; c < ci; ++c) {
    for (std::int64_t ky = 0; ky < k; ++ky) {
      for (std::int64_t kx = 0; kx < k; ++kx) {
        const auto iy = oy * stride - pad + ky;
        const auto ix = ox * stride - pad + kx;
        if (iy < 0 || ix < 0 || iy >= h || ix >= wd) continue;
        s += x.at(((n * ci + c) * h + iy) * wd + ix) * w.at(((o * ci + c) * k + ky) * k + kx);
      }
    }
  }
  return s;
}

}  // namespace

TEST_CASE("conv2d matches a direct loop") {
  for (int stride : {1, 2}) {
    const Tensor x = random_tensor({2, 3, 7, 6}, DType::f64, 1);
    const Tensor w = random_tensor({4, 3, 3, 3}, DType::f64, 2);
    const Tensor b = random_tensor({4}, DType::f64, 3);
    const Tensor y = ops::conv2d(x, w, b, stride, 1);
    const auto oh = y.dim(2), ow = y.dim(3);
    CHECK(oh == (7 + 2 - 3) / stride + 1);
    double worst = 0.0;
    for (std::int64_t n = 0; n < 2; ++n)
      for (std::int64_t o = 0; o < 4; ++o)
        for (std::int64_t oy = 0; oy < oh; ++oy)
          for (std::int64_t ox = 0; ox < ow; ++ox) {
            const double ref = naive_conv(x, w, b, stride, 1, n, o, oy, ox);
            worst = std::max(worst, std::abs(ref - y.at(((n * 4 + o) * oh + oy) * ow + ox)));
          }
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("grad_check on w^2 at 3 gives 6") {
  ParameterSet params;
  Tensor w = params.add("w", Tensor::from_vector({1}, std::vector<double>{3.0}));
  RngStream rng(0, 0);
  auto loss = [&] { return ops::sum(ops::mul(w, w)); };
  Tensor l = loss();
  l.backward();
  CHECK(w.grad().at(0) == doctest::Approx(6.0).epsilon(1e-12));
  const auto r = grad_check(loss, params, 3, 1e-4, rng);
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("grad_check: one conv layer with mean-square output in f32") {
  ParameterSet params;
  RngStream init(3, 0);
  auto conv = nn::Conv2d::create(params, "conv", 1, 4, 3, 1, 1, init, DType::f32);
  const Tensor x = random_tensor({1, 1, 8, 8}, DType::f32, 4);
  RngStream rng(5, 0);
  const auto r = grad_check([&] { return ops::mean(ops::mul(conv(x), conv(x))); }, params, 20,
                            1e-2, rng);
  CHECK(r.max_rel_error < 1e-3);
}

TEST_CASE("every differentiable op passes grad_check in f64") {
  ParameterSet params;
  Tensor a = params.add("a", random_tensor({2, 4, 4, 4}, DType::f64, 10));
  Tensor b = params.add("b", random_tensor({2, 4, 4, 4}, DType::f64, 11));
  Tensor gamma = params.add("gamma", random_tensor({4}, DType::f64, 12));
  Tensor beta = params.add("beta", random_tensor({4}, DType::f64, 13));
  Tensor ss = params.add("ss", random_tensor({2, 8}, DType::f64, 14, 0.3));
  Tensor qkv = params.add("qkv", random_tensor({2, 12, 2, 2}, DType::f64, 15, 0.5));
  Tensor lw = params.add("lw", random_tensor({3, 4}, DType::f64, 16));
  Tensor lb = params.add("lb", random_tensor({3}, DType::f64, 17));
  Tensor rm = Tensor::zeros({4}, DType::f64);
  Tensor rv = Tensor::full({4}, 1.0, DType::f64);

  auto loss = [&] {
    Tensor h = ops::group_norm(ops::add(a, b), gamma, beta, 2);
    h = ops::silu(ops::scale_shift(h, ss));
    h = ops::batch_norm(h, gamma, beta, rm, rv, true);
    h = ops::relu(ops::sub(h, ops::scale(b, 0.5)));
    h = ops::upsample_nearest2x(ops::avg_pool2x2(h));
    h = ops::concat_channels(h, a);
    Tensor att = ops::self_attention(qkv);
    Tensor lin = ops::linear(att.reshape({2, 16}).reshape({8, 4}), lw, lb);
    return ops::add(ops::mean(ops::mul(h, h)), ops::mse_loss(lin, Tensor::zeros({8, 3}, DType::f64)));
  };
  RngStream rng(6, 0);
  const auto r = grad_check(loss, params, 60, 1e-6, rng);
  INFO("worst: " << r.worst_parameter);
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("gradients accumulate over shared inputs and NoGrad detaches") {
  Tensor x = Tensor::from_vector({2}, std::vector<double>{1.0, 2.0});
  x.set_requires_grad(true);
  Tensor y = ops::sum(ops::add(ops::mul(x, x), x));
  y.backward();
  CHECK(x.grad().at(0) == doctest::Approx(3.0));
  CHECK(x.grad().at(1) == doctest::Approx(5.0));
  {
    NoGradGuard guard;
    Tensor z = ops::mul(x, x);
    CHECK_FALSE(z.requires_grad());
  }
  CHECK(grad_mode_enabled());
}

TEST_CASE("Philox4x32-10 known-answer vectors") {
  using A4 = std::array<std::uint32_t, 4>;
  using A2 = std::array<std::uint32_t, 2>;
  CHECK(RngStream::philox(A4{0, 0, 0, 0}, A2{0, 0}) ==
        A4{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
  CHECK(RngStream::philox(A4{0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff},
                          A2{0xffffffff, 0xffffffff}) ==
        A4{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
  CHECK(RngStream::philox(A4{0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344},
                          A2{0xa4093822, 0x299f31d0}) ==
        A4{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("rng streams replay and split independently") {
  RngStream a(42, 3), b(42, 3), c(42, 4);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto va = a.next_u32();
    CHECK(va == b.next_u32());
    differs |= va != c.next_u32();
  }
  CHECK(differs);
  CHECK(RngStream(1, 2).split(9).next_u64() == RngStream(1, 2).split(9).next_u64());
  CHECK(RngStream(1, 2).split(9).next_u64() != RngStream(1, 2).split(10).next_u64());

  RngStream n(7, 0);
  double s = 0.0, s2 = 0.0;
  const int count = 200000;
  for (int i = 0; i < count; ++i) {
    const double v = n.normal();
    s += v;
    s2 += v * v;
  }
  CHECK(std::abs(s / count) < 0.01);
  CHECK(std::abs(s2 / count - 1.0) < 0.01);
  for (int i = 0; i < 1000; ++i) {
    const auto k = n.uniform_int(-2, 2);
    CHECK((k >= -2 && k <= 2));
  }
}

namespace {

struct ScalarSetup {
  ParameterSet params;
  Tensor w;
  explicit ScalarSetup(const std::string& name = "w", double value = 1.0) {
    w = params.add(name, Tensor::from_vector({1}, std::vector<double>{value}));
  }
  void grad(double g) {
    params.zero_grad();
    ops::sum(ops::scale(w, g)).backward();
  }
};

}  // namespace

TEST_CASE("Adam first step equals lr times the gradient sign") {
  ScalarSetup s;
  Adam adam({ParamGroup{"all", {"w"}, 1.0, 0.0}});
  s.grad(1.0);
  adam.step(s.params, 0.1);
  CHECK(s.w.at(0) == doctest::Approx(0.9).epsilon(1e-9));

  ScalarSetup neg;
  Adam adam2({ParamGroup{"all", {"w"}, 1.0, 0.0}});
  neg.grad(-0.37);
  adam2.step(neg.params, 0.1);
  CHECK(neg.w.at(0) == doctest::Approx(1.1).epsilon(1e-8));
}

TEST_CASE("Adam leaves frozen parameters untouched and scales group steps") {
  ParameterSet params;
  Tensor head = params.add("head.w", Tensor::from_vector({1}, std::vector<double>{1.0}));
  Tensor body = params.add("body.w", Tensor::from_vector({1}, std::vector<double>{1.0}));
  Tensor frozen = params.add("frozen.w", Tensor::from_vector({1}, std::vector<double>{1.0}));
  params.set_trainable("frozen.w", false);
  const auto groups = group_by_prefix(params, {{ParamGroup{"head", {}, 10.0, 0.0}, {"head."}}},
                           ParamGroup{"body", {}, 1.0, 0.0});
  REQUIRE(groups.size() == 2);
  CHECK(groups[0].members == std::vector<std::string>{"head.w"});
  CHECK(groups[1].members == std::vector<std::string>{"body.w"});
  Adam adam(groups);
  ops::sum(ops::add(ops::add(head, body), frozen)).backward();
  adam.step(params, 1e-3);
  const double head_step = 1.0 - head.at(0);
  const double body_step = 1.0 - body.at(0);
  CHECK(head_step == doctest::Approx(10.0 * body_step).epsilon(1e-9));
  CHECK(frozen.at(0) == 1.0);
}

TEST_CASE("Adam rejects trainable parameters outside every group") {
  ScalarSetup s;
  Adam adam({ParamGroup{"other", {}, 1.0, 0.0}});
  s.grad(1.0);
  CHECK_THROWS_AS(adam.step(s.params, 0.1), ConfigError);
}

TEST_CASE("group_by_prefix keeps empty groups") {
  ParameterSet params;
  params.add("body.w", Tensor::zeros({1}));
  const auto groups = group_by_prefix(params, {{ParamGroup{"head", {}, 10.0, 0.0}, {"head."}}},
                                      ParamGroup{"body", {}, 1.0, 0.0});
  REQUIRE(groups.size() == 2);
  CHECK(groups[0].members.empty());
}

TEST_CASE("ema_update formula and boundaries") {
  ScalarSetup ema("w", 0.0);
  ScalarSetup live("w", 1.0);
  ema_update(ema.params, live.params, 0.9999);
  CHECK(ema.w.at(0) == doctest::Approx(0.0001).epsilon(1e-9));

  ScalarSetup e2("w", 0.0);
  ema_update(e2.params, live.params, 0.5);
  CHECK(e2.w.at(0) == 0.5);
  ema_update(e2.params, live.params, 0.5);
  CHECK(e2.w.at(0) == 0.75);

  ScalarSetup e3("w", 0.3);
  ema_update(e3.params, live.params, 0.0);
  CHECK(e3.w.at(0) == 1.0);
  CHECK_THROWS_AS(ema_update(e3.params, live.params, 1.0), ConfigError);

  ScalarSetup other("v", 1.0);
  CHECK_THROWS_AS(ema_update(e3.params, other.params, 0.5), ConfigError);
}

TEST_CASE("archive round trip and corruption") {
  TempDir dir;
  ParameterSet params;
  params.add("a", random_tensor({2}, DType::f32, 1));
  params.add("b", random_tensor({3, 3}, DType::f32, 2));
  params.add("c", random_tensor({1, 4, 4, 4}, DType::f32, 3));
  const Metadata meta{{"iteration", "250000"}, {"ema", "true"}};
  save_weights(params, meta, dir / "w.nta");
  const TensorArchive back = load_weights(dir / "w.nta");
  CHECK(back.meta == meta);
  REQUIRE(back.tensors.size() == 3);
  for (const auto& t : back.tensors) {
    const Tensor& orig = params.at(t.name).tensor;
    CHECK(t.tensor.shape() == orig.shape());
    const auto x = orig.data<float>();
    const auto y = t.tensor.data<float>();
    CHECK(std::equal(x.begin(), x.end(), y.begin()));
  }

  std::string bytes = read_file(dir / "w.nta");
  std::string bad = bytes;
  bad[0] = 'X';
  try {
    decode_archive(bad);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(e.kind() == FormatError::Kind::bad_magic);
  }
  try {
    decode_archive(std::string_view(bytes).substr(0, bytes.size() - 3));
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(e.kind() == FormatError::Kind::truncated);
  }
  TensorArchive dup;
  dup.tensors.push_back({"x", Tensor::zeros({1})});
  dup.tensors.push_back({"x", Tensor::zeros({1})});
  CHECK_THROWS_AS(encode_archive(dup), FormatError);
  CHECK_THROWS_AS(load_archive(dir / "missing.nta"), FormatError);
}

TEST_CASE("sha256 test vectors") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}
