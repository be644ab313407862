// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "diffseg/core/tensor.hpp"

// Differentiable kernels. Images are NCHW, row-major.
namespace diffseg::ops {

// x [B,Ci,H,W], weight [Co,Ci,k,k], bias [Co] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int pad);

// x [B,I], weight [O,I], bias [O] or undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Normalizes each (item, group) over its channels and pixels, then applies
// the per-channel affine transform.
Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups,
                  double eps = 1e-5);

// Batch statistics when training (running buffers updated in place, unbiased
// running variance), running statistics otherwise.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, bool training, double momentum = 0.1, double eps = 1e-5);

Tensor silu(const Tensor& x);
Tensor relu(const Tensor& x);

// x * (1 + scale) + shift where ss [B,2C] holds (scale, shift) per channel.
Tensor scale_shift(const Tensor& x, const Tensor& ss);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor upsample_nearest2x(const Tensor& x);
Tensor avg_pool2x2(const Tensor& x);

// Single-head self-attention over pixels. qkv [B,3C,H,W] -> [B,C,H,W].
Tensor self_attention(const Tensor& qkv);

// Mean squared error against a constant target.
Tensor mse_loss(const Tensor& pred, const Tensor& target);

// Repeats a [1,D] row to [B,D] (no gradient to the source).
Tensor repeat_rows(const Tensor& row, std::int64_t count);

}  // namespace diffseg::ops
