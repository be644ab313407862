// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "diffseg/training/losses.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "diffseg/core/errors.hpp"

namespace diffseg::training {

namespace {

struct Softmaxed {
  std::int64_t batch = 0, classes = 0, pixels = 0;
  std::vector<double> probs;  // [B, C, P] like the logits
  SegLossParts parts;
  std::vector<double> inter;  // per class
  std::vector<double> pred_sum;
  std::vector<double> gt_sum;
};

void check_inputs(const Tensor& logits, const std::vector<std::uint8_t>& labels,
                  const SegLossOptions& o) {
  if (logits.ndim() != 4) {
    throw ConfigError("seg_loss expects logits [B,C,H,W], got " + shape_str(logits.shape()));
  }
  const auto expected = logits.dim(0) * logits.dim(2) * logits.dim(3);
  if (static_cast<std::int64_t>(labels.size()) != expected) {
    throw ConfigError("seg_loss: " + std::to_string(labels.size()) + " labels for " +
                      std::to_string(expected) + " pixels");
  }
  const auto classes = logits.dim(1);
  for (auto l : labels) {
    if (l >= classes) {
      throw DataError("label value " + std::to_string(l) + " outside [0, " +
                      std::to_string(classes - 1) + "]");
    }
  }
  if (!(o.weight >= 0.0 && o.weight <= 1.0) || !(o.eps > 0.0)) {
    throw ConfigError("seg_loss: weight must lie in [0, 1] and eps must be positive");
  }
}

Softmaxed evaluate(const Tensor& logits, const std::vector<std::uint8_t>& labels,
                   const SegLossOptions& o) {
  Softmaxed s;
  s.batch = logits.dim(0);
  s.classes = logits.dim(1);
  s.pixels = logits.dim(2) * logits.dim(3);
  const auto C = s.classes;
  const auto P = s.pixels;
  s.probs.resize(static_cast<std::size_t>(s.batch * C * P));
  s.inter.assign(static_cast<std::size_t>(C), 0.0);
  s.pred_sum.assign(static_cast<std::size_t>(C), 0.0);
  s.gt_sum.assign(static_cast<std::size_t>(C), 0.0);
  const auto z = logits.to_doubles();
  double ce = 0.0;
  for (std::int64_t b = 0; b < s.batch; ++b) {
    const auto base = b * C * P;
    for (std::int64_t p = 0; p < P; ++p) {
      double mx = -INFINITY;
      for (std::int64_t c = 0; c < C; ++c) mx = std::max(mx, z[base + c * P + p]);
      double denom = 0.0;
      for (std::int64_t c = 0; c < C; ++c) denom += std::exp(z[base + c * P + p] - mx);
      const int g = labels[static_cast<std::size_t>(b * P + p)];
      for (std::int64_t c = 0; c < C; ++c) {
        const double logp = z[base + c * P + p] - mx - std::log(denom);
        const double prob = std::exp(logp);
        s.probs[base + c * P + p] = prob;
        s.pred_sum[c] += prob;
        if (c == g) {
          ce -= logp;
          s.inter[c] += prob;
          s.gt_sum[c] += 1.0;
        }
      }
    }
  }
  const double n = static_cast<double>(s.batch * P);
  s.parts.cross_entropy = ce / n;
  if (o.macro_dice) {
    double d = 0.0;
    for (std::int64_t c = 0; c < C; ++c) {
      d += 1.0 - (2.0 * s.inter[c] + o.eps) / (s.gt_sum[c] + s.pred_sum[c] + o.eps);
    }
    s.parts.dice = d / static_cast<double>(C);
  } else {
    double inter = 0.0, sums = 0.0;
    for (std::int64_t c = 0; c < C; ++c) {
      inter += s.inter[c];
      sums += s.gt_sum[c] + s.pred_sum[c];
    }
    s.parts.dice = 1.0 - (2.0 * inter + o.eps) / (sums + o.eps);
  }
  s.parts.total = o.weight * s.parts.cross_entropy + (1.0 - o.weight) * s.parts.dice;
  return s;
}

}  // namespace

Tensor seg_loss(const Tensor& logits, const std::vector<std::uint8_t>& labels,
                const SegLossOptions& options, SegLossParts* parts) {
  check_inputs(logits, labels, options);
  auto state = std::make_shared<Softmaxed>(evaluate(logits, labels, options));
  if (parts) {
    *parts = state->parts;
  }
  auto labels_copy = std::make_shared<std::vector<std::uint8_t>>(labels);
  Tensor out = detail::make_result({}, logits.dtype(), {logits}, [state, labels_copy,
                                                                   options](detail::Node& self) {
    const auto& s = *state;
    const auto C = s.classes;
    const auto P = s.pixels;
    const double n = static_cast<double>(s.batch * P);
    const double w = options.weight;
    // d(Dice)/d(prob) = coef_g[c] when c is the true class, coef_o[c] otherwise.
    std::vector<double> coef_g(static_cast<std::size_t>(C)), coef_o(static_cast<std::size_t>(C));
    if (options.macro_dice) {
      for (std::int64_t c = 0; c < C; ++c) {
        const double den = s.gt_sum[c] + s.pred_sum[c] + options.eps;
        const double num = 2.0 * s.inter[c] + options.eps;
        coef_o[c] = num / (den * den) / static_cast<double>(C);
        coef_g[c] = coef_o[c] - 2.0 / den / static_cast<double>(C);
      }
    } else {
      double inter = 0.0, sums = 0.0;
      for (std::int64_t c = 0; c < C; ++c) {
        inter += s.inter[c];
        sums += s.gt_sum[c] + s.pred_sum[c];
      }
      const double den = sums + options.eps;
      const double num = 2.0 * inter + options.eps;
      std::fill(coef_o.begin(), coef_o.end(), num / (den * den));
      std::fill(coef_g.begin(), coef_g.end(), num / (den * den) - 2.0 / den);
    }
    visit_dtype(self.dtype, [&]<class T>() {
      const double upstream = static_cast<double>(self.grads<T>()[0]);
      auto& gz = self.inputs[0]->grads<T>();
      std::vector<double> dp(static_cast<std::size_t>(C));
      for (std::int64_t b = 0; b < s.batch; ++b) {
        const auto base = b * C * P;
        for (std::int64_t p = 0; p < P; ++p) {
          const int g = (*labels_copy)[static_cast<std::size_t>(b * P + p)];
          double dot = 0.0;
          for (std::int64_t c = 0; c < C; ++c) {
            const double prob = s.probs[base + c * P + p];
            dp[c] = (1.0 - w) * (c == g ? coef_g[c] : coef_o[c]);
            dot += prob * dp[c];
          }
          for (std::int64_t c = 0; c < C; ++c) {
            const double prob = s.probs[base + c * P + p];
            const double d_ce = (prob - (c == g ? 1.0 : 0.0)) / n;
            const double d_dice = prob * (dp[c] - dot);
            gz[base + c * P + p] += static_cast<T>(upstream * (w * d_ce + d_dice));
          }
        }
      }
    });
  });
  out.set(0, state->parts.total);
  return out;
}

SegLossParts seg_loss_parts(const Tensor& logits, const std::vector<std::uint8_t>& labels,
                            const SegLossOptions& options) {
  check_inputs(logits, labels, options);
  return evaluate(logits, labels, options).parts;
}

std::vector<std::uint8_t> predict_labels(const Tensor& logits) {
  if (logits.ndim() != 4) {
    throw ConfigError("predict_labels expects [B,C,H,W]");
  }
  const auto B = logits.dim(0), C = logits.dim(1), P = logits.dim(2) * logits.dim(3);
  const auto z = logits.to_doubles();
  std::vector<std::uint8_t> out(static_cast<std::size_t>(B * P));
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t p = 0; p < P; ++p) {
      std::int64_t best = 0;
      for (std::int64_t c = 1; c < C; ++c) {
        if (z[(b * C + c) * P + p] > z[(b * C + best) * P + p]) best = c;
      }
      out[static_cast<std::size_t>(b * P + p)] = static_cast<std::uint8_t>(best);
    }
  }
  return out;
}

}  // namespace diffseg::training
