// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "diffseg/core/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "diffseg/core/errors.hpp"

namespace diffseg::ops {

using detail::Node;

namespace {

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapR = Eigen::Map<MatR<T>>;
template <class T>
using CMapR = Eigen::Map<const MatR<T>>;

void require(bool cond, const std::string& msg) {
  if (!cond) {
    throw ConfigError(msg);
  }
}

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  require(a.dtype() == b.dtype(), std::string(op) + ": dtype mismatch");
}

template <class T>
detail::Storage<T>& scratch(std::size_t n) {
  thread_local detail::Storage<T> buf;
  if (buf.size() < n) {
    buf.resize(n);
  }
  return buf;
}

struct ConvGeom {
  int channels, height, width, kernel, stride, pad, out_h, out_w;
};

template <class T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  const int hw_out = g.out_h * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    for (int kh = 0; kh < g.kernel; ++kh) {
      for (int kw = 0; kw < g.kernel; ++kw) {
        T* dst = col + static_cast<std::ptrdiff_t>((c * g.kernel + kh) * g.kernel + kw) * hw_out;
        for (int oh = 0; oh < g.out_h; ++oh) {
          const int ih = oh * g.stride - g.pad + kh;
          T* row = dst + oh * g.out_w;
          if (ih < 0 || ih >= g.height) {
            std::fill(row, row + g.out_w, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::ptrdiff_t>(c) * g.height + ih) * g.width;
          if (g.stride == 1) {
            const int off = kw - g.pad;
            const int lo = std::max(0, -off);
            const int hi = std::min(g.out_w, g.width - off);
            std::fill(row, row + lo, T(0));
            if (hi > lo) {
              std::memcpy(row + lo, src + lo + off, sizeof(T) * (hi - lo));
            }
            std::fill(row + std::max(hi, lo), row + g.out_w, T(0));
          } else {
            for (int ow = 0; ow < g.out_w; ++ow) {
              const int iw = ow * g.stride - g.pad + kw;
              row[ow] = (iw >= 0 && iw < g.width) ? src[iw] : T(0);
            }
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const T* col, const ConvGeom& g, T* x) {
  const int hw_out = g.out_h * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    for (int kh = 0; kh < g.kernel; ++kh) {
      for (int kw = 0; kw < g.kernel; ++kw) {
        const T* src = col + static_cast<std::ptrdiff_t>((c * g.kernel + kh) * g.kernel + kw) * hw_out;
        for (int oh = 0; oh < g.out_h; ++oh) {
          const int ih = oh * g.stride - g.pad + kh;
          if (ih < 0 || ih >= g.height) {
            continue;
          }
          T* dst = x + (static_cast<std::ptrdiff_t>(c) * g.height + ih) * g.width;
          const T* row = src + oh * g.out_w;
          for (int ow = 0; ow < g.out_w; ++ow) {
            const int iw = ow * g.stride - g.pad + kw;
            if (iw >= 0 && iw < g.width) {
              dst[iw] += row[ow];
            }
          }
        }
      }
    }
  }
}

template <class T>
void accumulate(detail::Storage<T>& dst, const detail::Storage<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i] += src[i];
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int pad) {
  require(x.ndim() == 4 && weight.ndim() == 4, "conv2d: expected 4-d input and weight");
  require_same_dtype(x, weight, "conv2d");
  const int batch = static_cast<int>(x.dim(0));
  const int cin = static_cast<int>(x.dim(1));
  const int cout = static_cast<int>(weight.dim(0));
  const int k = static_cast<int>(weight.dim(2));
  require(weight.dim(1) == cin && weight.dim(3) == k,
          "conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " +
              shape_str(x.shape()));
  require(!bias.defined() || (bias.ndim() == 1 && bias.dim(0) == cout), "conv2d: bad bias shape");
  ConvGeom g{cin, static_cast<int>(x.dim(2)), static_cast<int>(x.dim(3)), k, stride, pad, 0, 0};
  g.out_h = (g.height + 2 * pad - k) / stride + 1;
  g.out_w = (g.width + 2 * pad - k) / stride + 1;
  require(g.out_h > 0 && g.out_w > 0, "conv2d: empty output");
  const bool pointwise = (k == 1 && stride == 1 && pad == 0);
  const int rows = cin * k * k;
  const int hw_in = g.height * g.width;
  const int hw_out = g.out_h * g.out_w;
  const bool has_bias = bias.defined();

  std::vector<Tensor> inputs{x, weight};
  if (has_bias) {
    inputs.push_back(bias);
  }
  Tensor out = detail::make_result(
      {batch, cout, g.out_h, g.out_w}, x.dtype(), inputs,
      [g, batch, cin, cout, rows, hw_in, hw_out, pointwise, has_bias](Node& self) {
        visit_dtype(self.dtype, [&]<class T>() {
          Node& xn = *self.inputs[0];
          Node& wn = *self.inputs[1];
          const auto& gout = self.grads<T>();
          CMapR<T> w(wn.values<T>().data(), cout, rows);
          const T* xv = xn.values<T>().data();
          if (has_bias && self.inputs[2]->requires_grad) {
            auto& gb = self.inputs[2]->grads<T>();
            for (int b = 0; b < batch; ++b) {
              for (int o = 0; o < cout; ++o) {
                const T* p = gout.data() + (static_cast<std::ptrdiff_t>(b) * cout + o) * hw_out;
                T s = 0;
                for (int i = 0; i < hw_out; ++i) {
                  s += p[i];
                }
                gb[o] += s;
              }
            }
          }
          if (wn.requires_grad) {
            MapR<T> gw(wn.grads<T>().data(), cout, rows);
            auto& col = scratch<T>(static_cast<std::size_t>(rows) * hw_out);
            for (int b = 0; b < batch; ++b) {
              CMapR<T> go(gout.data() + static_cast<std::ptrdiff_t>(b) * cout * hw_out, cout, hw_out);
              const T* xb = xv + static_cast<std::ptrdiff_t>(b) * cin * hw_in;
              if (pointwise) {
                gw.noalias() += go * CMapR<T>(xb, rows, hw_out).transpose();
              } else {
                im2col(xb, g, col.data());
                gw.noalias() += go * CMapR<T>(col.data(), rows, hw_out).transpose();
              }
            }
          }
          if (xn.requires_grad) {
            auto& gx = xn.grads<T>();
            auto& col = scratch<T>(static_cast<std::size_t>(rows) * hw_out);
            for (int b = 0; b < batch; ++b) {
              CMapR<T> go(gout.data() + static_cast<std::ptrdiff_t>(b) * cout * hw_out, cout, hw_out);
              T* gxb = gx.data() + static_cast<std::ptrdiff_t>(b) * cin * hw_in;
              if (pointwise) {
                MapR<T>(gxb, rows, hw_out).noalias() += w.transpose() * go;
              } else {
                MapR<T> c(col.data(), rows, hw_out);
                c.noalias() = w.transpose() * go;
                col2im(col.data(), g, gxb);
              }
            }
          }
        });
      });

  visit_dtype(x.dtype(), [&]<class T>() {
    const T* xv = x.data<T>().data();
    T* ov = out.data<T>().data();
    CMapR<T> w(weight.data<T>().data(), cout, rows);
    auto& col = scratch<T>(static_cast<std::size_t>(rows) * hw_out);
    for (int b = 0; b < batch; ++b) {
      const T* xb = xv + static_cast<std::ptrdiff_t>(b) * cin * hw_in;
      MapR<T> ob(ov + static_cast<std::ptrdiff_t>(b) * cout * hw_out, cout, hw_out);
      if (pointwise) {
        ob.noalias() = w * CMapR<T>(xb, rows, hw_out);
      } else {
        im2col(xb, g, col.data());
        ob.noalias() = w * CMapR<T>(col.data(), rows, hw_out);
      }
      if (has_bias) {
        const T* bv = bias.data<T>().data();
        for (int o = 0; o < cout; ++o) {
          ob.row(o).array() += bv[o];
        }
      }
    }
  });
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require(x.ndim() == 2 && weight.ndim() == 2 && x.dim(1) == weight.dim(1),
          "linear: input " + shape_str(x.shape()) + " incompatible with weight " +
              shape_str(weight.shape()));
  require_same_dtype(x, weight, "linear");
  const auto batch = x.dim(0);
  const auto in = x.dim(1);
  const auto outf = weight.dim(0);
  const bool has_bias = bias.defined();
  std::vector<Tensor> inputs{x, weight};
  if (has_bias) {
    inputs.push_back(bias);
  }
  Tensor out = detail::make_result({batch, outf}, x.dtype(), inputs, [=](Node& self) {
    visit_dtype(self.dtype, [&]<class T>() {
      Node& xn = *self.inputs[0];
      Node& wn = *self.inputs[1];
      CMapR<T> go(self.grads<T>().data(), batch, outf);
      if (xn.requires_grad) {
        MapR<T>(xn.grads<T>().data(), batch, in).noalias() +=
            go * CMapR<T>(wn.values<T>().data(), outf, in);
      }
      if (wn.requires_grad) {
        MapR<T>(wn.grads<T>().data(), outf, in).noalias() +=
            go.transpose() * CMapR<T>(xn.values<T>().data(), batch, in);
      }
      if (has_bias && self.inputs[2]->requires_grad) {
        auto& gb = self.inputs[2]->grads<T>();
        for (std::int64_t o = 0; o < outf; ++o) {
          gb[o] += go.col(o).sum();
        }
      }
    });
  });
  visit_dtype(x.dtype(), [&]<class T>() {
    MapR<T> o(out.data<T>().data(), batch, outf);
    CMapR<T> xs(x.data<T>().data(), batch, in);
    CMapR<T> w(weight.data<T>().data(), outf, in);
    // Row by row from an aligned copy, so a sample's output does not depend
    // on the batch it arrives in.
    Eigen::Matrix<T, Eigen::Dynamic, 1> row(in), res(outf);
    for (std::int64_t r = 0; r < batch; ++r) {
      row = xs.row(r).transpose();
      res.noalias() = w * row;
      o.row(r) = res.transpose();
    }
    if (has_bias) {
      const T* bv = bias.data<T>().data();
      for (std::int64_t r = 0; r < batch; ++r) {
        for (std::int64_t c = 0; c < outf; ++c) {
          o(r, c) += bv[c];
        }
      }
    }
  });
  return out;
}

Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups,
                  double eps) {
  require(x.ndim() == 4, "group_norm: expected NCHW input");
  const auto batch = x.dim(0);
  const auto channels = x.dim(1);
  const auto hw = x.dim(2) * x.dim(3);
  require(groups > 0 && channels % groups == 0,
          "group_norm: " + std::to_string(channels) + " channels not divisible into " +
              std::to_string(groups) + " groups");
  require(gamma.numel() == channels && beta.numel() == channels, "group_norm: bad affine shape");
  const auto per_group = channels / groups;
  const auto n = per_group * hw;
  auto stats = std::make_shared<std::vector<double>>(static_cast<std::size_t>(batch * groups * 2));

  Tensor out = detail::make_result(x.shape(), x.dtype(), {x, gamma, beta}, [=](Node& self) {
    visit_dtype(self.dtype, [&]<class T>() {
      Node& xn = *self.inputs[0];
      Node& gn = *self.inputs[1];
      Node& bn = *self.inputs[2];
      const auto& go = self.grads<T>();
      const auto& xv = xn.values<T>();
      const auto& gv = gn.values<T>();
      T* gx = xn.requires_grad ? xn.grads<T>().data() : nullptr;
      T* gg = gn.requires_grad ? gn.grads<T>().data() : nullptr;
      T* gb = bn.requires_grad ? bn.grads<T>().data() : nullptr;
      for (std::int64_t b = 0; b < batch; ++b) {
        for (std::int64_t g = 0; g < groups; ++g) {
          const double mu = (*stats)[(b * groups + g) * 2];
          const double rstd = (*stats)[(b * groups + g) * 2 + 1];
          double sum_dxhat = 0.0;
          double sum_dxhat_xhat = 0.0;
          for (std::int64_t c = g * per_group; c < (g + 1) * per_group; ++c) {
            const std::int64_t base = (b * channels + c) * hw;
            double sdy = 0.0;
            double sdy_xhat = 0.0;
            for (std::int64_t i = 0; i < hw; ++i) {
              const double xhat = (xv[base + i] - mu) * rstd;
              const double dy = go[base + i];
              sdy += dy;
              sdy_xhat += dy * xhat;
            }
            if (gg) gg[c] += static_cast<T>(sdy_xhat);
            if (gb) gb[c] += static_cast<T>(sdy);
            sum_dxhat += sdy * gv[c];
            sum_dxhat_xhat += sdy_xhat * gv[c];
          }
          if (!gx) {
            continue;
          }
          const double m1 = sum_dxhat / static_cast<double>(n);
          const double m2 = sum_dxhat_xhat / static_cast<double>(n);
          for (std::int64_t c = g * per_group; c < (g + 1) * per_group; ++c) {
            const std::int64_t base = (b * channels + c) * hw;
            const double gc = gv[c];
            for (std::int64_t i = 0; i < hw; ++i) {
              const double xhat = (xv[base + i] - mu) * rstd;
              gx[base + i] += static_cast<T>(rstd * (go[base + i] * gc - m1 - xhat * m2));
            }
          }
        }
      }
    });
  });

  visit_dtype(x.dtype(), [&]<class T>() {
    const T* xv = x.data<T>().data();
    const T* gv = gamma.data<T>().data();
    const T* bv = beta.data<T>().data();
    T* ov = out.data<T>().data();
    for (std::int64_t b = 0; b < batch; ++b) {
      for (std::int64_t g = 0; g < groups; ++g) {
        const T* p = xv + (b * channels + g * per_group) * hw;
        double s = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
          s += p[i];
        }
        const double mu = s / static_cast<double>(n);
        double v = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
          const double d = p[i] - mu;
          v += d * d;
        }
        v /= static_cast<double>(n);
        const double rstd = 1.0 / std::sqrt(v + eps);
        (*stats)[(b * groups + g) * 2] = mu;
        (*stats)[(b * groups + g) * 2 + 1] = rstd;
        for (std::int64_t c = g * per_group; c < (g + 1) * per_group; ++c) {
          const std::int64_t base = (b * channels + c) * hw;
          const double a = rstd * gv[c];
          const double sh = bv[c] - mu * a;
          for (std::int64_t i = 0; i < hw; ++i) {
            ov[base + i] = static_cast<T>(xv[base + i] * a + sh);
          }
        }
      }
    }
  });
  return out;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, bool training, double momentum, double eps) {
  require(x.ndim() == 4, "batch_norm: expected NCHW input");
  const auto batch = x.dim(0);
  const auto channels = x.dim(1);
  const auto hw = x.dim(2) * x.dim(3);
  const auto n = batch * hw;
  require(gamma.numel() == channels && beta.numel() == channels &&
              running_mean.numel() == channels && running_var.numel() == channels,
          "batch_norm: parameter shapes do not match channel count");
  require(!training || n > 1, "batch_norm: training mode needs more than one value per channel");
  auto stats = std::make_shared<std::vector<double>>(static_cast<std::size_t>(channels * 2));

  visit_dtype(x.dtype(), [&]<class T>() {
    const T* xv = x.data<T>().data();
    auto rm = running_mean.data<T>();
    auto rv = running_var.data<T>();
    for (std::int64_t c = 0; c < channels; ++c) {
      double mu;
      double var;
      if (training) {
        double s = 0.0;
        for (std::int64_t b = 0; b < batch; ++b) {
          const T* p = xv + (b * channels + c) * hw;
          for (std::int64_t i = 0; i < hw; ++i) s += p[i];
        }
        mu = s / static_cast<double>(n);
        double v = 0.0;
        for (std::int64_t b = 0; b < batch; ++b) {
          const T* p = xv + (b * channels + c) * hw;
          for (std::int64_t i = 0; i < hw; ++i) {
            const double d = p[i] - mu;
            v += d * d;
          }
        }
        var = v / static_cast<double>(n);
        const double unbiased = v / static_cast<double>(n - 1);
        rm[c] = static_cast<T>((1.0 - momentum) * rm[c] + momentum * mu);
        rv[c] = static_cast<T>((1.0 - momentum) * rv[c] + momentum * unbiased);
      } else {
        mu = rm[c];
        var = rv[c];
      }
      (*stats)[c * 2] = mu;
      (*stats)[c * 2 + 1] = 1.0 / std::sqrt(var + eps);
    }
  });

  Tensor out = detail::make_result(x.shape(), x.dtype(), {x, gamma, beta}, [=](Node& self) {
    visit_dtype(self.dtype, [&]<class T>() {
      Node& xn = *self.inputs[0];
      Node& gn = *self.inputs[1];
      Node& bn = *self.inputs[2];
      const auto& go = self.grads<T>();
      const auto& xv = xn.values<T>();
      const auto& gv = gn.values<T>();
      for (std::int64_t c = 0; c < channels; ++c) {
        const double mu = (*stats)[c * 2];
        const double rstd = (*stats)[c * 2 + 1];
        double sdy = 0.0;
        double sdy_xhat = 0.0;
        for (std::int64_t b = 0; b < batch; ++b) {
          const std::int64_t base = (b * channels + c) * hw;
          for (std::int64_t i = 0; i < hw; ++i) {
            const double dy = go[base + i];
            sdy += dy;
            sdy_xhat += dy * (xv[base + i] - mu) * rstd;
          }
        }
        if (gn.requires_grad) gn.grads<T>()[c] += static_cast<T>(sdy_xhat);
        if (bn.requires_grad) bn.grads<T>()[c] += static_cast<T>(sdy);
        if (!xn.requires_grad) {
          continue;
        }
        auto& gx = xn.grads<T>();
        const double gc = gv[c];
        const double m1 = training ? sdy / static_cast<double>(n) : 0.0;
        const double m2 = training ? sdy_xhat / static_cast<double>(n) : 0.0;
        for (std::int64_t b = 0; b < batch; ++b) {
          const std::int64_t base = (b * channels + c) * hw;
          for (std::int64_t i = 0; i < hw; ++i) {
            const double xhat = (xv[base + i] - mu) * rstd;
            gx[base + i] += static_cast<T>(gc * rstd * (go[base + i] - m1 - xhat * m2));
          }
        }
      }
    });
  });

  visit_dtype(x.dtype(), [&]<class T>() {
    const T* xv = x.data<T>().data();
    const T* gv = gamma.data<T>().data();
    const T* bv = beta.data<T>().data();
    T* ov = out.data<T>().data();
    for (std::int64_t b = 0; b < batch; ++b) {
      for (std::int64_t c = 0; c < channels; ++c) {
        const double a = (*stats)[c * 2 + 1] * gv[c];
        const double sh = bv[c] - (*stats)[c * 2] * a;
        const std::int64_t base = (b * channels + c) * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
          ov[base + i] = static_cast<T>(xv[base + i] * a + sh);
        }
      }
    }
  });
  return out;
}

Tensor silu(const Tensor& x) {
  Tensor out = detail::make_result(x.shape(), x.dtype(), {x}, [](Node& self) {
    visit_dtype(self.dtype, [&]<class T>() {
      Node& xn = *self.inputs[0];
      const auto& xv = xn.values<T>();
      const auto& go = self.grads<T>();
      auto& gx = xn.grads<T>();
      for (std::size_t i = 0; i < xv.size(); ++i) {
        const T s = T(1) / (T(1) + std::exp(-xv[i]));
        gx[i] += go[i] * s * (T(1) + xv[i] * (T(1) - s));
      }
    });
  });
  visit_dtype(x.dtype(), [&]<class T>() {
    auto xv = x.data<T>();
    auto ov = out.data<T>();
    for (std::size_t i = 0; i < xv.size(); ++i) {
      ov[i] = xv[i] / (T(1) + std::exp(-xv[i]));
    }
  });
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = detail::make_result(x.shape(), x.dtype(), {x}, [](Node& self) {
    visit_dtype(self.dtype, [&]<class T>() {
      Node& xn = *self.inputs[0];
      const auto& xv = xn.values<T>();
      const auto& go = self.grads<T>();
      auto& gx = xn.grads<T>();
      for (std::size_t i = 0; i < xv.size(); ++i) {
        if (xv[i] > T(0)) gx[i] += go[i];
      }
    });
  });
  visit_dtype(x.dtype(), [&]<class T>() {
    auto xv = x.data<T>();
    auto ov = out.data<T>();
    for (std::size_t i = 0; i < xv.size(); ++i) {
      ov[i] = xv[i] > T(0) ? xv[i] : T(0);
    }
  });
  return out;
}

Tensor scale_shift(const Tensor& x, const Tensor& ss) {
  require(x.ndim() == 4 && ss.ndim() == 2 && ss.dim(0) == x.dim(0) && ss.dim(1) == 2 * x.dim(1),
          "scale_shift: conditioning " + shape_str(ss.shape()) + " does not match input " +
              shape_str(x.shape()));
  require_same_dtype(x, ss, "scale_shift");
  const auto batch = x.dim(0);
  const auto channels = x.dim(1);
  const auto hw = x.dim(2) * x.dim(3);
  Tensor out = detail::make_result(x.shape(), x.dtype(), {x, ss}, [=](Node& self) {
    visit_dtype(self.dtype, [&]<class T>() {
      Node& xn = *self.inputs[0];
      Node& sn = *self.inputs[1];
      const auto& go = self.grads<T>();
      const auto& xv = xn.values<T>();
      const auto& sv = sn.values<T>();
      for (std::int64_t b = 0; b < batch; ++b) {
        for (std::int64_t c = 0; c < channels; ++c) {
          const std::int64_t base = (b * channels + c) * hw;
          const T scale = T(1) + sv[b * 2 * channels + c];
          if (xn.requires_grad) {
            auto& gx = xn.grads<T>();
            for (std::int64_t i = 0; i < hw; ++i) gx[base + i] += go[base + i] * scale;
          }
          if (sn.requires_grad) {
            T sdx = 0;
            T sd = 0;
            for (std::int64_t i = 0; i < hw; ++i) {
              sdx += go[base + i] * xv[base + i];
              sd += go[base + i];
            }
            auto& gs = sn.grads<T>();
            gs[b * 2 * channels + c] += sdx;
            gs[b * 2 * channels + channels + c] += sd;
          }
        }
      }
    });
  });
  visit_dtype(x.dtype(), [&]<class T>() {
    const T* xv = x.data<T>().data();
    const T* sv = ss.data<T>().data();
    T* ov = out.data<T>().data();
    for (std::int64_t b = 0; b < batch; ++b) {
      for (std::int64_t c = 0; c < channels; ++c) {
        const T scale = T(1) + sv[b * 2 * channels + c];
        const T shift = sv[b * 2 * channels + channels + c];
        const std::int64_t base = (b * channels + c) * hw;
        for (std::int64_t i = 0; i < hw; ++i) ov[base + i] = xv[base + i] * scale + shift;
      }
    }
  });
  return out;
}

namespace {

enum class Binary { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, Binary op, const char* name) {
  require(a.shape() == b.shape(), std::string(name) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
  require_same_dtype(a, b, name);
  Tensor out = detail::make_result(a.shape(), a.dtype(), {a, b}, [op](Node& self) {
    visit_dtype(self.dtype, [&]<class T>() {
      Node& an = *self.inputs[0];
      Node& bn = *self.inputs[1];
      const auto& go = self.grads<T>();
      if (an.requires_grad) {
        auto& ga = an.grads<T>();
        if (op == Binary::mul) {
          const auto& bv = bn.values<T>();
          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * bv[i];
        } else {
          accumulate(ga, go);
        }
      }
      if (bn.requires_grad) {
        auto& gb = bn.grads<T>();
        if (op == Binary::mul) {
          const auto& av = an.values<T>();
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * av[i];
        } else if (op == Binary::sub) {
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= go[i];
        } else {
          accumulate(gb, go);
        }
      }
    });
  });
  visit_dtype(a.dtype(), [&]<class T>() {
    auto av = a.data<T>();
    auto bv = b.data<T>();
    auto ov = out.data<T>();
    for (std::size_t i = 0; i < av.size(); ++i) {
      ov[i] = op == Binary::add ? av[i] + bv[i] : op == Binary::sub ? av[i] - bv[i] : av[i] * bv[i];
    }
  });
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::mul, "mul"); }

Tensor scale(const Tensor& a, double factor) {
  Tensor out = detail::make_result(a.shape(), a.dtype(), {a}, [factor](Node& self) {
    visit_dtype(self.dtype, [&]<class T>() {
      auto& ga = self.inputs[0]->grads<T>();
      const auto& go = self.grads<T>();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * static_cast<T>(factor);
    });
  });
  visit_dtype(a.dtype(), [&]<class T>() {
    auto av = a.data<T>();
    auto ov = out.data<T>();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * static_cast<T>(factor);
  });
  return out;
}

Tensor sum(const Tensor& a) {
  Tensor out = detail::make_result({}, a.dtype(), {a}, [](Node& self) {
    visit_dtype(self.dtype, [&]<class T>() {
      auto& ga = self.inputs[0]->grads<T>();
      const T g = self.grads<T>()[0];
      for (auto& v : ga) v += g;
    });
  });
  visit_dtype(a.dtype(), [&]<class T>() {
    double s = 0.0;
    for (T v : a.data<T>()) s += v;
    out.data<T>()[0] = static_cast<T>(s);
  });
  return out;
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require(a.ndim() == 4 && b.ndim() == 4 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) &&
              a.dim(3) == b.dim(3),
          "concat_channels: incompatible " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  require_same_dtype(a, b, "concat_channels");
  const auto batch = a.dim(0);
  const auto ca = a.dim(1);
  const auto cb = b.dim(1);
  const auto hw = a.dim(2) * a.dim(3);
  Tensor out = detail::make_result({batch, ca + cb, a.dim(2), a.dim(3)}, a.dtype(), {a, b},
                                   [=](Node& self) {
    visit_dtype(self.dtype, [&]<class T>() {
      const auto& go = self.grads<T>();
      for (int which = 0; which < 2; ++which) {
        Node& in = *self.inputs[which];
        if (!in.requires_grad) continue;
        auto& gi = in.grads<T>();
        const auto cin = which == 0 ? ca : cb;
        const auto off = which == 0 ? 0 : ca;
        for (std::int64_t n = 0; n < batch; ++n) {
          const T* src = go.data() + (n * (ca + cb) + off) * hw;
          T* dst = gi.data() + n * cin * hw;
          for (std::int64_t i = 0; i < cin * hw; ++i) dst[i] += src[i];
        }
      }
    });
  });
  visit_dtype(a.dtype(), [&]<class T>() {
    T* ov = out.data<T>().data();
    for (std::int64_t n = 0; n < batch; ++n) {
      std::memcpy(ov + n * (ca + cb) * hw, a.data<T>().data() + n * ca * hw, sizeof(T) * ca * hw);
      std::memcpy(ov + (n * (ca + cb) + ca) * hw, b.data<T>().data() + n * cb * hw,
                  sizeof(T) * cb * hw);
    }
  });
  return out;
}

Tensor upsample_nearest2x(const Tensor& x) {
  require(x.ndim() == 4, "upsample_nearest2x: expected NCHW input");
  const auto planes = x.dim(0) * x.dim(1);
  const auto h = x.dim(2);
  const auto w = x.dim(3);
  Tensor out = detail::make_result({x.dim(0), x.dim(1), 2 * h, 2 * w}, x.dtype(), {x},
                                   [=](Node& self) {
    visit_dtype(self.dtype, [&]<class T>() {
      const auto& go = self.grads<T>();
      auto& gx = self.inputs[0]->grads<T>();
      for (std::int64_t p = 0; p < planes; ++p) {
        for (std::int64_t i = 0; i < 2 * h; ++i) {
          for (std::int64_t j = 0; j < 2 * w; ++j) {
            gx[(p * h + i / 2) * w + j / 2] += go[(p * 2 * h + i) * 2 * w + j];
          }
        }
      }
    });
  });
  visit_dtype(x.dtype(), [&]<class T>() {
    const T* xv = x.data<T>().data();
    T* ov = out.data<T>().data();
    for (std::int64_t p = 0; p < planes; ++p) {
      for (std::int64_t i = 0; i < 2 * h; ++i) {
        for (std::int64_t j = 0; j < 2 * w; ++j) {
          ov[(p * 2 * h + i) * 2 * w + j] = xv[(p * h + i / 2) * w + j / 2];
        }
      }
    }
  });
  return out;
}

Tensor avg_pool2x2(const Tensor& x) {
  require(x.ndim() == 4 && x.dim(2) % 2 == 0 && x.dim(3) % 2 == 0,
          "avg_pool2x2: spatial dims must be even, got " + shape_str(x.shape()));
  const auto planes = x.dim(0) * x.dim(1);
  const auto h = x.dim(2) / 2;
  const auto w = x.dim(3) / 2;
  Tensor out = detail::make_result({x.dim(0), x.dim(1), h, w}, x.dtype(), {x}, [=](Node& self) {
    visit_dtype(self.dtype, [&]<class T>() {
      const auto& go = self.grads<T>();
      auto& gx = self.inputs[0]->grads<T>();
      for (std::int64_t p = 0; p < planes; ++p) {
        for (std::int64_t i = 0; i < 2 * h; ++i) {
          for (std::int64_t j = 0; j < 2 * w; ++j) {
            gx[(p * 2 * h + i) * 2 * w + j] += go[(p * h + i / 2) * w + j / 2] * T(0.25);
          }
        }
      }
    });
  });
  visit_dtype(x.dtype(), [&]<class T>() {
    const T* xv = x.data<T>().data();
    T* ov = out.data<T>().data();
    for (std::int64_t p = 0; p < planes; ++p) {
      for (std::int64_t i = 0; i < h; ++i) {
        for (std::int64_t j = 0; j < w; ++j) {
          const T* r0 = xv + (p * 2 * h + 2 * i) * 2 * w + 2 * j;
          const T* r1 = r0 + 2 * w;
          ov[(p * h + i) * w + j] = (r0[0] + r0[1] + r1[0] + r1[1]) * T(0.25);
        }
      }
    }
  });
  return out;
}

Tensor self_attention(const Tensor& qkv) {
  require(qkv.ndim() == 4 && qkv.dim(1) % 3 == 0, "self_attention: expected [B,3C,H,W]");
  const auto batch = qkv.dim(0);
  const auto c = qkv.dim(1) / 3;
  const auto n = qkv.dim(2) * qkv.dim(3);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(c));
  // Row-stochastic attention matrices, kept for the backward pass.
  auto probs = std::make_shared<detail::Buffer>();

  Tensor out = detail::make_result({batch, c, qkv.dim(2), qkv.dim(3)}, qkv.dtype(), {qkv},
                                   [=](Node& self) {
    visit_dtype(self.dtype, [&]<class T>() {
      Node& in = *self.inputs[0];
      const auto& xv = in.values<T>();
      auto& gx = in.grads<T>();
      const auto& go = self.grads<T>();
      const auto& pv = std::get<detail::Storage<T>>(*probs);
      MatR<T> dp(n, n);
      for (std::int64_t b = 0; b < batch; ++b) {
        const T* base = xv.data() + b * 3 * c * n;
        CMapR<T> q(base, c, n);
        CMapR<T> k(base + c * n, c, n);
        CMapR<T> v(base + 2 * c * n, c, n);
        CMapR<T> p(pv.data() + b * n * n, n, n);
        CMapR<T> dout(go.data() + b * c * n, c, n);
        T* gbase = gx.data() + b * 3 * c * n;
        MapR<T> dq(gbase, c, n);
        MapR<T> dk(gbase + c * n, c, n);
        MapR<T> dv(gbase + 2 * c * n, c, n);
        dv.noalias() += dout * p;
        dp.noalias() = dout.transpose() * v;
        for (std::int64_t i = 0; i < n; ++i) {
          const T dot = dp.row(i).dot(p.row(i));
          dp.row(i) = (p.row(i).array() * (dp.row(i).array() - dot)).matrix();
        }
        dq.noalias() += static_cast<T>(inv_sqrt) * (k * dp.transpose());
        dk.noalias() += static_cast<T>(inv_sqrt) * (q * dp);
      }
    });
  });

  visit_dtype(qkv.dtype(), [&]<class T>() {
    const T* xv = qkv.data<T>().data();
    T* ov = out.data<T>().data();
    detail::Storage<T> pv(static_cast<std::size_t>(batch * n * n));
    for (std::int64_t b = 0; b < batch; ++b) {
      const T* base = xv + b * 3 * c * n;
      CMapR<T> q(base, c, n);
      CMapR<T> k(base + c * n, c, n);
      CMapR<T> v(base + 2 * c * n, c, n);
      MapR<T> p(pv.data() + b * n * n, n, n);
      p.noalias() = static_cast<T>(inv_sqrt) * (q.transpose() * k);
      for (std::int64_t i = 0; i < n; ++i) {
        const T mx = p.row(i).maxCoeff();
        p.row(i) = (p.row(i).array() - mx).exp().matrix();
        p.row(i) /= p.row(i).sum();
      }
      MapR<T>(ov + b * c * n, c, n).noalias() = v * p.transpose();
    }
    if (out.requires_grad()) {
      *probs = std::move(pv);
    }
  });
  return out;
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  require(pred.shape() == target.shape(), "mse_loss: shape mismatch " + shape_str(pred.shape()) +
                                              " vs " + shape_str(target.shape()));
  require_same_dtype(pred, target, "mse_loss");
  const double inv_n = 1.0 / static_cast<double>(pred.numel());
  Tensor out = detail::make_result({}, pred.dtype(), {pred}, [target, inv_n](Node& self) {
    visit_dtype(self.dtype, [&]<class T>() {
      Node& pn = *self.inputs[0];
      const auto& pv = pn.values<T>();
      auto tv = target.data<T>();
      auto& gp = pn.grads<T>();
      const T g = self.grads<T>()[0] * static_cast<T>(2.0 * inv_n);
      for (std::size_t i = 0; i < pv.size(); ++i) gp[i] += g * (pv[i] - tv[i]);
    });
  });
  visit_dtype(pred.dtype(), [&]<class T>() {
    auto pv = pred.data<T>();
    auto tv = target.data<T>();
    double s = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const double d = static_cast<double>(pv[i]) - static_cast<double>(tv[i]);
      s += d * d;
    }
    out.data<T>()[0] = static_cast<T>(s * inv_n);
  });
  return out;
}

Tensor repeat_rows(const Tensor& row, std::int64_t count) {
  require(row.ndim() == 2 && row.dim(0) == 1, "repeat_rows: expected a [1,D] tensor");
  const auto d = row.dim(1);
  Tensor out = Tensor::zeros({count, d}, row.dtype());
  visit_dtype(row.dtype(), [&]<class T>() {
    auto src = row.data<T>();
    auto dst = out.data<T>();
    for (std::int64_t r = 0; r < count; ++r) {
      std::copy(src.begin(), src.end(), dst.begin() + r * d);
    }
  });
  return out;
}

}  // namespace diffseg::ops
