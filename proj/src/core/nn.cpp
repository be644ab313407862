// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "diffseg/core/nn.hpp"

#include <cmath>

#include "diffseg/core/errors.hpp"
#include "diffseg/core/ops.hpp"

namespace diffseg {

bool starts_with(std::string_view s, std::string_view prefix) {
  return s.substr(0, prefix.size()) == prefix;
}

Tensor ParameterSet::add(std::string name, Tensor tensor, bool trainable) {
  if (index_.contains(name)) {
    throw ConfigError("duplicate parameter name: " + name);
  }
  tensor.set_requires_grad(trainable);
  index_.emplace(name, items_.size());
  items_.push_back(Parameter{std::move(name), tensor, trainable});
  return tensor;
}

Parameter* ParameterSet::find(std::string_view name) {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : &items_[it->second];
}

const Parameter* ParameterSet::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : &items_[it->second];
}

Parameter& ParameterSet::at(std::string_view name) {
  if (auto* p = find(name)) {
    return *p;
  }
  throw ConfigError("unknown parameter: " + std::string(name));
}

const Parameter& ParameterSet::at(std::string_view name) const {
  if (const auto* p = find(name)) {
    return *p;
  }
  throw ConfigError("unknown parameter: " + std::string(name));
}

void ParameterSet::set_trainable(std::string_view name, bool trainable) {
  Parameter& p = at(name);
  p.trainable = trainable;
  p.tensor.set_requires_grad(trainable);
  if (!trainable) {
    p.tensor.zero_grad();
  }
}

void ParameterSet::set_all_trainable(bool trainable) {
  for (auto& p : items_) {
    p.trainable = trainable;
    p.tensor.set_requires_grad(trainable);
  }
}

std::size_t ParameterSet::erase_prefix(std::string_view prefix) {
  const auto before = items_.size();
  std::erase_if(items_, [&](const Parameter& p) { return starts_with(p.name, prefix); });
  reindex();
  return before - items_.size();
}

std::int64_t ParameterSet::element_count() const {
  std::int64_t n = 0;
  for (const auto& p : items_) {
    n += p.tensor.numel();
  }
  return n;
}

std::vector<std::string> ParameterSet::names() const {
  std::vector<std::string> out;
  out.reserve(items_.size());
  for (const auto& p : items_) {
    out.push_back(p.name);
  }
  return out;
}

std::vector<std::string> ParameterSet::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& p : items_) {
    if (p.trainable) {
      out.push_back(p.name);
    }
  }
  return out;
}

void ParameterSet::zero_grad() {
  for (auto& p : items_) {
    p.tensor.zero_grad();
  }
}

ParameterSet ParameterSet::clone() const {
  ParameterSet out;
  for (const auto& p : items_) {
    out.add(p.name, p.tensor.clone(), p.trainable);
  }
  return out;
}

void ParameterSet::reindex() {
  index_.clear();
  for (std::size_t i = 0; i < items_.size(); ++i) {
    index_.emplace(items_[i].name, i);
  }
}

Tensor init_tensor(const Shape& shape, Init init, std::int64_t fan_in, RngStream& rng,
                   DType dtype) {
  switch (init) {
    case Init::zeros:
      return Tensor::zeros(shape, dtype);
    case Init::ones:
      return Tensor::full(shape, 1.0, dtype);
    case Init::fan_in_normal: {
      Tensor t = Tensor::zeros(shape, dtype);
      rng.fill_normal(t, 0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
      return t;
    }
  }
  throw ConfigError("unknown init");
}

namespace nn {

Conv2d Conv2d::create(ParameterSet& params, const std::string& prefix, int in_channels,
                      int out_channels, int kernel, int stride, int pad, RngStream& rng,
                      DType dtype, bool zero_init) {
  Conv2d c;
  c.stride = stride;
  c.pad = pad;
  const std::int64_t fan_in = static_cast<std::int64_t>(in_channels) * kernel * kernel;
  c.weight = params.add(prefix + ".weight",
                        init_tensor({out_channels, in_channels, kernel, kernel},
                                    zero_init ? Init::zeros : Init::fan_in_normal, fan_in, rng,
                                    dtype));
  c.bias = params.add(prefix + ".bias", Tensor::zeros({out_channels}, dtype));
  return c;
}

Tensor Conv2d::operator()(const Tensor& x) const {
  return ops::conv2d(x, weight, bias, stride, pad);
}

Linear Linear::create(ParameterSet& params, const std::string& prefix, int in_features,
                      int out_features, RngStream& rng, DType dtype, bool zero_init) {
  Linear l;
  l.weight = params.add(prefix + ".weight",
                        init_tensor({out_features, in_features},
                                    zero_init ? Init::zeros : Init::fan_in_normal, in_features,
                                    rng, dtype));
  l.bias = params.add(prefix + ".bias", Tensor::zeros({out_features}, dtype));
  return l;
}

Tensor Linear::operator()(const Tensor& x) const { return ops::linear(x, weight, bias); }

GroupNorm GroupNorm::create(ParameterSet& params, const std::string& prefix, int channels,
                            int groups, DType dtype) {
  GroupNorm g;
  g.groups = groups;
  g.gamma = params.add(prefix + ".weight", Tensor::full({channels}, 1.0, dtype));
  g.beta = params.add(prefix + ".bias", Tensor::zeros({channels}, dtype));
  return g;
}

Tensor GroupNorm::operator()(const Tensor& x) const {
  return ops::group_norm(x, gamma, beta, groups);
}

BatchNorm2d BatchNorm2d::create(ParameterSet& params, ParameterSet& buffers,
                                const std::string& prefix, int channels, DType dtype) {
  BatchNorm2d b;
  b.gamma = params.add(prefix + ".weight", Tensor::full({channels}, 1.0, dtype));
  b.beta = params.add(prefix + ".bias", Tensor::zeros({channels}, dtype));
  b.running_mean = buffers.add(prefix + ".running_mean", Tensor::zeros({channels}, dtype), false);
  b.running_var = buffers.add(prefix + ".running_var", Tensor::full({channels}, 1.0, dtype), false);
  return b;
}

Tensor BatchNorm2d::operator()(const Tensor& x, bool training) {
  return ops::batch_norm(x, gamma, beta, running_mean, running_var, training);
}

}  // namespace nn

}  // namespace diffseg
