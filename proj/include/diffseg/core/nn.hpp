// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "diffseg/core/rng.hpp"
#include "diffseg/core/tensor.hpp"

namespace diffseg {

struct Parameter {
  std::string name;  // unique dotted path, e.g. "encoder.l0.res0.conv1.weight"
  Tensor tensor;
  bool trainable = true;
};

// Ordered registry of named tensors. Used both for learnable parameters and
// for non-learnable buffers such as batch-norm running statistics.
class ParameterSet {
 public:
  Tensor add(std::string name, Tensor tensor, bool trainable = true);

  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;
  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;
  bool contains(std::string_view name) const { return find(name) != nullptr; }

  // Sets the trainable flag and the tensor's requires_grad together.
  void set_trainable(std::string_view name, bool trainable);
  void set_all_trainable(bool trainable);

  // Drops every entry whose name starts with prefix; returns the count.
  std::size_t erase_prefix(std::string_view prefix);

  std::vector<Parameter>& items() { return items_; }
  const std::vector<Parameter>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::int64_t element_count() const;
  std::vector<std::string> names() const;
  std::vector<std::string> trainable_names() const;

  void zero_grad();
  // Deep copy with fresh storage (trainable flags preserved).
  ParameterSet clone() const;

 private:
  void reindex();

  std::vector<Parameter> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

bool starts_with(std::string_view s, std::string_view prefix);

enum class Init { fan_in_normal, zeros, ones };

// Builds a tensor with the given initialization.
Tensor init_tensor(const Shape& shape, Init init, std::int64_t fan_in, RngStream& rng, DType dtype);

namespace nn {

struct Conv2d {
  Tensor weight;
  Tensor bias;
  int stride = 1;
  int pad = 0;

  static Conv2d create(ParameterSet& params, const std::string& prefix, int in_channels,
                       int out_channels, int kernel, int stride, int pad, RngStream& rng,
                       DType dtype, bool zero_init = false);
  Tensor operator()(const Tensor& x) const;
};

struct Linear {
  Tensor weight;
  Tensor bias;

  static Linear create(ParameterSet& params, const std::string& prefix, int in_features,
                       int out_features, RngStream& rng, DType dtype, bool zero_init = false);
  Tensor operator()(const Tensor& x) const;
};

struct GroupNorm {
  Tensor gamma;
  Tensor beta;
  int groups = 1;

  static GroupNorm create(ParameterSet& params, const std::string& prefix, int channels,
                          int groups, DType dtype);
  Tensor operator()(const Tensor& x) const;
};

struct BatchNorm2d {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;

  static BatchNorm2d create(ParameterSet& params, ParameterSet& buffers, const std::string& prefix,
                            int channels, DType dtype);
  Tensor operator()(const Tensor& x, bool training);
};

}  // namespace nn

}  // namespace diffseg
