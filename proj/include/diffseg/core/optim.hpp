// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "diffseg/core/nn.hpp"

namespace diffseg {

struct ParamGroup {
  std::string name;
  std::vector<std::string> members;
  double lr_scale = 1.0;
  double weight_decay = 0.0;
};

// Groups built from name prefixes: a parameter joins the first group whose
// prefix list matches; `fallback` collects the rest. Only trainable
// parameters are assigned.
std::vector<ParamGroup> group_by_prefix(const ParameterSet& params,
                                        const std::vector<std::pair<ParamGroup, std::vector<std::string>>>& prefixed,
                                        ParamGroup fallback);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with decoupled weight decay. Effective step for a parameter in group g:
//   w <- w - lr*g.lr_scale*(mhat/(sqrt(vhat)+eps) + g.weight_decay*w)
class Adam {
 public:
  Adam(std::vector<ParamGroup> groups, AdamConfig config = {});

  // Reads gradients from the parameter tensors. Frozen parameters are never
  // touched; a trainable parameter without a gradient is an error.
  void step(ParameterSet& params, double base_lr);

  std::int64_t steps() const { return steps_; }
  const std::vector<ParamGroup>& groups() const { return groups_; }
  const AdamConfig& config() const { return config_; }

 private:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };

  void validate(const ParameterSet& params) const;

  std::vector<ParamGroup> groups_;
  AdamConfig config_;
  std::unordered_map<std::string, std::size_t> group_of_;
  std::unordered_map<std::string, Moments> moments_;
  std::int64_t steps_ = 0;
};

// ema <- momentum*ema + (1-momentum)*live, for every tensor.
void ema_update(ParameterSet& ema, const ParameterSet& live, double momentum);

}  // namespace diffseg
