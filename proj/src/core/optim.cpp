// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "diffseg/core/optim.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "diffseg/core/errors.hpp"

namespace diffseg {

std::vector<ParamGroup> group_by_prefix(
    const ParameterSet& params,
    const std::vector<std::pair<ParamGroup, std::vector<std::string>>>& prefixed,
    ParamGroup fallback) {
  std::vector<ParamGroup> groups;
  for (const auto& [g, _] : prefixed) {
    groups.push_back(g);
    groups.back().members.clear();
  }
  fallback.members.clear();
  for (const auto& p : params.items()) {
    if (!p.trainable) {
      continue;
    }
    bool placed = false;
    for (std::size_t i = 0; i < prefixed.size() && !placed; ++i) {
      for (const auto& prefix : prefixed[i].second) {
        if (starts_with(p.name, prefix)) {
          groups[i].members.push_back(p.name);
          placed = true;
          break;
        }
      }
    }
    if (!placed) {
      fallback.members.push_back(p.name);
    }
  }
  groups.push_back(std::move(fallback));
  return groups;
}

Adam::Adam(std::vector<ParamGroup> groups, AdamConfig config)
    : groups_(std::move(groups)), config_(config) {
  for (std::size_t i = 0; i < groups_.size(); ++i) {
    const auto& g = groups_[i];
    if (!(g.lr_scale > 0.0) || g.weight_decay < 0.0) {
      throw ConfigError("parameter group '" + g.name + "' needs lr_scale > 0 and weight_decay >= 0");
    }
    for (const auto& name : g.members) {
      if (!group_of_.emplace(name, i).second) {
        throw ConfigError("parameter '" + name + "' belongs to more than one group");
      }
    }
  }
}

void Adam::validate(const ParameterSet& params) const {
  for (const auto& p : params.items()) {
    if (!p.trainable) {
      continue;
    }
    if (!group_of_.contains(p.name)) {
      throw ConfigError("trainable parameter '" + p.name + "' belongs to no group");
    }
    if (!p.tensor.has_grad()) {
      throw ConfigError("missing gradient for trainable parameter '" + p.name + "'");
    }
  }
}

void Adam::step(ParameterSet& params, double base_lr) {
  if (!(base_lr > 0.0)) {
    throw ConfigError("learning rate must be positive");
  }
  validate(params);
  ++steps_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (auto& p : params.items()) {
    if (!p.trainable) {
      continue;
    }
    const ParamGroup& g = groups_[group_of_.at(p.name)];
    const double lr = base_lr * g.lr_scale;
    auto& mom = moments_[p.name];
    const auto n = static_cast<std::size_t>(p.tensor.numel());
    if (mom.m.size() != n) {
      mom.m.assign(n, 0.0);
      mom.v.assign(n, 0.0);
    }
    visit_dtype(p.tensor.dtype(), [&]<class T>() {
      auto w = p.tensor.data<T>();
      auto grad = p.tensor.grad_data<T>();
      for (std::size_t i = 0; i < n; ++i) {
        const double gi = grad[i];
        mom.m[i] = config_.beta1 * mom.m[i] + (1.0 - config_.beta1) * gi;
        mom.v[i] = config_.beta2 * mom.v[i] + (1.0 - config_.beta2) * gi * gi;
        const double mhat = mom.m[i] / bc1;
        const double vhat = mom.v[i] / bc2;
        const double wi = w[i];
        w[i] = static_cast<T>(wi - lr * (mhat / (std::sqrt(vhat) + config_.eps) + g.weight_decay * wi));
      }
    });
  }
}

void ema_update(ParameterSet& ema, const ParameterSet& live, double momentum) {
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ConfigError("EMA momentum must lie in [0, 1)");
  }
  std::set<std::string> a;
  std::set<std::string> b;
  for (const auto& p : ema.items()) a.insert(p.name);
  for (const auto& p : live.items()) b.insert(p.name);
  if (a != b) {
    std::vector<std::string> diff;
    std::set_symmetric_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(diff));
    std::string msg = "EMA/live parameter names differ:";
    for (const auto& d : diff) msg += " " + d;
    throw ConfigError(msg);
  }
  for (auto& e : ema.items()) {
    const Parameter& l = live.at(e.name);
    if (l.tensor.shape() != e.tensor.shape()) {
      throw ConfigError("EMA shape mismatch for " + e.name);
    }
    visit_dtype(e.tensor.dtype(), [&]<class T>() {
      auto ev = e.tensor.data<T>();
      const Tensor lt = l.tensor.dtype() == e.tensor.dtype() ? l.tensor : l.tensor.to(e.tensor.dtype());
      auto lv = lt.data<T>();
      if (momentum == 0.0) {
        std::copy(lv.begin(), lv.end(), ev.begin());
        return;
      }
      for (std::size_t i = 0; i < ev.size(); ++i) {
        ev[i] = static_cast<T>(momentum * ev[i] + (1.0 - momentum) * lv[i]);
      }
    });
  }
}

}  // namespace diffseg
