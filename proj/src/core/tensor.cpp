// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "diffseg/core/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "diffseg/core/errors.hpp"

namespace diffseg {

namespace {
thread_local bool g_grad_enabled = true;
}

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    os << (i ? "," : "") << shape[i];
  }
  os << ']';
  return os.str();
}

const char* dtype_name(DType dtype) { return dtype == DType::f32 ? "f32" : "f64"; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_mode_enabled() { return g_grad_enabled; }

namespace detail {

template <class T>
Storage<T>& Node::grads() {
  if (!has_grad) {
    grad = Storage<T>(static_cast<std::size_t>(numel(shape)), T(0));
    has_grad = true;
  }
  return std::get<detail::Storage<T>>(grad);
}
template Storage<float>& Node::grads<float>();
template Storage<double>& Node::grads<double>();

namespace {

std::shared_ptr<Node> new_node(const Shape& shape, DType dtype) {
  for (auto d : shape) {
    if (d < 0) {
      throw ConfigError("negative tensor dimension in " + shape_str(shape));
    }
  }
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->dtype = dtype;
  const auto n = static_cast<std::size_t>(numel(shape));
  if (dtype == DType::f32) {
    node->value = detail::Storage<float>(n, 0.0f);
  } else {
    node->value = detail::Storage<double>(n, 0.0);
  }
  return node;
}

template <class It>
Tensor make_result_impl(const Shape& shape, DType dtype, It begin, It end,
                        std::function<void(Node&)> backward_fn) {
  auto node = new_node(shape, dtype);
  bool needs = false;
  if (g_grad_enabled) {
    for (auto it = begin; it != end; ++it) {
      if (it->defined() && it->requires_grad()) {
        needs = true;
        break;
      }
    }
  }
  if (needs) {
    node->requires_grad = true;
    for (auto it = begin; it != end; ++it) {
      node->inputs.push_back(it->node_ptr());
    }
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

}  // namespace

Tensor make_result(const Shape& shape, DType dtype, std::initializer_list<Tensor> inputs,
                   std::function<void(Node&)> backward_fn) {
  return make_result_impl(shape, dtype, inputs.begin(), inputs.end(), std::move(backward_fn));
}

Tensor make_result(const Shape& shape, DType dtype, const std::vector<Tensor>& inputs,
                   std::function<void(Node&)> backward_fn) {
  return make_result_impl(shape, dtype, inputs.begin(), inputs.end(), std::move(backward_fn));
}

}  // namespace detail

Tensor Tensor::zeros(const Shape& shape, DType dtype) {
  return Tensor(detail::new_node(shape, dtype));
}

Tensor Tensor::full(const Shape& shape, double value, DType dtype) {
  Tensor t = zeros(shape, dtype);
  visit_dtype(dtype, [&]<class T>() {
    auto d = t.data<T>();
    std::fill(d.begin(), d.end(), static_cast<T>(value));
  });
  return t;
}

Tensor Tensor::from_vector(const Shape& shape, std::vector<float> values) {
  if (static_cast<std::int64_t>(values.size()) != diffseg::numel(shape)) {
    throw ConfigError("value count does not match shape " + shape_str(shape));
  }
  auto node = detail::new_node(shape, DType::f32);
  node->value = detail::Storage<float>(values.begin(), values.end());
  return Tensor(std::move(node));
}

Tensor Tensor::from_vector(const Shape& shape, std::vector<double> values) {
  if (static_cast<std::int64_t>(values.size()) != diffseg::numel(shape)) {
    throw ConfigError("value count does not match shape " + shape_str(shape));
  }
  auto node = detail::new_node(shape, DType::f64);
  node->value = detail::Storage<double>(values.begin(), values.end());
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, DType dtype) { return full({}, value, dtype); }

const Shape& Tensor::shape() const { return node_->shape; }

std::int64_t Tensor::dim(std::size_t axis) const { return node_->shape.at(axis); }

std::int64_t Tensor::numel() const { return diffseg::numel(node_->shape); }

DType Tensor::dtype() const { return node_->dtype; }

template <class T>
std::span<T> Tensor::data() {
  auto& v = std::get<detail::Storage<T>>(node_->value);
  return {v.data(), v.size()};
}

template <class T>
std::span<const T> Tensor::data() const {
  const auto& v = std::get<detail::Storage<T>>(node_->value);
  return {v.data(), v.size()};
}

template std::span<float> Tensor::data<float>();
template std::span<double> Tensor::data<double>();
template std::span<const float> Tensor::data<float>() const;
template std::span<const double> Tensor::data<double>() const;

double Tensor::at(std::int64_t i) const {
  return visit_dtype(dtype(), [&]<class T>() { return static_cast<double>(data<T>()[i]); });
}

void Tensor::set(std::int64_t i, double value) {
  visit_dtype(dtype(), [&]<class T>() { data<T>()[i] = static_cast<T>(value); });
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ConfigError("item() on tensor of shape " + shape_str(shape()));
  }
  return at(0);
}

std::vector<double> Tensor::to_doubles() const {
  return visit_dtype(dtype(), [&]<class T>() {
    auto d = data<T>();
    return std::vector<double>(d.begin(), d.end());
  });
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!node_->inputs.empty()) {
    throw ConfigError("requires_grad can only be set on leaf tensors");
  }
  node_->requires_grad = flag;
}

bool Tensor::has_grad() const { return node_->has_grad; }

template <class T>
std::span<const T> Tensor::grad_data() const {
  if (!node_->has_grad) {
    return {};
  }
  const auto& g = std::get<detail::Storage<T>>(node_->grad);
  return {g.data(), g.size()};
}
template std::span<const float> Tensor::grad_data<float>() const;
template std::span<const double> Tensor::grad_data<double>() const;

Tensor Tensor::grad() const {
  Tensor out = zeros(shape(), dtype());
  if (node_->has_grad) {
    out.node_->value = node_->grad;
  }
  return out;
}

void Tensor::zero_grad() {
  node_->has_grad = false;
  node_->grad = detail::Buffer{};
}

Tensor Tensor::detach() const {
  auto node = std::make_shared<detail::Node>();
  node->shape = node_->shape;
  node->dtype = node_->dtype;
  node->value = node_->value;
  return Tensor(std::move(node));
}

Tensor Tensor::clone() const { return detach(); }

Tensor Tensor::to(DType target) const {
  if (target == dtype()) {
    return clone();
  }
  Tensor out = zeros(shape(), target);
  visit_dtype(dtype(), [&]<class S>() {
    visit_dtype(target, [&]<class D>() {
      auto src = data<S>();
      auto dst = out.data<D>();
      for (std::size_t i = 0; i < src.size(); ++i) {
        dst[i] = static_cast<D>(src[i]);
      }
    });
  });
  return out;
}

Tensor Tensor::reshape(const Shape& new_shape) const {
  if (diffseg::numel(new_shape) != numel()) {
    throw ConfigError("cannot reshape " + shape_str(shape()) + " to " + shape_str(new_shape));
  }
  Tensor out = detail::make_result(new_shape, dtype(), {*this}, [](detail::Node& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) {
      return;
    }
    visit_dtype(self.dtype, [&]<class T>() {
      auto& gi = in.grads<T>();
      const auto& go = self.grads<T>();
      for (std::size_t i = 0; i < gi.size(); ++i) {
        gi[i] += go[i];
      }
    });
  });
  out.node_->value = node_->value;
  return out;
}

void Tensor::copy_from(const Tensor& other) {
  if (other.shape() != shape()) {
    throw ConfigError("copy_from shape mismatch: " + shape_str(other.shape()) + " vs " +
                      shape_str(shape()));
  }
  if (other.dtype() == dtype()) {
    node_->value = other.node_->value;
    return;
  }
  Tensor converted = other.to(dtype());
  node_->value = std::move(converted.node_->value);
}

bool Tensor::all_finite() const {
  return visit_dtype(dtype(), [&]<class T>() {
    for (T v : data<T>()) {
      if (!std::isfinite(v)) {
        return false;
      }
    }
    return true;
  });
}

void Tensor::backward() {
  if (numel() != 1) {
    throw ConfigError("backward() requires a scalar, got " + shape_str(shape()));
  }
  if (!node_->requires_grad) {
    throw ConfigError("backward() on a tensor that does not require grad");
  }
  // Iterative post-order DFS gives a topological order. The order holds
  // strong references so releasing edges below cannot free pending nodes.
  std::vector<std::shared_ptr<detail::Node>> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<std::shared_ptr<detail::Node>, std::size_t>> stack;
  stack.emplace_back(node_, 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      std::shared_ptr<detail::Node> child = n->inputs[next++];
      if (child->requires_grad && visited.insert(child.get()).second) {
        stack.emplace_back(std::move(child), 0);
      }
    } else {
      order.push_back(std::move(n));
      stack.pop_back();
    }
  }
  visit_dtype(dtype(), [&]<class T>() { node_->grads<T>()[0] = T(1); });
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = it->get();
    if (n->backward_fn) {
      if (n->has_grad) {
        n->backward_fn(*n);
      }
      n->backward_fn = nullptr;
      n->inputs.clear();
      if (n != node_.get()) {
        n->has_grad = false;
        n->grad = detail::Buffer{};
      }
    }
  }
}

}  // namespace diffseg
