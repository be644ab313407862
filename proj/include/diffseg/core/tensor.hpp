// Copyright (c) 2026, diffseg contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstdlib>
#include <functional>
#include <new>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace diffseg {

enum class DType : std::uint8_t { f32, f64 };

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);
const char* dtype_name(DType dtype);

// Calls f.template operator()<T>() with T = float or double.
template <class F>
decltype(auto) visit_dtype(DType dtype, F&& f) {
  if (dtype == DType::f32) {
    return f.template operator()<float>();
  }
  return f.template operator()<double>();
}

namespace detail {

// Kernel results depend on buffer alignment (vectorized reductions peel a
// different prefix), so every buffer starts on a 64-byte boundary.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t kAlign = 64;

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    const std::size_t bytes = (n * sizeof(T) + kAlign - 1) / kAlign * kAlign;
    void* p = std::aligned_alloc(kAlign, bytes == 0 ? kAlign : bytes);
    if (!p) throw std::bad_alloc();
    return static_cast<T*>(p);
  }
  void deallocate(T* p, std::size_t) noexcept { std::free(p); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <class T>
using Storage = std::vector<T, AlignedAllocator<T>>;

using Buffer = std::variant<Storage<float>, Storage<double>>;

struct Node {
  Shape shape;
  DType dtype = DType::f32;
  Buffer value;
  Buffer grad;
  bool has_grad = false;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  template <class T>
  Storage<T>& values() {
    return std::get<Storage<T>>(value);
  }
  template <class T>
  Storage<T>& grads();  // allocates zeros on first use
};

}  // namespace detail

// Dense row-major array with optional reverse-mode gradient tracking. Copies
// share storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, DType dtype = DType::f32);
  static Tensor full(const Shape& shape, double value, DType dtype = DType::f32);
  static Tensor from_vector(const Shape& shape, std::vector<float> values);
  static Tensor from_vector(const Shape& shape, std::vector<double> values);
  static Tensor scalar(double value, DType dtype = DType::f32);

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::int64_t dim(std::size_t axis) const;
  std::size_t ndim() const { return shape().size(); }
  std::int64_t numel() const;
  DType dtype() const;

  template <class T>
  std::span<T> data();
  template <class T>
  std::span<const T> data() const;

  // Element access with conversion, for tests and small bookkeeping.
  double at(std::int64_t flat_index) const;
  void set(std::int64_t flat_index, double value);
  double item() const;
  std::vector<double> to_doubles() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  template <class T>
  std::span<const T> grad_data() const;
  Tensor grad() const;  // copy of the accumulated gradient
  void zero_grad();

  Tensor detach() const;  // shares storage, no graph
  Tensor clone() const;   // deep copy, no graph
  Tensor to(DType dtype) const;
  Tensor reshape(const Shape& shape) const;  // differentiable view-copy

  // Copies values from other (shape must match; dtype converted).
  void copy_from(const Tensor& other);
  bool all_finite() const;

  // Runs reverse-mode accumulation from this scalar. The graph is released.
  void backward();

  detail::Node& node() const { return *node_; }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Disables graph construction in the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

namespace detail {

// Builds an op result. If any input requires grad (and grad mode is on) the
// result is attached to the graph with the given backward function.
Tensor make_result(const Shape& shape, DType dtype,
                   std::initializer_list<Tensor> inputs,
                   std::function<void(Node&)> backward_fn);
Tensor make_result(const Shape& shape, DType dtype,
                   const std::vector<Tensor>& inputs,
                   std::function<void(Node&)> backward_fn);

}  // namespace detail

}  // namespace diffseg
