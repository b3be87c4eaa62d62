// Copyright 2026 The sroute Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Dense row-major tensor with define-by-run reverse-mode differentiation.
//
// A BasicTensor is a shared handle onto a node holding the value buffer and,
// once something flows into it, a gradient buffer of the same length. Ops
// record a backward closure onto the thread's active BasicTape when any input
// requires a gradient; with no active tape nothing is recorded, which is the
// inference mode.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sroute/errors.hpp"

namespace sroute {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Records the shape of every tensor allocated on this thread while alive.
// Used to check that a forward pass builds the same graph for every input.
class ShapeRecorder {
 public:
  ShapeRecorder() : previous_(active_) { active_ = this; }
  ~ShapeRecorder() { active_ = previous_; }
  ShapeRecorder(const ShapeRecorder&) = delete;
  ShapeRecorder& operator=(const ShapeRecorder&) = delete;

  const std::vector<Shape>& shapes() const { return shapes_; }

  static void note(const Shape& shape) {
    if (active_) active_->shapes_.push_back(shape);
  }

 private:
  std::vector<Shape> shapes_;
  ShapeRecorder* previous_;
  static inline thread_local ShapeRecorder* active_ = nullptr;
};

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T{});
    return grad;
  }
};

template <typename T>
class BasicTensor {
 public:
  using value_type = T;
  using Node = TensorNode<T>;

  BasicTensor() : BasicTensor(Shape{0}) {}

  explicit BasicTensor(Shape shape, T fill = T{})
      : node_(std::make_shared<Node>()) {
    node_->data.assign(shape_numel(shape), fill);
    ShapeRecorder::note(shape);
    node_->shape = std::move(shape);
  }

  BasicTensor(Shape shape, std::vector<T> data) : node_(std::make_shared<Node>()) {
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("tensor: shape " + shape_str(shape) + " holds " +
                           std::to_string(shape_numel(shape)) + " values, got " +
                           std::to_string(data.size()));
    }
    ShapeRecorder::note(shape);
    node_->shape = std::move(shape);
    node_->data = std::move(data);
  }

  static BasicTensor scalar(T value) { return BasicTensor(Shape{1}, std::vector<T>{value}); }

  static BasicTensor vector(std::vector<T> values) {
    const std::size_t n = values.size();
    return BasicTensor(Shape{n}, std::move(values));
  }

  static BasicTensor matrix(std::size_t rows, std::size_t cols, std::vector<T> values) {
    return BasicTensor(Shape{rows, cols}, std::move(values));
  }

  // Row-major literal; every row must have the same length.
  static BasicTensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t r = rows.size(), c = r ? rows.begin()->size() : 0;
    std::vector<T> values;
    values.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("tensor: ragged matrix literal");
      values.insert(values.end(), row.begin(), row.end());
    }
    return BasicTensor(Shape{r, c}, std::move(values));
  }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }
  std::size_t rows() const { return rank() == 1 ? 1 : node_->shape[0]; }
  std::size_t cols() const { return node_->shape.back(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  T* ptr() { return node_->data.data(); }
  const T* ptr() const { return node_->data.data(); }

  T& operator[](std::size_t i) { return node_->data[i]; }
  const T& operator[](std::size_t i) const { return node_->data[i]; }
  T& at(std::size_t r, std::size_t c) { return node_->data[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }

  T item() const {
    if (numel() != 1) {
      throw DimensionError("tensor: item() on shape " + shape_str(shape()));
    }
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  BasicTensor& set_requires_grad(bool on = true) {
    node_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  // Empty span until a backward pass has deposited something.
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  // Fresh node holding a copy of the values; no gradient, no tape history.
  BasicTensor clone() const {
    BasicTensor out(shape());
    out.node_->data = node_->data;
    return out;
  }

  bool same_node(const BasicTensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Ordered list of backward closures. Entries are appended in forward order,
// which is a topological order of the graph, so reverse traversal is valid.
template <typename T>
class BasicTape {
 public:
  BasicTape() = default;
  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  void record(std::function<void()> backward) { entries_.push_back(std::move(backward)); }
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and runs every closure in reverse append order.
  void backward(BasicTensor<T>& loss) {
    if (loss.numel() != 1) {
      throw DimensionError("backward: loss must be a single value, got " +
                           shape_str(loss.shape()));
    }
    loss.mutable_grad()[0] += T{1};
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    entries_.clear();
  }

  static BasicTape* active() { return active_; }

  // Makes `tape` the recording target for ops on this thread until destroyed.
  class Scope {
   public:
    explicit Scope(BasicTape& tape) : previous_(active_) { active_ = &tape; }
    ~Scope() { active_ = previous_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    BasicTape* previous_;
  };

  // Suspends recording on this thread (inference inside a training scope).
  class Pause {
   public:
    Pause() : previous_(active_) { active_ = nullptr; }
    ~Pause() { active_ = previous_; }
    Pause(const Pause&) = delete;
    Pause& operator=(const Pause&) = delete;

   private:
    BasicTape* previous_;
  };

 private:
  std::vector<std::function<void()>> entries_;
  static inline thread_local BasicTape* active_ = nullptr;
};

using Tensor = BasicTensor<float>;
using Tape = BasicTape<float>;

}  // namespace sroute
