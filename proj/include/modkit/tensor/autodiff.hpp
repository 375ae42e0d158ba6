// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation over a flat tape.
//
// A Tape owns every value produced during one forward pass. Nodes are
// appended in evaluation order, so the tape is topologically sorted by
// construction; backward() walks it once from the loss down to index 0 and
// is single-use. Var is a cheap (tape, index) handle.
//
// Parameters live outside the tape (in layers). Tape::param() records a leaf
// that points back at the Parameter; backward() accumulates into
// Parameter::grad.

#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "modkit/tensor/tensor.hpp"

namespace modkit {

template <class T>
struct Parameter {
  Tensor<T> value;
  Tensor<T> grad;
  /// Frozen parameters are recorded as constants and never receive gradients.
  bool frozen = false;

  Parameter() = default;
  explicit Parameter(Tensor<T> v) : value(std::move(v)), grad(value.shape()) {}

  void zero_grad() {
    if (grad.shape() != value.shape()) {
      grad = Tensor<T>(value.shape());
    } else {
      grad.fill(T(0));
    }
  }
};

template <class T>
class Tape;

template <class T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape<T>& tape() const { return *tape_; }
  std::uint32_t id() const noexcept { return id_; }

  const Tensor<T>& value() const;
  /// By value: tape storage may move when new nodes are recorded.
  Shape shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  bool requires_grad() const;
  /// Gradient accumulated by backward(); zero-filled if none reached this node.
  Tensor<T> grad() const;

 private:
  Tape<T>* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

template <class T>
class Tape {
 public:
  /// Receives the upstream gradient of the node being differentiated.
  using BackwardFn = std::function<void(Tape&, const Tensor<T>&)>;

  /// With recording off every node is a constant and no closures are kept.
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var<T> constant(Tensor<T> value);
  /// Leaf that is not backed by a Parameter (gradient checks, raw inputs).
  Var<T> leaf(Tensor<T> value, bool requires_grad = true);
  Var<T> param(Parameter<T>& p);

  /// Appends an op result. The closure is kept only if some input requires
  /// a gradient and the tape is recording.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward);
  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn backward);

  const Tensor<T>& value(std::uint32_t id) const { return nodes_[id].value; }
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }

  /// Adds `g` into the gradient of node `id` (no-op if it does not require one).
  void accumulate(std::uint32_t id, const Tensor<T>& g);
  /// Mutable gradient buffer for node `id`, zero-initialized on first use.
  Tensor<T>& grad_buffer(std::uint32_t id);
  Tensor<T> grad(std::uint32_t id) const;

  /// Reverse sweep from a scalar loss. Consumes the tape.
  void backward(const Var<T>& loss);

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    bool has_grad = false;
    Parameter<T>* param = nullptr;
    BackwardFn backward;
  };

  Var<T> push(Node node);
  void check_owned(const Var<T>& v) const;

  // deque: references to node values stay valid as the tape grows.
  std::deque<Node> nodes_;
  bool recording_;
  bool consumed_ = false;
};

extern template class Tape<float>;
extern template class Tape<double>;
extern template class Var<float>;
extern template class Var<double>;

}  // namespace modkit
