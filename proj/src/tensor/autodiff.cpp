// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0

#include "modkit/tensor/autodiff.hpp"

#include "modkit/tensor/kernels.hpp"

namespace modkit {

template <class T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

template <class T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

template <class T>
Tensor<T> Var<T>::grad() const {
  return tape_->grad(id_);
}

template <class T>
Var<T> Tape<T>::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var<T>(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

template <class T>
void Tape<T>::check_owned(const Var<T>& v) const {
  if (!v.valid() || &v.tape() != this) throw UsageError("tape: variable belongs to a different tape");
}

template <class T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

template <class T>
Var<T> Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad && recording_;
  return push(std::move(n));
}

template <class T>
Var<T> Tape<T>::param(Parameter<T>& p) {
  Node n;
  n.value = p.value;
  n.requires_grad = recording_ && !p.frozen;
  if (n.requires_grad) n.param = &p;
  return push(std::move(n));
}

template <class T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward) {
  bool needs = false;
  for (const auto& v : inputs) {
    check_owned(v);
    needs = needs || nodes_[v.id()].requires_grad;
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = needs && recording_;
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

template <class T>
Var<T> Tape<T>::record(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn backward) {
  bool needs = false;
  for (const auto& v : inputs) {
    check_owned(v);
    needs = needs || nodes_[v.id()].requires_grad;
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = needs && recording_;
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

template <class T>
Tensor<T>& Tape<T>::grad_buffer(std::uint32_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor<T>(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

template <class T>
void Tape<T>::accumulate(std::uint32_t id, const Tensor<T>& g) {
  if (!nodes_[id].requires_grad) return;
  Tensor<T>& buf = grad_buffer(id);
  if (g.size() != buf.size()) throw ShapeError("accumulate_grad", buf.shape(), g.shape());
  kernels::active<T>().add(buf.size(), buf.ptr(), g.ptr(), buf.ptr());
}

template <class T>
Tensor<T> Tape<T>::grad(std::uint32_t id) const {
  const Node& n = nodes_[id];
  return n.has_grad ? n.grad : Tensor<T>(n.value.shape());
}

template <class T>
void Tape<T>::backward(const Var<T>& loss) {
  check_owned(loss);
  if (consumed_) throw UsageError("backward: tape already consumed");
  if (nodes_.empty()) throw UsageError("backward: empty tape");
  const Node& root = nodes_[loss.id()];
  if (root.value.size() != 1) {
    throw UsageError("backward: loss must be a scalar, got shape " + shape_to_string(root.value.shape()));
  }
  consumed_ = true;
  if (!root.requires_grad) return;
  grad_buffer(loss.id()).fill(T(1));
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.has_grad) continue;
    if (n.backward) {
      // The closure may append gradients to earlier nodes only.
      n.backward(*this, n.grad);
      n.backward = nullptr;
    } else if (n.param != nullptr) {
      Parameter<T>& p = *n.param;
      if (p.grad.shape() != p.value.shape()) p.zero_grad();
      kernels::active<T>().add(p.grad.size(), p.grad.ptr(), n.grad.ptr(), p.grad.ptr());
    }
  }
}

template class Tape<float>;
template class Tape<double>;
template class Var<float>;
template class Var<double>;

}  // namespace modkit
