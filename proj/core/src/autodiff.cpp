// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#include "arwkv/autodiff.hpp"

namespace arwkv {

namespace {

template <typename T>
Tape<T>*& tape_slot() {
  thread_local Tape<T>* slot = nullptr;
  return slot;
}

}  // namespace

template <typename T>
void VarNode<T>::accumulate(const Tensor<T>& g) {
  if (g.shape() != value.shape())
    throw DimensionError("gradient shape " + shape_str(g.shape()) + " does not match value shape " +
                         shape_str(value.shape()) + (name.empty() ? "" : " for '" + name + "'"));
  if (grad.empty() && value.numel() > 0) {
    grad = g;
    return;
  }
  T* dst = grad.ptr();
  const T* src = g.ptr();
  for (Index i = 0; i < g.numel(); ++i) dst[i] += src[i];
}

template <typename T>
void VarNode<T>::accumulate(Tensor<T>&& g) {
  if (grad.empty() && value.numel() > 0 && g.shape() == value.shape()) {
    grad = std::move(g);
    return;
  }
  accumulate(static_cast<const Tensor<T>&>(g));
}

template <typename T>
Var<T>::Var(Tensor<T> value, bool requires_grad, std::string name) : node_(std::make_shared<VarNode<T>>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
  node_->name = std::move(name);
}

template <typename T>
Tensor<T> Var<T>::grad() const {
  if (node_->grad.empty()) return Tensor<T>::zeros(node_->value.shape());
  return node_->grad;
}

template <typename T>
void Tape<T>::record(std::string op, std::shared_ptr<VarNode<T>> output, BackwardFn fn) {
  output->is_leaf = false;
  output->requires_grad = true;
  entries_.push_back(Entry{std::move(op), std::move(output), std::move(fn)});
}

template <typename T>
void Tape<T>::backward(const Var<T>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractError("backward() requires a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  for (auto& e : entries_) e.output->grad = Tensor<T>();
  if (!loss.requires_grad()) return;
  loss.node()->grad = Tensor<T>::ones(loss.shape());
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->fn(it->output->grad, it->output->value);
  }
}

template <typename T>
Tape<T>* active_tape() {
  return tape_slot<T>();
}

template <typename T>
TapeScope<T>::TapeScope(Tape<T>& tape) : previous_(tape_slot<T>()) {
  tape_slot<T>() = &tape;
}

template <typename T>
TapeScope<T>::~TapeScope() {
  tape_slot<T>() = previous_;
}

template <typename T>
NoGradScope<T>::NoGradScope() : previous_(tape_slot<T>()) {
  tape_slot<T>() = nullptr;
}

template <typename T>
NoGradScope<T>::~NoGradScope() {
  tape_slot<T>() = previous_;
}

template struct VarNode<float>;
template struct VarNode<double>;
template class Var<float>;
template class Var<double>;
template class Tape<float>;
template class Tape<double>;
template Tape<float>* active_tape<float>();
template Tape<double>* active_tape<double>();
template class TapeScope<float>;
template class TapeScope<double>;
template class NoGradScope<float>;
template class NoGradScope<double>;

}  // namespace arwkv
