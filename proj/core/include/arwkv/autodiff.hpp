// Copyright 2026 The arwkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "arwkv/tensor.hpp"

namespace arwkv {

template <typename T>
struct VarNode {
  Tensor<T> value;
  Tensor<T> grad;  // empty until an adjoint reaches this node
  bool requires_grad = false;
  bool is_leaf = true;
  std::string name;

  void accumulate(const Tensor<T>& g);
  void accumulate(Tensor<T>&& g);
};

/// Shared handle to a value that may participate in reverse-mode differentiation.
/// Copies alias the same node; parameters are long-lived leaf Vars.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false, std::string name = {});

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  Index numel() const { return node_->value.numel(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf; }
  const std::string& name() const { return node_->name; }

  bool has_grad() const { return !node_->grad.empty() || node_->value.numel() == 0; }
  /// Accumulated adjoint; zeros when nothing reached this Var.
  Tensor<T> grad() const;
  const Tensor<T>& grad_ref() const { return node_->grad; }
  void zero_grad() { node_->grad = Tensor<T>(); }
  void accumulate_grad(const Tensor<T>& g) const {
    if (node_->requires_grad) node_->accumulate(g);
  }
  void accumulate_grad(Tensor<T>&& g) const {
    if (node_->requires_grad) node_->accumulate(std::move(g));
  }

  const std::shared_ptr<VarNode<T>>& node() const { return node_; }
  static Var from_node(std::shared_ptr<VarNode<T>> node) {
    Var v;
    v.node_ = std::move(node);
    return v;
  }

 private:
  std::shared_ptr<VarNode<T>> node_;
};

/// Ordered record of executed differentiable ops. Replaying the entries in
/// reverse order propagates adjoints from a scalar loss to every leaf.
template <typename T>
class Tape {
 public:
  /// Receives the output's adjoint and forward value; accumulates into the inputs.
  using BackwardFn = std::function<void(const Tensor<T>& grad_out, const Tensor<T>& value_out)>;

  void record(std::string op, std::shared_ptr<VarNode<T>> output, BackwardFn fn);

  /// Seeds d(loss)/d(loss) = 1 and runs all adjoints. Leaf gradients accumulate
  /// into whatever they already hold; call zero_grad on parameters between steps.
  void backward(const Var<T>& loss);

  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }
  const std::string& op_name(std::size_t i) const { return entries_[i].op; }

 private:
  struct Entry {
    std::string op;
    std::shared_ptr<VarNode<T>> output;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
};

/// Thread-local tape that differentiable ops record onto. Null means no recording.
template <typename T>
Tape<T>* active_tape();

/// Installs a tape as the active one for the current thread for the scope's lifetime.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

/// Disables recording for the scope's lifetime.
template <typename T>
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>* previous_;
};

template <typename T>
void backward(Tape<T>& tape, const Var<T>& loss) {
  tape.backward(loss);
}

extern template struct VarNode<float>;
extern template struct VarNode<double>;
extern template class Var<float>;
extern template class Var<double>;
extern template class Tape<float>;
extern template class Tape<double>;
extern template class TapeScope<float>;
extern template class TapeScope<double>;
extern template class NoGradScope<float>;
extern template class NoGradScope<double>;

}  // namespace arwkv
