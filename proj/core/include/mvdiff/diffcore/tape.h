// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mvdiff/diffcore/param_store.h"
#include "mvdiff/diffcore/tensor.h"

namespace mvdiff::diff {

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename T>
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  std::size_t rank() const { return value().rank(); }
  bool requires_grad() const;

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records executed ops in order and runs reverse-mode differentiation.
///
/// Nodes live in a deque, so references to recorded values stay valid while
/// more ops are appended. Gradients accumulate additively into one buffer per
/// node; backward visits nodes in exact reverse execution order.
template <typename T>
class Tape {
 public:
  // Called with the node's output value and its accumulated gradient.
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& out, const Tensor<T>& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value);
  Var<T> variable(Tensor<T> value);

  // Leaf bound to a named parameter. Repeated lookups of one name share a node.
  Var<T> param(const ParamStore<T>& store, std::string_view name);

  Var<T> record(std::string_view op, Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn);
  Var<T> record(std::string_view op, Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn fn);

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  // Gradient buffer for a node, created as zeros on first use.
  Tensor<T>& grad_buffer(std::size_t id);
  const Tensor<T>* grad(std::size_t id) const;
  const Tensor<T>* grad(Var<T> v) const { return grad(v.id()); }

  // Seeds d(loss)/d(loss) = 1 and propagates. Throws ShapeError for non-scalar loss.
  void backward(Var<T> loss);

  // Writes gradients of every parameter bound on this tape into `store`.
  // Parameters the loss does not reach receive zeros.
  void export_param_grads(ParamStore<T>& store) const;
  // Gradient of a parameter leaf, or nullptr if it was never used or reached.
  const Tensor<T>* param_grad(std::string_view name) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::string op;
    Tensor<T> value;
    std::optional<Tensor<T>> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var<T> push(std::string_view op, Tensor<T> value, bool requires_grad, BackwardFn fn);

  std::deque<Node> nodes_;
  std::map<std::string, std::size_t, std::less<>> params_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace mvdiff::diff
