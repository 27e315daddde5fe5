// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#include "mvdiff/diffcore/tape.h"

#include <stdexcept>

namespace mvdiff::diff {

template <typename T>
Var<T> Tape<T>::push(std::string_view op, Tensor<T> value, bool requires_grad, BackwardFn fn) {
  if (!value.all_finite()) {
    throw NonFiniteError("non-finite value produced by op '" + std::string(op) + "'");
  }
  Node node;
  node.op = std::string(op);
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  if (requires_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  return push("constant", std::move(value), false, nullptr);
}

template <typename T>
Var<T> Tape<T>::variable(Tensor<T> value) {
  return push("variable", std::move(value), true, nullptr);
}

template <typename T>
Var<T> Tape<T>::param(const ParamStore<T>& store, std::string_view name) {
  if (auto it = params_.find(name); it != params_.end()) return Var<T>(this, it->second);
  Var<T> v = push("param", store.value(name), true, nullptr);
  params_.emplace(std::string(name), v.id());
  return v;
}

template <typename T>
Var<T> Tape<T>::record(std::string_view op, Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
  bool needs = false;
  for (const Var<T>& in : inputs) {
    if (in.valid() && &in.tape() != this) throw std::logic_error("op '" + std::string(op) + "' mixes tapes");
    needs = needs || (in.valid() && in.requires_grad());
  }
  return push(op, std::move(value), needs, std::move(fn));
}

template <typename T>
Var<T> Tape<T>::record(std::string_view op, Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn fn) {
  bool needs = false;
  for (const Var<T>& in : inputs) {
    if (in.valid() && &in.tape() != this) throw std::logic_error("op '" + std::string(op) + "' mixes tapes");
    needs = needs || (in.valid() && in.requires_grad());
  }
  return push(op, std::move(value), needs, std::move(fn));
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(std::size_t id) {
  Node& node = nodes_.at(id);
  if (!node.grad) node.grad.emplace(node.value.shape());
  return *node.grad;
}

template <typename T>
const Tensor<T>* Tape<T>::grad(std::size_t id) const {
  const Node& node = nodes_.at(id);
  return node.grad ? &*node.grad : nullptr;
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (!loss.valid() || &loss.tape() != this) throw std::logic_error("loss is not recorded on this tape");
  if (loss.value().numel() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  grad_buffer(loss.id())[0] += T(1);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.backward || !node.grad) continue;
    node.backward(*this, node.value, *node.grad);
  }
}

template <typename T>
void Tape<T>::export_param_grads(ParamStore<T>& store) const {
  for (const auto& [name, id] : params_) {
    const Node& node = nodes_[id];
    store.set_grad(name, node.grad ? *node.grad : Tensor<T>(node.value.shape()));
  }
}

template <typename T>
const Tensor<T>* Tape<T>::param_grad(std::string_view name) const {
  const auto it = params_.find(name);
  if (it == params_.end()) return nullptr;
  const Node& node = nodes_[it->second];
  return node.grad ? &*node.grad : nullptr;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace mvdiff::diff
