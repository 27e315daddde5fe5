// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#include "mvdiff/diffcore/param_store.h"

#include <cmath>
#include <stdexcept>

namespace mvdiff::diff {

template <typename T>
void ParamStore<T>::add(std::string name, Tensor<T> value) {
  if (index_.contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  index_.emplace(name, entries_.size());
  Entry e;
  e.name = std::move(name);
  e.first_moment = Tensor<T>(value.shape());
  e.second_moment = Tensor<T>(value.shape());
  e.value = std::move(value);
  entries_.push_back(std::move(e));
}

template <typename T>
bool ParamStore<T>::contains(std::string_view name) const {
  return index_.contains(std::string(name));
}

template <typename T>
typename ParamStore<T>::Entry& ParamStore<T>::entry(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + std::string(name));
  return entries_[it->second];
}

template <typename T>
const typename ParamStore<T>::Entry& ParamStore<T>::entry(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + std::string(name));
  return entries_[it->second];
}

template <typename T>
const Tensor<T>& ParamStore<T>::value(std::string_view name) const {
  return entry(name).value;
}

template <typename T>
Tensor<T>& ParamStore<T>::value(std::string_view name) {
  return entry(name).value;
}

template <typename T>
void ParamStore<T>::set_grad(std::string_view name, Tensor<T> grad) {
  Entry& e = entry(name);
  if (grad.shape() != e.value.shape()) {
    throw ShapeError("gradient shape " + shape_str(grad.shape()) + " does not match parameter " + e.name +
                     " " + shape_str(e.value.shape()));
  }
  e.grad = std::move(grad);
}

template <typename T>
const Tensor<T>* ParamStore<T>::grad(std::string_view name) const {
  const Entry& e = entry(name);
  return e.grad ? &*e.grad : nullptr;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& e : entries_) e.grad.reset();
}

template <typename T>
std::size_t ParamStore<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

template <typename T>
std::vector<std::string> ParamStore<T>::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

template <typename T>
void ParamStore<T>::merge(const ParamStore& other, std::string_view prefix) {
  for (const auto& e : other.entries_) {
    if (e.name.starts_with(prefix)) add(e.name, e.value);
  }
}

template <typename T>
void adamw_step(ParamStore<T>& store, const AdamWOptions& o) {
  for (const auto& e : store.entries()) {
    if (!e.grad) throw std::logic_error("missing gradient for parameter " + e.name);
  }
  const std::uint64_t step = store.step() + 1;
  const double bias1 = 1.0 - std::pow(o.beta1, static_cast<double>(step));
  const double bias2 = 1.0 - std::pow(o.beta2, static_cast<double>(step));
  const T decay = static_cast<T>(1.0 - o.lr * o.weight_decay);
  const T b1 = static_cast<T>(o.beta1);
  const T b2 = static_cast<T>(o.beta2);
  const T lr = static_cast<T>(o.lr);
  const T eps = static_cast<T>(o.eps);
  const T inv_bias1 = static_cast<T>(1.0 / bias1);
  const T inv_bias2 = static_cast<T>(1.0 / bias2);

  for (auto& e : store.entries()) {
    T* theta = e.value.raw();
    T* m = e.first_moment.raw();
    T* v = e.second_moment.raw();
    const T* g = e.grad->raw();
    const std::size_t n = e.value.numel();
    for (std::size_t i = 0; i < n; ++i) {
      theta[i] *= decay;
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const T m_hat = m[i] * inv_bias1;
      const T v_hat = v[i] * inv_bias2;
      theta[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
  store.set_step(step);
}

template class ParamStore<float>;
template class ParamStore<double>;
template void adamw_step<float>(ParamStore<float>&, const AdamWOptions&);
template void adamw_step<double>(ParamStore<double>&, const AdamWOptions&);

}  // namespace mvdiff::diff
