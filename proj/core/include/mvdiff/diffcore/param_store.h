// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mvdiff/diffcore/tensor.h"

namespace mvdiff::diff {

/// Named trainable tensors plus their gradients and AdamW moments.
///
/// Parameters keep insertion order, which is also the checkpoint order.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
    std::optional<Tensor<T>> grad;
    Tensor<T> first_moment;
    Tensor<T> second_moment;
  };

  void add(std::string name, Tensor<T> value);
  bool contains(std::string_view name) const;

  const Tensor<T>& value(std::string_view name) const;
  Tensor<T>& value(std::string_view name);

  void set_grad(std::string_view name, Tensor<T> grad);
  const Tensor<T>* grad(std::string_view name) const;
  void zero_grad();

  std::size_t size() const { return entries_.size(); }
  std::size_t parameter_count() const;
  std::vector<std::string> names() const;

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t step) { step_ = step; }

  // Copies every parameter of `other` whose name starts with `prefix`.
  void merge(const ParamStore& other, std::string_view prefix = "");

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>());
    return out;
  }

 private:
  Entry& entry(std::string_view name);
  const Entry& entry(std::string_view name) const;

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::uint64_t step_ = 0;
};

struct AdamWOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  double eps = 1e-8;
};

/// One decoupled-weight-decay Adam update over every parameter.
/// Throws std::logic_error when a parameter has no gradient for this step.
template <typename T>
void adamw_step(ParamStore<T>& store, const AdamWOptions& options);

extern template class ParamStore<float>;
extern template class ParamStore<double>;
extern template void adamw_step<float>(ParamStore<float>&, const AdamWOptions&);
extern template void adamw_step<double>(ParamStore<double>&, const AdamWOptions&);

}  // namespace mvdiff::diff
