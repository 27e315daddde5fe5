// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mvdiff/diffcore/param_store.h"
#include "mvdiff/diffcore/tape.h"

namespace mvdiff::diff {

struct GradCheckOptions {
  double step = 1e-4;            // central-difference step
  std::size_t max_entries = 0;   // per tensor; 0 checks every entry
  std::uint64_t seed = 0;        // picks the entry subset when max_entries > 0
};

// Per tensor: |a - n|_2 / max(|a|_2, |n|_2, floor), where the floor is this
// fraction of the largest gradient norm seen in the whole check.
inline constexpr double kGradCheckRelativeFloor = 1e-6;

struct GradCheckReport {
  double max_rel_error = 0.0;    // max over tensors
  std::string worst;             // tensor with the largest error
  std::size_t checked = 0;       // entries compared
};

using InputLossFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;
using ParamLossFn = std::function<Var<double>(Tape<double>&, const ParamStore<double>&)>;

/// Compares reverse-mode gradients of a scalar loss w.r.t. each input
/// against central finite differences.
GradCheckReport check_input_gradients(const InputLossFn& loss, const std::vector<Tensor<double>>& inputs,
                                      const GradCheckOptions& options = {});

/// Same, but differentiates w.r.t. every parameter in `store`.
GradCheckReport check_param_gradients(const ParamLossFn& loss, const ParamStore<double>& store,
                                      const GradCheckOptions& options = {});

/// sum(out * R) for a fixed random R; turns any output into a scalar loss
/// whose gradient exercises every output element.
Var<double> random_projection(Var<double> out, std::uint64_t seed);

}  // namespace mvdiff::diff
