// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mvdiff/diffcore/tensor.h"

namespace mvdiff::diffusion {

using diff::Shape;
using diff::Tensor;

struct NoiseSchedule {
  int steps = 0;  // T
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;  // cumulative products
};

/// Linearly spaced betas; throws std::invalid_argument unless
/// 0 < beta_start <= beta_end < 1 and T >= 1.
NoiseSchedule schedule_linear(int steps, double beta_start, double beta_end);

inline constexpr int kDefaultSteps = 200;
inline constexpr double kDefaultBetaStart = 1e-4;
inline constexpr double kDefaultBetaEnd = 0.02;

/// sqrt(abar_t) x0 + sqrt(1 - abar_t) eps. Throws std::out_of_range for t
/// outside [0, T) and ShapeError if eps does not match x0.
template <typename T>
Tensor<T> q_sample(const Tensor<T>& x0, int t, const Tensor<T>& eps, const NoiseSchedule& sched);

/// Standard normal tensor from a seed.
template <typename T>
Tensor<T> gaussian(Shape shape, std::uint64_t seed);

// DDIM ----------------------------------------------------------------------

struct SamplerOptions {
  int steps = 50;
  double eta = 0.0;
  std::uint64_t seed = 0;
};

/// Evenly spaced timesteps floor(i * T / steps), ascending. Throws
/// std::invalid_argument when steps is outside [1, T].
std::vector<int> ddim_timesteps(int total, int steps);

/// Noise prediction for state x_t at timestep t.
using EpsModel = std::function<Tensor<double>(const Tensor<double>& x_t, int t)>;

/// Runs DDIM from x_T ~ N(0, I) (drawn from options.seed) down to x_0; the
/// last update uses abar_prev = 1. When `trajectory` is given it receives
/// x_T followed by the state after every update.
Tensor<double> ddim_sample(const NoiseSchedule& sched, const EpsModel& model, Shape shape,
                           const SamplerOptions& options, std::vector<Tensor<double>>* trajectory = nullptr);

}  // namespace mvdiff::diffusion
