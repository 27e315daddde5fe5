// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#include "mvdiff/diffusion/schedule.h"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "mvdiff/common/error.h"

namespace mvdiff::diffusion {

NoiseSchedule schedule_linear(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw std::invalid_argument("schedule_linear: T must be >= 1");
  if (!(beta_start > 0 && beta_start <= beta_end && beta_end < 1)) {
    throw std::invalid_argument("schedule_linear: need 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.steps = steps;
  double bar = 1.0;
  for (int t = 0; t < steps; ++t) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(t) / (steps - 1);
    const double beta = beta_start + frac * (beta_end - beta_start);
    bar *= 1.0 - beta;
    s.betas.push_back(beta);
    s.alphas.push_back(1.0 - beta);
    s.alpha_bars.push_back(bar);
  }
  return s;
}

template <typename T>
Tensor<T> q_sample(const Tensor<T>& x0, int t, const Tensor<T>& eps, const NoiseSchedule& sched) {
  if (t < 0 || t >= sched.steps) throw std::out_of_range("q_sample: timestep " + std::to_string(t) + " out of range");
  if (x0.shape() != eps.shape()) throw ShapeError("q_sample: eps shape differs from x0");
  const double a = std::sqrt(sched.alpha_bars[static_cast<std::size_t>(t)]);
  const double b = std::sqrt(1.0 - sched.alpha_bars[static_cast<std::size_t>(t)]);
  Tensor<T> out(x0.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = static_cast<T>(a * x0[i] + b * eps[i]);
  return out;
}

template <typename T>
Tensor<T> gaussian(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Tensor<T> out(std::move(shape));
  for (T& v : out.storage()) v = static_cast<T>(n(rng));
  return out;
}

std::vector<int> ddim_timesteps(int total, int steps) {
  if (steps < 1 || steps > total) {
    throw std::invalid_argument("ddim: steps must lie in [1, T]; got " + std::to_string(steps) + " for T = " +
                                std::to_string(total));
  }
  std::vector<int> ts;
  for (int i = 0; i < steps; ++i) ts.push_back(static_cast<int>(static_cast<long long>(i) * total / steps));
  return ts;
}

Tensor<double> ddim_sample(const NoiseSchedule& sched, const EpsModel& model, Shape shape,
                           const SamplerOptions& options, std::vector<Tensor<double>>* trajectory) {
  if (!(options.eta >= 0.0 && options.eta <= 1.0)) throw std::invalid_argument("ddim: eta must lie in [0, 1]");
  const std::vector<int> ts = ddim_timesteps(sched.steps, options.steps);
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal;
  Tensor<double> x(std::move(shape));
  for (double& v : x.storage()) v = normal(rng);
  if (trajectory) trajectory->push_back(x);

  for (std::size_t i = ts.size(); i-- > 0;) {
    const int t = ts[i];
    const double abar = sched.alpha_bars[static_cast<std::size_t>(t)];
    const double abar_prev = i == 0 ? 1.0 : sched.alpha_bars[static_cast<std::size_t>(ts[i - 1])];
    const Tensor<double> eps = model(x, t);
    if (eps.shape() != x.shape()) throw ShapeError("ddim: model output shape differs from the state");
    const double sigma =
        options.eta * std::sqrt((1.0 - abar_prev) / (1.0 - abar)) * std::sqrt(1.0 - abar / abar_prev);
    const double dir = std::sqrt(std::max(0.0, 1.0 - abar_prev - sigma * sigma));
    const double sa = std::sqrt(abar), sb = std::sqrt(1.0 - abar), sp = std::sqrt(abar_prev);
    for (std::size_t k = 0; k < x.numel(); ++k) {
      const double x0 = (x[k] - sb * eps[k]) / sa;
      x[k] = sp * x0 + dir * eps[k];
    }
    if (sigma > 0) {
      for (double& v : x.storage()) v += sigma * normal(rng);
    }
    if (trajectory) trajectory->push_back(x);
  }
  return x;
}

template Tensor<float> q_sample<float>(const Tensor<float>&, int, const Tensor<float>&, const NoiseSchedule&);
template Tensor<double> q_sample<double>(const Tensor<double>&, int, const Tensor<double>&, const NoiseSchedule&);
template Tensor<float> gaussian<float>(Shape, std::uint64_t);
template Tensor<double> gaussian<double>(Shape, std::uint64_t);

}  // namespace mvdiff::diffusion
