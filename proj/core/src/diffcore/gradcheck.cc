// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#include "mvdiff/diffcore/gradcheck.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mvdiff/diffcore/ops.h"

namespace mvdiff::diff {

namespace {

std::vector<std::size_t> pick_entries(std::size_t numel, const GradCheckOptions& o, std::uint64_t salt) {
  std::vector<std::size_t> idx(numel);
  std::iota(idx.begin(), idx.end(), 0);
  if (o.max_entries == 0 || numel <= o.max_entries) return idx;
  std::mt19937_64 rng(o.seed * 0x9E3779B97F4A7C15ULL + salt);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(o.max_entries);
  std::sort(idx.begin(), idx.end());
  return idx;
}

struct Sampled {
  std::string name;
  std::vector<double> analytic;
  std::vector<double> numeric;
};

double norm(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// A tensor whose true gradient is zero (a key bias under softmax, say) only
// sees finite-difference noise; the floor measures that noise against the
// largest gradient in the check rather than against an absolute 1e-8.
GradCheckReport summarize(const std::vector<Sampled>& all) {
  double scale = 0;
  for (const Sampled& s : all) scale = std::max({scale, norm(s.analytic), norm(s.numeric)});
  const double floor = std::max(1e-8, kGradCheckRelativeFloor * scale);
  GradCheckReport report;
  for (const Sampled& s : all) {
    std::vector<double> d(s.analytic.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = s.analytic[i] - s.numeric[i];
    const double rel = norm(d) / std::max({norm(s.analytic), norm(s.numeric), floor});
    report.checked += d.size();
    if (rel >= report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst = s.name;
    }
  }
  return report;
}

}  // namespace

GradCheckReport check_input_gradients(const InputLossFn& loss, const std::vector<Tensor<double>>& inputs,
                                      const GradCheckOptions& options) {
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& in : inputs) vars.push_back(tape.variable(in));
    tape.backward(loss(tape, vars));
    for (const auto& v : vars) {
      const Tensor<double>* g = tape.grad(v);
      analytic.push_back(g ? *g : Tensor<double>(v.shape()));
    }
  }

  auto evaluate = [&](const std::vector<Tensor<double>>& values) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& in : values) vars.push_back(tape.constant(in));
    return loss(tape, vars).value().item();
  };

  std::vector<Sampled> sampled;
  std::vector<Tensor<double>> work = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<double> a, n;
    for (std::size_t i : pick_entries(inputs[k].numel(), options, k)) {
      const double orig = work[k][i];
      work[k][i] = orig + options.step;
      const double fp = evaluate(work);
      work[k][i] = orig - options.step;
      const double fm = evaluate(work);
      work[k][i] = orig;
      n.push_back((fp - fm) / (2 * options.step));
      a.push_back(analytic[k][i]);
    }
    sampled.push_back({"input " + std::to_string(k), std::move(a), std::move(n)});
  }
  return summarize(sampled);
}

GradCheckReport check_param_gradients(const ParamLossFn& loss, const ParamStore<double>& store,
                                      const GradCheckOptions& options) {
  ParamStore<double> work = store.cast<double>();
  {
    Tape<double> tape;
    tape.backward(loss(tape, work));
    tape.export_param_grads(work);
  }
  auto evaluate = [&]() {
    Tape<double> tape;
    return loss(tape, work).value().item();
  };

  std::vector<Sampled> sampled;
  std::uint64_t salt = 0;
  for (auto& e : work.entries()) {
    std::vector<double> a, n;
    for (std::size_t i : pick_entries(e.value.numel(), options, salt++)) {
      const double orig = e.value[i];
      e.value[i] = orig + options.step;
      const double fp = evaluate();
      e.value[i] = orig - options.step;
      const double fm = evaluate();
      e.value[i] = orig;
      n.push_back((fp - fm) / (2 * options.step));
      a.push_back(e.grad ? (*e.grad)[i] : 0.0);
    }
    sampled.push_back({e.name, std::move(a), std::move(n)});
  }
  return summarize(sampled);
}

Var<double> random_projection(Var<double> out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Tensor<double> r(out.shape());
  for (double& v : r.storage()) v = dist(rng);
  return sum(mul(out, out.tape().constant(std::move(r))));
}

}  // namespace mvdiff::diff
