// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "mvdiff/diffcore/ops.h"
#include "mvdiff/diffcore/param_store.h"

// Parameterized building blocks over the diffcore tape. Each block owns the
// parameters under its name prefix: `add_*` registers them, the matching
// forward function reads them through Tape::param.
namespace mvdiff::nn {

using diff::ParamStore;
using diff::Shape;
using diff::Tape;
using diff::Tensor;
using diff::Var;

using Rng = std::mt19937_64;

// Gaussian init with std = gain / sqrt(fan_in); gain 0 gives zeros.
template <typename T>
Tensor<T> init_normal(Shape shape, std::size_t fan_in, double gain, Rng& rng);

// name/w: [in, out], name/b: [out].
template <typename T>
void add_linear(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                double gain = 1.0, double bias = 0.0);
template <typename T>
Var<T> linear(Tape<T>& tape, const ParamStore<T>& store, const std::string& name, Var<T> x);

// name/g, name/b over the last dimension.
template <typename T>
void add_layer_norm(ParamStore<T>& store, const std::string& name, std::size_t dim);
template <typename T>
Var<T> layer_norm(Tape<T>& tape, const ParamStore<T>& store, const std::string& name, Var<T> x);

// name/w: [out, in, k, k], name/b: [out].
template <typename T>
void add_conv(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, std::size_t k,
              Rng& rng, double gain = 1.0);
template <typename T>
Var<T> conv(Tape<T>& tape, const ParamStore<T>& store, const std::string& name, Var<T> x, std::size_t stride,
            std::size_t pad);

// Per-channel gain and offset for group norm over [B, C, H, W].
template <typename T>
void add_group_norm(ParamStore<T>& store, const std::string& name, std::size_t channels);
template <typename T>
Var<T> group_norm(Tape<T>& tape, const ParamStore<T>& store, const std::string& name, Var<T> x,
                  std::size_t groups);

// Two-layer GELU MLP: dim -> hidden -> dim.
template <typename T>
void add_mlp(ParamStore<T>& store, const std::string& name, std::size_t dim, std::size_t hidden, Rng& rng);
template <typename T>
Var<T> mlp(Tape<T>& tape, const ParamStore<T>& store, const std::string& name, Var<T> x);

// Multi-head attention with q/k/v/o projections. Keys and values may come
// from a context of width `context_dim` (0 means `dim`).
template <typename T>
void add_attention(ParamStore<T>& store, const std::string& name, std::size_t dim, Rng& rng,
                   std::size_t context_dim = 0);

/// queries [B, Nq, D] or [Nq, D]; keys_values [B, Nk, Dc] or [Nk, Dc] (same
/// rank as queries). The optional additive bias [Nq, Nk] (or any suffix of
/// [B, heads, Nq, Nk]) is added to the scaled logits before the softmax.
template <typename T>
Var<T> attention(Tape<T>& tape, const ParamStore<T>& store, const std::string& name, Var<T> queries,
                 Var<T> keys_values, std::size_t heads, Var<T> bias = {});

/// [x, sin(2^k pi x), cos(2^k pi x) for k < frequencies] per input value,
/// grouped by frequency. Output size: n * (1 + 2 * frequencies).
std::vector<double> sinusoidal_encoding(const std::vector<double>& values, int frequencies);

/// Transformer-style timestep embedding of size `dim` (even).
std::vector<double> timestep_embedding(double t, std::size_t dim);

}  // namespace mvdiff::nn
