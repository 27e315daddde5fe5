// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#include "mvdiff/nn/layers.h"

#include <cmath>
#include <numbers>

#include "mvdiff/common/error.h"

namespace mvdiff::nn {

template <typename T>
Tensor<T> init_normal(Shape shape, std::size_t fan_in, double gain, Rng& rng) {
  Tensor<T> t(std::move(shape));
  if (gain == 0.0) return t;
  std::normal_distribution<double> dist(0.0, gain / std::sqrt(static_cast<double>(fan_in)));
  for (T& v : t.storage()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
void add_linear(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                double gain, double bias) {
  store.add(name + "/w", init_normal<T>({in, out}, in, gain, rng));
  store.add(name + "/b", Tensor<T>({out}, static_cast<T>(bias)));
}

template <typename T>
Var<T> linear(Tape<T>& tape, const ParamStore<T>& store, const std::string& name, Var<T> x) {
  return diff::add(diff::matmul(x, tape.param(store, name + "/w")), tape.param(store, name + "/b"));
}

template <typename T>
void add_layer_norm(ParamStore<T>& store, const std::string& name, std::size_t dim) {
  store.add(name + "/g", Tensor<T>::ones({dim}));
  store.add(name + "/b", Tensor<T>({dim}));
}

template <typename T>
Var<T> layer_norm(Tape<T>& tape, const ParamStore<T>& store, const std::string& name, Var<T> x) {
  return diff::layer_norm(x, tape.param(store, name + "/g"), tape.param(store, name + "/b"), static_cast<T>(1e-5));
}

template <typename T>
void add_conv(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, std::size_t k,
              Rng& rng, double gain) {
  store.add(name + "/w", init_normal<T>({out, in, k, k}, in * k * k, gain, rng));
  store.add(name + "/b", Tensor<T>({out}));
}

template <typename T>
Var<T> conv(Tape<T>& tape, const ParamStore<T>& store, const std::string& name, Var<T> x, std::size_t stride,
            std::size_t pad) {
  Var<T> y = diff::conv2d(x, tape.param(store, name + "/w"), stride, pad);
  return diff::channel_affine(y, Var<T>{}, tape.param(store, name + "/b"));
}

template <typename T>
void add_group_norm(ParamStore<T>& store, const std::string& name, std::size_t channels) {
  store.add(name + "/g", Tensor<T>::ones({channels}));
  store.add(name + "/b", Tensor<T>({channels}));
}

template <typename T>
Var<T> group_norm(Tape<T>& tape, const ParamStore<T>& store, const std::string& name, Var<T> x,
                  std::size_t groups) {
  return diff::group_norm(x, groups, tape.param(store, name + "/g"), tape.param(store, name + "/b"),
                          static_cast<T>(1e-5));
}

template <typename T>
void add_mlp(ParamStore<T>& store, const std::string& name, std::size_t dim, std::size_t hidden, Rng& rng) {
  add_linear(store, name + "/fc1", dim, hidden, rng);
  add_linear(store, name + "/fc2", hidden, dim, rng);
}

template <typename T>
Var<T> mlp(Tape<T>& tape, const ParamStore<T>& store, const std::string& name, Var<T> x) {
  return linear(tape, store, name + "/fc2", diff::gelu(linear(tape, store, name + "/fc1", x)));
}

template <typename T>
void add_attention(ParamStore<T>& store, const std::string& name, std::size_t dim, Rng& rng,
                   std::size_t context_dim) {
  const std::size_t kv = context_dim == 0 ? dim : context_dim;
  add_linear(store, name + "/q", dim, dim, rng);
  add_linear(store, name + "/k", kv, dim, rng);
  add_linear(store, name + "/v", kv, dim, rng);
  add_linear(store, name + "/o", dim, dim, rng);
}

namespace {

// [B, N, D] -> [B, heads, N, D / heads]
template <typename T>
Var<T> split_heads(Var<T> x, std::size_t heads) {
  const std::size_t b = x.dim(0), n = x.dim(1), d = x.dim(2);
  return diff::permute(diff::reshape(x, {b, n, heads, d / heads}), {0, 2, 1, 3});
}

}  // namespace

template <typename T>
Var<T> attention(Tape<T>& tape, const ParamStore<T>& store, const std::string& name, Var<T> queries,
                 Var<T> keys_values, std::size_t heads, Var<T> bias) {
  const bool unbatched = queries.rank() == 2;
  if (queries.rank() != keys_values.rank() || (queries.rank() != 2 && queries.rank() != 3)) {
    throw ShapeError("attention expects [N, D] or [B, N, D] operands of equal rank");
  }
  if (unbatched) {
    queries = diff::reshape(queries, {1, queries.dim(0), queries.dim(1)});
    keys_values = diff::reshape(keys_values, {1, keys_values.dim(0), keys_values.dim(1)});
  }
  const std::size_t b = queries.dim(0), nq = queries.dim(1), d = queries.dim(2);
  if (d % heads != 0) throw ShapeError("attention: model dim not divisible by heads");

  Var<T> q = split_heads(linear(tape, store, name + "/q", queries), heads);
  Var<T> k = split_heads(linear(tape, store, name + "/k", keys_values), heads);
  Var<T> v = split_heads(linear(tape, store, name + "/v", keys_values), heads);
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d / heads)));
  Var<T> weights = diff::softmax_rows(diff::scale(diff::matmul(q, k, true), scale), bias);
  Var<T> mixed = diff::permute(diff::matmul(weights, v), {0, 2, 1, 3});
  Var<T> out = linear(tape, store, name + "/o", diff::reshape(mixed, {b, nq, d}));
  return unbatched ? diff::reshape(out, {nq, d}) : out;
}

std::vector<double> sinusoidal_encoding(const std::vector<double>& values, int frequencies) {
  std::vector<double> out(values);
  out.reserve(values.size() * (1 + 2 * static_cast<std::size_t>(frequencies)));
  for (int k = 0; k < frequencies; ++k) {
    const double w = std::ldexp(std::numbers::pi, k);
    for (double v : values) out.push_back(std::sin(w * v));
    for (double v : values) out.push_back(std::cos(w * v));
  }
  return out;
}

std::vector<double> timestep_embedding(double t, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) throw std::invalid_argument("timestep_embedding: dim must be even and positive");
  const std::size_t half = dim / 2;
  std::vector<double> out(dim);
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    out[i] = std::sin(t * freq);
    out[half + i] = std::cos(t * freq);
  }
  return out;
}

#define MVDIFF_NN_INSTANTIATE(T)                                                                                  \
  template Tensor<T> init_normal<T>(Shape, std::size_t, double, Rng&);                                            \
  template void add_linear<T>(ParamStore<T>&, const std::string&, std::size_t, std::size_t, Rng&, double, double); \
  template Var<T> linear<T>(Tape<T>&, const ParamStore<T>&, const std::string&, Var<T>);                           \
  template void add_layer_norm<T>(ParamStore<T>&, const std::string&, std::size_t);                               \
  template Var<T> layer_norm<T>(Tape<T>&, const ParamStore<T>&, const std::string&, Var<T>);                       \
  template void add_conv<T>(ParamStore<T>&, const std::string&, std::size_t, std::size_t, std::size_t, Rng&,       \
                            double);                                                                              \
  template Var<T> conv<T>(Tape<T>&, const ParamStore<T>&, const std::string&, Var<T>, std::size_t, std::size_t);   \
  template void add_group_norm<T>(ParamStore<T>&, const std::string&, std::size_t);                               \
  template Var<T> group_norm<T>(Tape<T>&, const ParamStore<T>&, const std::string&, Var<T>, std::size_t);          \
  template void add_mlp<T>(ParamStore<T>&, const std::string&, std::size_t, std::size_t, Rng&);                   \
  template Var<T> mlp<T>(Tape<T>&, const ParamStore<T>&, const std::string&, Var<T>);                              \
  template void add_attention<T>(ParamStore<T>&, const std::string&, std::size_t, Rng&, std::size_t);                       \
  template Var<T> attention<T>(Tape<T>&, const ParamStore<T>&, const std::string&, Var<T>, Var<T>, std::size_t,    \
                               Var<T>);

MVDIFF_NN_INSTANTIATE(float)
MVDIFF_NN_INSTANTIATE(double)

}  // namespace mvdiff::nn
