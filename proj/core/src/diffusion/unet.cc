// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#include "mvdiff/diffusion/unet.h"

#include <algorithm>
#include <random>
#include <stdexcept>
#include <string>

#include "mvdiff/common/error.h"
#include "mvdiff/common/parallel.h"
#include "mvdiff/common/random.h"
#include "mvdiff/diffcore/ops.h"
#include "mvdiff/nn/layers.h"

namespace mvdiff::diffusion {

namespace {

std::size_t channels_at(const UNetConfig& c, std::size_t level) {
  return static_cast<std::size_t>(c.base_channels * c.channel_mult[level]);
}

bool has_attention(const UNetConfig& c, int resolution) {
  return std::find(c.attention_resolutions.begin(), c.attention_resolutions.end(), resolution) !=
         c.attention_resolutions.end();
}

template <typename T>
void add_res_block(ParamStore<T>& p, const std::string& name, std::size_t in, std::size_t out, std::size_t embed,
                   nn::Rng& rng) {
  nn::add_group_norm(p, name + "/gn1", in);
  nn::add_conv(p, name + "/conv1", in, out, 3, rng);
  nn::add_linear(p, name + "/temb", embed, out, rng);
  nn::add_group_norm(p, name + "/gn2", out);
  nn::add_conv(p, name + "/conv2", out, out, 3, rng);
  if (in != out) nn::add_conv(p, name + "/skip", in, out, 1, rng);
}

template <typename T>
Var<T> res_block(Tape<T>& tape, const ParamStore<T>& p, const UNetConfig& c, const std::string& name, Var<T> x,
                 Var<T> emb) {
  const auto groups = static_cast<std::size_t>(c.groups);
  const std::size_t out = p.value(name + "/conv1/b").numel();
  Var<T> h = nn::conv(tape, p, name + "/conv1", diff::silu(nn::group_norm(tape, p, name + "/gn1", x, groups)), 1, 1);
  Var<T> shift = diff::reshape(nn::linear(tape, p, name + "/temb", diff::silu(emb)), {out});
  h = diff::channel_affine(h, Var<T>{}, shift);
  h = nn::conv(tape, p, name + "/conv2", diff::silu(nn::group_norm(tape, p, name + "/gn2", h, groups)), 1, 1);
  Var<T> skip = p.contains(name + "/skip/w") ? nn::conv(tape, p, name + "/skip", x, 1, 0) : x;
  return diff::add(skip, h);
}

template <typename T>
void add_attention_block(ParamStore<T>& p, const UNetConfig& c, const std::string& name, std::size_t ch,
                         nn::Rng& rng) {
  if (c.cross_attention_enabled) {
    nn::add_layer_norm(p, name + "/ln_cross", ch);
    nn::add_attention(p, name + "/cross", ch, rng, static_cast<std::size_t>(c.context_dim));
  }
  nn::add_layer_norm(p, name + "/ln_self", ch);
  nn::add_attention(p, name + "/self", ch, rng);
}

template <typename T>
Var<T> attention_block(Tape<T>& tape, const ParamStore<T>& p, const UNetConfig& c, const std::string& name,
                       Var<T> x, Var<T> z) {
  const std::size_t v = x.dim(0), ch = x.dim(1), r = x.dim(2), n = r * r;
  const auto heads = static_cast<std::size_t>(c.heads);
  Var<T> tokens = diff::permute(diff::reshape(x, {v, ch, n}), {0, 2, 1});
  if (c.cross_attention_enabled) {
    // Each image token attends to the shared scene latent independently.
    Var<T> flat = diff::reshape(tokens, {v * n, ch});
    flat = diff::add(flat, nn::attention(tape, p, name + "/cross", nn::layer_norm(tape, p, name + "/ln_cross", flat),
                                         z, heads));
    tokens = diff::reshape(flat, {v, n, ch});
  }
  // Multi-view: one sequence of all views' tokens. Otherwise each view alone.
  Var<T> seq = c.multiview_attention_enabled ? diff::reshape(tokens, {1, v * n, ch}) : tokens;
  Var<T> h = nn::layer_norm(tape, p, name + "/ln_self", seq);
  seq = diff::add(seq, nn::attention(tape, p, name + "/self", h, h, heads));
  return diff::reshape(diff::permute(diff::reshape(seq, {v, n, ch}), {0, 2, 1}), {v, ch, r, r});
}

std::string level_name(const char* prefix, std::size_t level) {
  return std::string("diffusion/") + prefix + std::to_string(level);
}

}  // namespace

void UNetConfig::validate() const {
  if (channel_mult.empty()) throw std::invalid_argument("unet: channel_mult must not be empty");
  if (base_channels <= 0 || base_channels % 2 != 0) throw std::invalid_argument("unet: base_channels must be even");
  const int levels = static_cast<int>(channel_mult.size());
  if (image_size <= 0 || image_size % (1 << (levels - 1)) != 0) {
    throw std::invalid_argument("unet: image_size must be divisible by 2^(levels - 1)");
  }
  for (int m : channel_mult) {
    const int ch = base_channels * m;
    if (m <= 0 || groups <= 0 || ch % groups != 0) throw std::invalid_argument("unet: groups must divide channels");
    if (heads <= 0 || ch % heads != 0) throw std::invalid_argument("unet: heads must divide channels");
  }
  if (base_channels % groups != 0) throw std::invalid_argument("unet: groups must divide base_channels");
  if (context_dim <= 0) throw std::invalid_argument("unet: context_dim must be positive");
}

void to_json(nlohmann::json& j, const UNetConfig& c) {
  j = {{"image_size", c.image_size},
       {"base_channels", c.base_channels},
       {"channel_mult", c.channel_mult},
       {"attention_resolutions", c.attention_resolutions},
       {"groups", c.groups},
       {"heads", c.heads},
       {"context_dim", c.context_dim},
       {"cross_attention_enabled", c.cross_attention_enabled},
       {"multiview_attention_enabled", c.multiview_attention_enabled}};
}

void from_json(const nlohmann::json& j, UNetConfig& c) {
  c.image_size = j.at("image_size").get<int>();
  c.base_channels = j.at("base_channels").get<int>();
  c.channel_mult = j.at("channel_mult").get<std::vector<int>>();
  c.attention_resolutions = j.at("attention_resolutions").get<std::vector<int>>();
  c.groups = j.at("groups").get<int>();
  c.heads = j.at("heads").get<int>();
  c.context_dim = j.at("context_dim").get<int>();
  c.cross_attention_enabled = j.at("cross_attention_enabled").get<bool>();
  c.multiview_attention_enabled = j.at("multiview_attention_enabled").get<bool>();
}

template <typename T>
ParamStore<T> init_unet_params(const UNetConfig& c, std::uint64_t seed) {
  c.validate();
  nn::Rng rng(derive_seed(seed, 0x554e));
  ParamStore<T> p;
  const auto base = static_cast<std::size_t>(c.base_channels);
  const std::size_t e = c.embed_dim();
  const std::size_t levels = c.channel_mult.size();
  nn::add_linear(p, "diffusion/time/fc1", base, e, rng);
  nn::add_linear(p, "diffusion/time/fc2", e, e, rng);
  nn::add_conv(p, "diffusion/stem", UNetConfig::kInputChannels, base, 3, rng);

  std::size_t ch = base;
  for (std::size_t l = 0; l < levels; ++l) {
    const std::size_t out = channels_at(c, l);
    add_res_block(p, level_name("down", l) + "/res", ch, out, e, rng);
    if (has_attention(c, c.image_size >> l)) add_attention_block(p, c, level_name("down", l) + "/attn", out, rng);
    ch = out;
  }
  add_res_block(p, "diffusion/mid/res1", ch, ch, e, rng);
  add_attention_block(p, c, "diffusion/mid/attn", ch, rng);
  add_res_block(p, "diffusion/mid/res2", ch, ch, e, rng);
  for (std::size_t l = levels; l-- > 0;) {
    const std::size_t out = channels_at(c, l);
    add_res_block(p, level_name("up", l) + "/res", ch + out, out, e, rng);
    if (has_attention(c, c.image_size >> l)) add_attention_block(p, c, level_name("up", l) + "/attn", out, rng);
    ch = out;
  }
  nn::add_group_norm(p, "diffusion/out/gn", ch);
  // Zero output conv: the untrained model predicts zero noise.
  nn::add_conv(p, "diffusion/out/conv", ch, UNetConfig::kOutputChannels, 3, rng, 0.0);
  return p;
}

template <typename T>
Var<T> unet_forward(Tape<T>& tape, const ParamStore<T>& p, const UNetConfig& c, Var<T> noisy, Var<T> latent,
                    Var<T> z, int t) {
  const auto s = static_cast<std::size_t>(c.image_size);
  if (noisy.rank() != 4 || noisy.dim(1) != 3 || noisy.dim(2) != s || noisy.dim(3) != s) {
    throw ShapeError("unet: noisy images must be [V, 3, " + std::to_string(s) + ", " + std::to_string(s) + "], got " +
                     diff::shape_str(noisy.shape()));
  }
  if (latent.shape() != noisy.shape()) throw ShapeError("unet: latent images must match the noisy images");
  if (z.rank() != 2 || z.dim(1) != static_cast<std::size_t>(c.context_dim)) {
    throw ShapeError("unet: z must be [N, " + std::to_string(c.context_dim) + "]");
  }
  const auto base = static_cast<std::size_t>(c.base_channels);
  const std::vector<double> te = nn::timestep_embedding(static_cast<double>(t), base);
  Tensor<T> te_t({1, base});
  for (std::size_t i = 0; i < base; ++i) te_t[i] = static_cast<T>(te[i]);
  Var<T> emb = nn::linear(tape, p, "diffusion/time/fc1", tape.constant(std::move(te_t)));
  emb = nn::linear(tape, p, "diffusion/time/fc2", diff::silu(emb));

  Var<T> h = nn::conv(tape, p, "diffusion/stem", diff::concat<T>({noisy, latent}, 1), 1, 1);
  const std::size_t levels = c.channel_mult.size();
  std::vector<Var<T>> skips;
  for (std::size_t l = 0; l < levels; ++l) {
    h = res_block(tape, p, c, level_name("down", l) + "/res", h, emb);
    if (has_attention(c, c.image_size >> l)) h = attention_block(tape, p, c, level_name("down", l) + "/attn", h, z);
    skips.push_back(h);
    if (l + 1 < levels) h = diff::avg_pool2(h);
  }
  h = res_block(tape, p, c, "diffusion/mid/res1", h, emb);
  h = attention_block(tape, p, c, "diffusion/mid/attn", h, z);
  h = res_block(tape, p, c, "diffusion/mid/res2", h, emb);
  for (std::size_t l = levels; l-- > 0;) {
    h = res_block(tape, p, c, level_name("up", l) + "/res", diff::concat<T>({h, skips[l]}, 1), emb);
    if (has_attention(c, c.image_size >> l)) h = attention_block(tape, p, c, level_name("up", l) + "/attn", h, z);
    if (l > 0) h = diff::upsample2(h);
  }
  h = diff::silu(nn::group_norm(tape, p, "diffusion/out/gn", h, static_cast<std::size_t>(c.groups)));
  return nn::conv(tape, p, "diffusion/out/conv", h, 1, 1);
}

template <typename T>
Var<T> vldm_loss(Var<T> predicted, const Tensor<T>& eps_true) {
  if (predicted.shape() != eps_true.shape()) throw ShapeError("vldm_loss: noise shapes differ");
  return diff::mean(diff::square(diff::sub(predicted, predicted.tape().constant(eps_true))));
}

namespace {

struct Draw {
  int t = 0;
  Tensor<float> eps;
};

Draw draw_noise(const NoiseSchedule& sched, const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, sched.steps - 1);
  const int t = pick(rng);
  return {t, gaussian<float>(shape, rng())};
}

}  // namespace

StepStats train_step(ParamStore<float>& params, const UNetConfig& config, const NoiseSchedule& sched,
                     const std::vector<Example>& batch, const diff::AdamWOptions& optimizer, std::uint64_t seed) {
  if (batch.empty()) throw std::invalid_argument("diffusion train_step: empty batch");
  const std::vector<std::string> names = params.names();
  std::vector<std::vector<Tensor<float>>> grads(batch.size());
  std::vector<double> losses(batch.size());
  const auto inv_batch = static_cast<float>(1.0 / static_cast<double>(batch.size()));

  parallel_for(batch.size(), [&](std::size_t e) {
    const Example& ex = batch[e];
    const Draw d = draw_noise(sched, ex.x0.shape(), derive_seed(seed, 0x6466, e));
    Tape<float> tape;
    const Var<float> pred = unet_forward(tape, params, config, tape.constant(q_sample(ex.x0, d.t, d.eps, sched)),
                                         tape.constant(ex.latent), tape.constant(ex.z), d.t);
    const Var<float> loss = vldm_loss(pred, d.eps);
    tape.backward(loss);
    losses[e] = loss.value().item();
    for (const std::string& name : names) {
      const Tensor<float>* g = tape.param_grad(name);
      grads[e].push_back(g ? *g : Tensor<float>(params.value(name).shape()));
    }
  });

  StepStats stats;
  for (std::size_t i = 0; i < names.size(); ++i) {
    Tensor<float> g(params.value(names[i]).shape());
    for (std::size_t e = 0; e < batch.size(); ++e) {
      for (std::size_t k = 0; k < g.numel(); ++k) g[k] += inv_batch * grads[e][i][k];
    }
    params.set_grad(names[i], std::move(g));
  }
  for (double l : losses) stats.loss += l / static_cast<double>(batch.size());
  diff::adamw_step(params, optimizer);
  return stats;
}

double evaluate_loss(const ParamStore<float>& params, const UNetConfig& config, const NoiseSchedule& sched,
                     const std::vector<Example>& batch, std::uint64_t seed, int draws_per_example) {
  if (batch.empty() || draws_per_example < 1) throw std::invalid_argument("evaluate_loss: nothing to evaluate");
  const std::size_t n = batch.size() * static_cast<std::size_t>(draws_per_example);
  std::vector<double> losses(n);
  parallel_for(n, [&](std::size_t i) {
    const Example& ex = batch[i / static_cast<std::size_t>(draws_per_example)];
    const Draw d = draw_noise(sched, ex.x0.shape(), derive_seed(seed, 0x6576, i));
    Tape<float> tape;
    const Var<float> pred = unet_forward(tape, params, config, tape.constant(q_sample(ex.x0, d.t, d.eps, sched)),
                                         tape.constant(ex.latent), tape.constant(ex.z), d.t);
    losses[i] = vldm_loss(pred, d.eps).value().item();
  });
  double total = 0;
  for (double l : losses) total += l;
  return total / static_cast<double>(n);
}

#define MVDIFF_UNET_INSTANTIATE(T)                                                                            \
  template ParamStore<T> init_unet_params<T>(const UNetConfig&, std::uint64_t);                              \
  template Var<T> unet_forward<T>(Tape<T>&, const ParamStore<T>&, const UNetConfig&, Var<T>, Var<T>, Var<T>, \
                                  int);                                                                      \
  template Var<T> vldm_loss<T>(Var<T>, const Tensor<T>&);

MVDIFF_UNET_INSTANTIATE(float)
MVDIFF_UNET_INSTANTIATE(double)

}  // namespace mvdiff::diffusion
