// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#include "mvdiff/srt/srt.h"

#include <stdexcept>
#include <string>

#include "mvdiff/common/parallel.h"
#include "mvdiff/common/random.h"
#include "mvdiff/diffcore/ops.h"
#include "mvdiff/nn/layers.h"

namespace mvdiff::srt {

namespace {

std::string enc(int layer) { return "srt/enc" + std::to_string(layer); }
std::string dec(int layer) { return "srt/dec" + std::to_string(layer); }

template <typename T>
Tensor<T> ray_feature_tensor(const std::vector<camera::Ray>& rays, int frequencies) {
  const std::size_t f = 6 * (1 + 2 * static_cast<std::size_t>(frequencies));
  Tensor<T> out({rays.size(), f});
  for (std::size_t r = 0; r < rays.size(); ++r) {
    const std::vector<double> e = encode_ray(rays[r], frequencies);
    for (std::size_t i = 0; i < f; ++i) out[r * f + i] = static_cast<T>(e[i]);
  }
  return out;
}

void check_views(const std::vector<PosedImage>& views, const SRTConfig& config) {
  if (views.empty()) throw std::invalid_argument("encode_views: need at least one view");
  for (const PosedImage& v : views) {
    if (v.image.width != config.image_size || v.image.height != config.image_size ||
        v.camera.intrinsics.width != config.image_size || v.camera.intrinsics.height != config.image_size) {
      throw ShapeError("encode_views: view resolution " + std::to_string(v.image.width) + "x" +
                       std::to_string(v.image.height) + " does not match configured " +
                       std::to_string(config.image_size));
    }
  }
}

}  // namespace

void SRTConfig::validate() const {
  if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0) {
    throw std::invalid_argument("srt: patch_size must divide image_size");
  }
  if (model_dim <= 0 || heads <= 0 || model_dim % heads != 0) {
    throw std::invalid_argument("srt: model_dim must be divisible by heads");
  }
  if (encoder_layers < 0 || decoder_layers < 1 || conv_channels <= 0 || mlp_ratio <= 0 || ray_frequencies < 0) {
    throw std::invalid_argument("srt: layer counts and widths must be positive");
  }
  if (!(sigma_px > 0)) throw std::invalid_argument("srt: sigma_px must be positive");
}

void to_json(nlohmann::json& j, const SRTConfig& c) {
  j = {{"image_size", c.image_size},         {"patch_size", c.patch_size},
       {"model_dim", c.model_dim},           {"encoder_layers", c.encoder_layers},
       {"decoder_layers", c.decoder_layers}, {"heads", c.heads},
       {"conv_channels", c.conv_channels},   {"mlp_ratio", c.mlp_ratio},
       {"ray_frequencies", c.ray_frequencies}, {"epipolar_enabled", c.epipolar_enabled},
       {"sigma_px", c.sigma_px},             {"bias_weight", c.bias_weight}};
}

void from_json(const nlohmann::json& j, SRTConfig& c) {
  c.image_size = j.at("image_size").get<int>();
  c.patch_size = j.at("patch_size").get<int>();
  c.model_dim = j.at("model_dim").get<int>();
  c.encoder_layers = j.at("encoder_layers").get<int>();
  c.decoder_layers = j.at("decoder_layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.conv_channels = j.at("conv_channels").get<int>();
  c.mlp_ratio = j.at("mlp_ratio").get<int>();
  c.ray_frequencies = j.at("ray_frequencies").get<int>();
  c.epipolar_enabled = j.at("epipolar_enabled").get<bool>();
  c.sigma_px = j.at("sigma_px").get<double>();
  c.bias_weight = j.at("bias_weight").get<double>();
}

PosedImage posed(const scenes::RenderedView& view) { return {view.image, view.camera}; }

template <typename T>
ParamStore<T> init_params(const SRTConfig& config, std::uint64_t seed) {
  config.validate();
  nn::Rng rng(derive_seed(seed, 0x5254));
  const auto d = static_cast<std::size_t>(config.model_dim);
  const auto c = static_cast<std::size_t>(config.conv_channels);
  const std::size_t hidden = d * static_cast<std::size_t>(config.mlp_ratio);
  ParamStore<T> p;
  nn::add_conv(p, "srt/stem", 3, c, 3, rng);
  nn::add_conv(p, "srt/patch", c, d, static_cast<std::size_t>(config.patch_size), rng);
  nn::add_linear(p, "srt/ray_embed", config.ray_features(), d, rng);
  for (int l = 0; l < config.encoder_layers; ++l) {
    nn::add_layer_norm(p, enc(l) + "/ln1", d);
    nn::add_attention(p, enc(l) + "/attn", d, rng);
    nn::add_layer_norm(p, enc(l) + "/ln2", d);
    nn::add_mlp(p, enc(l) + "/mlp", d, hidden, rng);
  }
  nn::add_layer_norm(p, "srt/enc_out", d);
  nn::add_linear(p, "srt/query_embed", config.ray_features(), d, rng);
  for (int l = 0; l < config.decoder_layers; ++l) {
    nn::add_layer_norm(p, dec(l) + "/ln1", d);
    nn::add_attention(p, dec(l) + "/attn", d, rng);
    nn::add_layer_norm(p, dec(l) + "/ln2", d);
    nn::add_mlp(p, dec(l) + "/mlp", d, hidden, rng);
  }
  nn::add_layer_norm(p, "srt/dec_out", d);
  // Zero weights: every ray starts at the background gray.
  nn::add_linear(p, "srt/head", d, 3, rng, 0.0, 0.5);
  return p;
}

std::vector<double> encode_ray(const camera::Ray& ray, int frequencies) {
  const camera::Vec3 o = ray.origin / kOriginScale;
  return nn::sinusoidal_encoding({o.x(), o.y(), o.z(), ray.direction.x(), ray.direction.y(), ray.direction.z()},
                                 frequencies);
}

template <typename T>
Tensor<T> epipolar_bias_matrix(const std::vector<PosedImage>& views, const SRTConfig& config) {
  const std::size_t p = config.tokens_per_view();
  const std::size_t n = views.size() * p;
  Tensor<T> bias({n, n});
  const camera::FeatureGrid grid{config.grid(), config.grid()};
  for (std::size_t i = 0; i < views.size(); ++i) {
    for (std::size_t j = 0; j < views.size(); ++j) {
      if (i == j) continue;
      const camera::EpipolarBiasMap map =
          camera::epipolar_bias(views[i].camera.pose(), views[j].camera.pose(), views[i].camera.intrinsics,
                                views[j].camera.intrinsics, grid, config.sigma_px, config.bias_weight);
      for (std::size_t a = 0; a < p; ++a) {
        for (std::size_t b = 0; b < p; ++b) bias[(i * p + a) * n + j * p + b] = static_cast<T>(map.at(a, b));
      }
    }
  }
  return bias;
}

template <typename T>
SetLatent<T> encode_views(Tape<T>& tape, const ParamStore<T>& params, const SRTConfig& config,
                          const std::vector<PosedImage>& views, const Tensor<T>* bias_override) {
  check_views(views, config);
  const std::size_t n = views.size();
  const auto s = static_cast<std::size_t>(config.image_size);
  const auto d = static_cast<std::size_t>(config.model_dim);
  const std::size_t p = config.tokens_per_view();

  Tensor<T> pixels({n, 3, s, s});
  for (std::size_t v = 0; v < n; ++v) {
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t y = 0; y < s; ++y) {
        for (std::size_t x = 0; x < s; ++x) {
          pixels[((v * 3 + c) * s + y) * s + x] =
              static_cast<T>(views[v].image.at(static_cast<int>(x), static_cast<int>(y), static_cast<int>(c)) - 0.5);
        }
      }
    }
  }
  Var<T> x = diff::gelu(nn::conv(tape, params, "srt/stem", tape.constant(std::move(pixels)), 1, 1));
  x = nn::conv(tape, params, "srt/patch", x, static_cast<std::size_t>(config.patch_size), 0);
  x = diff::reshape(diff::permute(diff::reshape(x, {n, d, p}), {0, 2, 1}), {n * p, d});

  SetLatent<T> z;
  std::vector<camera::Ray> rays;
  const camera::FeatureGrid grid{config.grid(), config.grid()};
  for (std::size_t v = 0; v < n; ++v) {
    const camera::CameraPose pose = views[v].camera.pose();
    for (std::size_t cell = 0; cell < p; ++cell) {
      rays.push_back(camera::ray_for_pixel(grid.token_center(cell, views[v].camera.intrinsics), pose,
                                           views[v].camera.intrinsics));
      z.provenance.push_back({v, cell});
    }
  }
  x = diff::add(x, nn::linear(tape, params, "srt/ray_embed",
                              tape.constant(ray_feature_tensor<T>(rays, config.ray_frequencies))));

  Var<T> bias;
  if (bias_override != nullptr) {
    if (bias_override->shape() != diff::Shape{n * p, n * p}) throw ShapeError("encode_views: bias override shape");
    bias = tape.constant(*bias_override);
  } else if (config.epipolar_enabled && n > 1) {
    bias = tape.constant(epipolar_bias_matrix<T>(views, config));
  }

  const auto heads = static_cast<std::size_t>(config.heads);
  for (int l = 0; l < config.encoder_layers; ++l) {
    Var<T> h = nn::layer_norm(tape, params, enc(l) + "/ln1", x);
    x = diff::add(x, nn::attention(tape, params, enc(l) + "/attn", h, h, heads, bias));
    x = diff::add(x, nn::mlp(tape, params, enc(l) + "/mlp", nn::layer_norm(tape, params, enc(l) + "/ln2", x)));
  }
  z.tokens = nn::layer_norm(tape, params, "srt/enc_out", x);
  return z;
}

template <typename T>
Var<T> decode_rays(Tape<T>& tape, const ParamStore<T>& params, const SRTConfig& config, const SetLatent<T>& z,
                   const std::vector<camera::Ray>& rays) {
  if (rays.empty()) throw std::invalid_argument("decode_rays: no rays");
  Var<T> q = nn::linear(tape, params, "srt/query_embed",
                        tape.constant(ray_feature_tensor<T>(rays, config.ray_frequencies)));
  const auto heads = static_cast<std::size_t>(config.heads);
  for (int l = 0; l < config.decoder_layers; ++l) {
    Var<T> h = nn::layer_norm(tape, params, dec(l) + "/ln1", q);
    q = diff::add(q, nn::attention(tape, params, dec(l) + "/attn", h, z.tokens, heads));
    q = diff::add(q, nn::mlp(tape, params, dec(l) + "/mlp", nn::layer_norm(tape, params, dec(l) + "/ln2", q)));
  }
  return nn::linear(tape, params, "srt/head", nn::layer_norm(tape, params, "srt/dec_out", q));
}

std::vector<camera::Ray> pixel_rays(const camera::CameraSpec& cam) {
  const camera::CameraPose pose = cam.pose();
  std::vector<camera::Ray> rays;
  rays.reserve(static_cast<std::size_t>(cam.intrinsics.width) * static_cast<std::size_t>(cam.intrinsics.height));
  for (int v = 0; v < cam.intrinsics.height; ++v) {
    for (int u = 0; u < cam.intrinsics.width; ++u) {
      rays.push_back(camera::ray_for_pixel({u + 0.5, v + 0.5}, pose, cam.intrinsics));
    }
  }
  return rays;
}

template <typename T>
Var<T> predict_latent_image(Tape<T>& tape, const ParamStore<T>& params, const SRTConfig& config,
                            const SetLatent<T>& z, const camera::CameraSpec& target) {
  const auto h = static_cast<std::size_t>(target.intrinsics.height);
  const auto w = static_cast<std::size_t>(target.intrinsics.width);
  return diff::reshape(decode_rays(tape, params, config, z, pixel_rays(target)), {h, w, 3});
}

template <typename T>
Var<T> recon_loss(Var<T> pred, const Tensor<T>& truth) {
  if (pred.shape() != truth.shape()) {
    throw ShapeError("recon_loss: prediction " + diff::shape_str(pred.shape()) + " vs truth " +
                     diff::shape_str(truth.shape()));
  }
  return diff::sum(diff::square(diff::sub(pred, pred.tape().constant(truth))));
}

std::vector<Image> render_views(const ParamStore<float>& params, const SRTConfig& config,
                                const std::vector<PosedImage>& inputs,
                                const std::vector<camera::CameraSpec>& targets) {
  Tape<float> tape;
  const SetLatent<float> z = encode_views(tape, params, config, inputs);
  std::vector<Image> out;
  for (const camera::CameraSpec& target : targets) {
    const Var<float> pred = predict_latent_image(tape, params, config, z, target);
    Image img(target.intrinsics.width, target.intrinsics.height);
    for (std::size_t i = 0; i < img.rgb.size(); ++i) img.rgb[i] = pred.value()[i];
    out.push_back(clamped(std::move(img)));
  }
  return out;
}

Image render_view(const ParamStore<float>& params, const SRTConfig& config, const std::vector<PosedImage>& inputs,
                  const camera::CameraSpec& target) {
  return render_views(params, config, inputs, {target}).front();
}

StepStats train_step(ParamStore<float>& params, const SRTConfig& config, const std::vector<Example>& batch,
                     const diff::AdamWOptions& optimizer, std::uint64_t seed, int rays_per_target) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  if (rays_per_target <= 0) throw std::invalid_argument("train_step: rays_per_target must be positive");
  const std::vector<std::string> names = params.names();
  std::vector<std::vector<Tensor<float>>> grads(batch.size());
  std::vector<StepStats> stats(batch.size());

  parallel_for(batch.size(), [&](std::size_t e) {
    const Example& ex = batch[e];
    std::mt19937_64 rng(derive_seed(seed, 0x7261, e));
    std::vector<camera::Ray> rays;
    std::vector<float> truth;
    for (const PosedImage& target : ex.targets) {
      const camera::CameraPose pose = target.camera.pose();
      std::uniform_int_distribution<int> px(0, target.image.width - 1), py(0, target.image.height - 1);
      for (int r = 0; r < rays_per_target; ++r) {
        const int x = px(rng), y = py(rng);
        rays.push_back(camera::ray_for_pixel({x + 0.5, y + 0.5}, pose, target.camera.intrinsics));
        for (int c = 0; c < 3; ++c) truth.push_back(target.image.at(x, y, c));
      }
    }
    Tape<float> tape;
    const SetLatent<float> z = encode_views(tape, params, config, ex.inputs);
    const Var<float> pred = decode_rays(tape, params, config, z, rays);
    const Var<float> loss = recon_loss(pred, Tensor<float>({rays.size(), 3}, std::move(truth)));
    tape.backward(loss);
    stats[e].loss = loss.value().item();
    stats[e].rays = rays.size();
    grads[e].reserve(names.size());
    for (const std::string& name : names) {
      const Tensor<float>* g = tape.param_grad(name);
      grads[e].push_back(g ? *g : Tensor<float>(params.value(name).shape()));
    }
  });

  StepStats total;
  for (std::size_t i = 0; i < names.size(); ++i) {
    Tensor<float> g = std::move(grads[0][i]);
    for (std::size_t e = 1; e < batch.size(); ++e) {
      for (std::size_t k = 0; k < g.numel(); ++k) g[k] += grads[e][i][k];
    }
    params.set_grad(names[i], std::move(g));
  }
  for (const StepStats& s : stats) {
    total.loss += s.loss;
    total.rays += s.rays;
  }
  total.mse = total.loss / static_cast<double>(3 * total.rays);
  diff::adamw_step(params, optimizer);
  return total;
}

#define MVDIFF_SRT_INSTANTIATE(T)                                                                                 \
  template ParamStore<T> init_params<T>(const SRTConfig&, std::uint64_t);                                        \
  template Tensor<T> epipolar_bias_matrix<T>(const std::vector<PosedImage>&, const SRTConfig&);                  \
  template SetLatent<T> encode_views<T>(Tape<T>&, const ParamStore<T>&, const SRTConfig&,                        \
                                        const std::vector<PosedImage>&, const Tensor<T>*);                       \
  template Var<T> decode_rays<T>(Tape<T>&, const ParamStore<T>&, const SRTConfig&, const SetLatent<T>&,          \
                                 const std::vector<camera::Ray>&);                                               \
  template Var<T> predict_latent_image<T>(Tape<T>&, const ParamStore<T>&, const SRTConfig&, const SetLatent<T>&, \
                                          const camera::CameraSpec&);                                            \
  template Var<T> recon_loss<T>(Var<T>, const Tensor<T>&);

MVDIFF_SRT_INSTANTIATE(float)
MVDIFF_SRT_INSTANTIATE(double)

}  // namespace mvdiff::srt
