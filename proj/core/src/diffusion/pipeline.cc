// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#include "mvdiff/diffusion/pipeline.h"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "mvdiff/common/error.h"
#include "mvdiff/common/parallel.h"
#include "mvdiff/common/random.h"
#include "mvdiff/metrics/metrics.h"

namespace mvdiff::diffusion {

Tensor<float> to_model_space(const Image& image) {
  const auto w = static_cast<std::size_t>(image.width), h = static_cast<std::size_t>(image.height);
  Tensor<float> out({3, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        out[(c * h + y) * w + x] = 2.0f * image.rgb[(y * w + x) * 3 + c] - 1.0f;
      }
    }
  }
  return out;
}

Image from_model_space(const Tensor<double>& x, std::size_t view) {
  const bool batched = x.rank() == 4;
  if ((!batched && x.rank() != 3) || x.dim(batched ? 1 : 0) != 3) {
    throw ShapeError("from_model_space: expected [3, H, W] or [V, 3, H, W], got " + diff::shape_str(x.shape()));
  }
  const std::size_t h = x.dim(batched ? 2 : 1), w = x.dim(batched ? 3 : 2);
  if (view >= (batched ? x.dim(0) : 1)) throw std::out_of_range("from_model_space: view index out of range");
  const std::size_t base = view * 3 * h * w;
  Image img(static_cast<int>(w), static_cast<int>(h));
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t xx = 0; xx < w; ++xx) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = 0.5 * (x[base + (c * h + y) * w + xx] + 1.0);
        img.rgb[(y * w + xx) * 3 + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return img;
}

Tensor<float> stack_views(const std::vector<Tensor<float>>& views) {
  if (views.empty()) throw std::invalid_argument("stack_views: no views");
  diff::Shape shape = views.front().shape();
  const std::size_t per = views.front().numel();
  shape.insert(shape.begin(), views.size());
  Tensor<float> out(shape);
  for (std::size_t v = 0; v < views.size(); ++v) {
    if (views[v].shape() != views.front().shape()) throw ShapeError("stack_views: views differ in shape");
    std::copy(views[v].storage().begin(), views[v].storage().end(), out.storage().begin() + v * per);
  }
  return out;
}

Conditioning condition(const srt::ParamStore<float>& srt_params, const srt::SRTConfig& srt_config,
                       const std::vector<srt::PosedImage>& inputs,
                       const std::vector<camera::CameraSpec>& cameras) {
  Tape<float> tape;
  const srt::SetLatent<float> z = srt::encode_views(tape, srt_params, srt_config, inputs);
  std::vector<Tensor<float>> latents;
  for (const camera::CameraSpec& cam : cameras) {
    const Var<float> pred = srt::predict_latent_image(tape, srt_params, srt_config, z, cam);
    Image img(cam.intrinsics.width, cam.intrinsics.height);
    for (std::size_t i = 0; i < img.rgb.size(); ++i) img.rgb[i] = pred.value()[i];
    latents.push_back(to_model_space(clamped(std::move(img))));
  }
  return {z.tokens.value(), stack_views(latents)};
}

Example make_example(const srt::ParamStore<float>& srt_params, const srt::SRTConfig& srt_config,
                     const srt::Example& views) {
  std::vector<camera::CameraSpec> cams;
  std::vector<Tensor<float>> truth;
  for (const srt::PosedImage& t : views.targets) {
    cams.push_back(t.camera);
    truth.push_back(to_model_space(t.image));
  }
  Conditioning cond = condition(srt_params, srt_config, views.inputs, cams);
  return {stack_views(truth), std::move(cond.latents), std::move(cond.z)};
}

EpsModel unet_eps_model(const ParamStore<float>& params, const UNetConfig& config, const Conditioning& cond) {
  return [&params, &config, &cond](const Tensor<double>& x, int t) {
    Tensor<float> xf(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) xf[i] = static_cast<float>(x[i]);
    Tape<float> tape;
    const Var<float> eps = unet_forward(tape, params, config, tape.constant(std::move(xf)),
                                        tape.constant(cond.latents), tape.constant(cond.z), t);
    Tensor<double> out(x.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = eps.value()[i];
    return out;
  };
}

Generation generate_multiview(const Models& models, const std::vector<srt::PosedImage>& inputs,
                              const std::vector<camera::CameraSpec>& targets, const GenerateOptions& options) {
  if (inputs.empty()) throw std::invalid_argument("generate_multiview: at least one input view is required");
  if (targets.empty()) throw std::invalid_argument("generate_multiview: at least one target pose is required");
  if (options.candidates < 1) throw std::invalid_argument("generate_multiview: candidates must be >= 1");

  // Targets first, then the input poses that serve as the ranking proxy.
  std::vector<camera::CameraSpec> cams = targets;
  for (const srt::PosedImage& in : inputs) cams.push_back(in.camera);
  const Conditioning cond = condition(models.srt_params, models.srt_config, inputs, cams);
  const EpsModel model = unet_eps_model(models.unet_params, models.unet_config, cond);

  Generation gen;
  gen.candidates.resize(static_cast<std::size_t>(options.candidates));
  parallel_for(gen.candidates.size(), [&](std::size_t c) {
    SamplerOptions sampler = options.sampler;
    sampler.seed = derive_seed(options.sampler.seed, 0x6376, c);
    const Tensor<double> x = ddim_sample(models.schedule, model, cond.latents.shape(), sampler);
    Candidate& cand = gen.candidates[c];
    cand.seed = sampler.seed;
    for (std::size_t v = 0; v < targets.size(); ++v) cand.targets.push_back(from_model_space(x, v));
    double total = 0;
    for (std::size_t v = 0; v < inputs.size(); ++v) {
      cand.inputs.push_back(from_model_space(x, targets.size() + v));
      total += metrics::psnr(cand.inputs.back(), inputs[v].image);
    }
    cand.score = total / static_cast<double>(inputs.size());
  });

  gen.ranking.resize(gen.candidates.size());
  std::iota(gen.ranking.begin(), gen.ranking.end(), 0);
  std::stable_sort(gen.ranking.begin(), gen.ranking.end(), [&](std::size_t a, std::size_t b) {
    return gen.candidates[a].score > gen.candidates[b].score;
  });
  return gen;
}

}  // namespace mvdiff::diffusion
