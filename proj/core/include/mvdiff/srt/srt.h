// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include <json.hpp>

#include "mvdiff/camera/camera.h"
#include "mvdiff/diffcore/param_store.h"
#include "mvdiff/diffcore/tape.h"
#include "mvdiff/scenes/scene.h"

// Scene representation transformer. A conv stem turns each posed view into
// (H/patch)^2 tokens with a ray positional encoding; an encoder of pre-norm
// self-attention layers mixes the tokens of all views (cross-view logits
// receive the epipolar bias) into the set latent z; a decoder answers ray
// queries by cross-attention into z.
//
// Parameters are named "srt/..." so they can share a checkpoint with the
// diffusion model.
namespace mvdiff::srt {

using diff::ParamStore;
using diff::Tape;
using diff::Tensor;
using diff::Var;

struct SRTConfig {
  int image_size = 32;
  int patch_size = 4;
  int model_dim = 64;
  int encoder_layers = 4;
  int decoder_layers = 2;
  int heads = 4;
  int conv_channels = 32;
  int mlp_ratio = 2;
  int ray_frequencies = 6;
  bool epipolar_enabled = true;
  double sigma_px = 2.0;     // feature-grid pixels
  double bias_weight = 1.0;

  int grid() const { return image_size / patch_size; }
  std::size_t tokens_per_view() const { return static_cast<std::size_t>(grid()) * static_cast<std::size_t>(grid()); }
  std::size_t ray_features() const { return 6 * (1 + 2 * static_cast<std::size_t>(ray_frequencies)); }
  void validate() const;  // throws std::invalid_argument

  friend bool operator==(const SRTConfig&, const SRTConfig&) = default;
};

void to_json(nlohmann::json& j, const SRTConfig& c);
void from_json(const nlohmann::json& j, SRTConfig& c);

struct TokenProvenance {
  std::size_t view = 0;
  std::size_t cell = 0;  // row-major position in the view's token grid
  friend bool operator==(const TokenProvenance&, const TokenProvenance&) = default;
};

template <typename T>
struct SetLatent {
  Var<T> tokens;  // [views * tokens_per_view, model_dim]
  std::vector<TokenProvenance> provenance;
};

/// Posed input for the encoder. Images are RGB in [0, 1].
struct PosedImage {
  Image image;
  camera::CameraSpec camera;
};

PosedImage posed(const scenes::RenderedView& view);

template <typename T>
ParamStore<T> init_params(const SRTConfig& config, std::uint64_t seed);

/// Ray positional encoding of origin / kOriginScale and direction.
std::vector<double> encode_ray(const camera::Ray& ray, int frequencies);
inline constexpr double kOriginScale = 4.0;

/// Additive encoder bias [N*P, N*P]: epipolar map on cross-view blocks,
/// zero on same-view blocks.
template <typename T>
Tensor<T> epipolar_bias_matrix(const std::vector<PosedImage>& views, const SRTConfig& config);

/// `bias_override`, when given, replaces the epipolar matrix regardless of
/// `epipolar_enabled` (used to check the ablation identity).
template <typename T>
SetLatent<T> encode_views(Tape<T>& tape, const ParamStore<T>& params, const SRTConfig& config,
                          const std::vector<PosedImage>& views, const Tensor<T>* bias_override = nullptr);

/// Decodes a batch of rays; returns [R, 3] (unclamped).
template <typename T>
Var<T> decode_rays(Tape<T>& tape, const ParamStore<T>& params, const SRTConfig& config, const SetLatent<T>& z,
                   const std::vector<camera::Ray>& rays);

/// Rays through every pixel center of a target view, row-major.
std::vector<camera::Ray> pixel_rays(const camera::CameraSpec& camera);

/// Full-grid decode at the target camera: [H, W, 3] (unclamped).
template <typename T>
Var<T> predict_latent_image(Tape<T>& tape, const ParamStore<T>& params, const SRTConfig& config,
                            const SetLatent<T>& z, const camera::CameraSpec& target);

/// Sum over rays of the squared color error.
template <typename T>
Var<T> recon_loss(Var<T> pred, const Tensor<T>& truth);

/// Inference helper: encode `inputs`, render `target`, clamp to [0, 1].
Image render_view(const ParamStore<float>& params, const SRTConfig& config, const std::vector<PosedImage>& inputs,
                  const camera::CameraSpec& target);

/// Several targets sharing one encoding.
std::vector<Image> render_views(const ParamStore<float>& params, const SRTConfig& config,
                                const std::vector<PosedImage>& inputs,
                                const std::vector<camera::CameraSpec>& targets);

// Training ------------------------------------------------------------------

struct Example {
  std::vector<PosedImage> inputs;
  std::vector<PosedImage> targets;
};

struct StepStats {
  double loss = 0.0;  // summed squared error over the sampled rays
  double mse = 0.0;   // per color channel
  std::size_t rays = 0;
};

/// One optimizer step over a batch of examples: `rays_per_target` uniformly
/// drawn pixels per target view, gradients summed over the batch.
StepStats train_step(ParamStore<float>& params, const SRTConfig& config, const std::vector<Example>& batch,
                     const diff::AdamWOptions& optimizer, std::uint64_t seed, int rays_per_target = 512);

}  // namespace mvdiff::srt
