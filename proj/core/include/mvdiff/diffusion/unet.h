// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "mvdiff/diffcore/param_store.h"
#include "mvdiff/diffcore/tape.h"
#include "mvdiff/diffusion/schedule.h"

// Noise predictor for jointly denoised views. Input per view is the noisy
// image concatenated with the SRT latent image (6 channels); output is the
// predicted noise (3 channels). At the attention resolutions, image tokens
// cross-attend to the scene latent z and self-attend across all views.
//
// Parameters are named "diffusion/...".
namespace mvdiff::diffusion {

using diff::ParamStore;
using diff::Tape;
using diff::Var;

struct UNetConfig {
  int image_size = 32;
  int base_channels = 32;
  std::vector<int> channel_mult = {1, 2, 2};
  std::vector<int> attention_resolutions = {8};
  int groups = 8;
  int heads = 4;
  int context_dim = 64;  // width of z tokens
  bool cross_attention_enabled = true;
  bool multiview_attention_enabled = true;

  static constexpr int kInputChannels = 6;
  static constexpr int kOutputChannels = 3;

  std::size_t embed_dim() const { return 4 * static_cast<std::size_t>(base_channels); }
  void validate() const;

  friend bool operator==(const UNetConfig&, const UNetConfig&) = default;
};

void to_json(nlohmann::json& j, const UNetConfig& c);
void from_json(const nlohmann::json& j, UNetConfig& c);

template <typename T>
ParamStore<T> init_unet_params(const UNetConfig& config, std::uint64_t seed);

/// noisy, latent: [V, 3, H, W]; z: [Nz, context_dim]; all views share t.
/// Returns the noise prediction [V, 3, H, W].
template <typename T>
Var<T> unet_forward(Tape<T>& tape, const ParamStore<T>& params, const UNetConfig& config, Var<T> noisy,
                    Var<T> latent, Var<T> z, int t);

/// Mean squared error between true and predicted noise.
template <typename T>
Var<T> vldm_loss(Var<T> predicted, const Tensor<T>& eps_true);

// Training ------------------------------------------------------------------

/// One scene worth of conditioning, images in [-1, 1].
struct Example {
  Tensor<float> x0;      // [V, 3, H, W] ground-truth target views
  Tensor<float> latent;  // [V, 3, H, W] SRT predictions at the same poses
  Tensor<float> z;       // [Nz, context_dim]
};

struct StepStats {
  double loss = 0.0;  // mean over the batch
};

/// Draws t uniformly in [0, T) and eps ~ N(0, I) per example, then applies
/// one AdamW step on the summed gradient of the mean loss.
StepStats train_step(ParamStore<float>& params, const UNetConfig& config, const NoiseSchedule& sched,
                     const std::vector<Example>& batch, const diff::AdamWOptions& optimizer, std::uint64_t seed);

/// Loss at fixed (t, eps) draws, no update. Used for held-out evaluation.
double evaluate_loss(const ParamStore<float>& params, const UNetConfig& config, const NoiseSchedule& sched,
                     const std::vector<Example>& batch, std::uint64_t seed, int draws_per_example = 4);

}  // namespace mvdiff::diffusion
