// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "mvdiff/common/image.h"
#include "mvdiff/diffusion/schedule.h"
#include "mvdiff/diffusion/unet.h"
#include "mvdiff/srt/srt.h"

// Glue between the SRT and the denoiser: conditioning tensors, joint DDIM
// sampling of several views, and candidate ranking.
namespace mvdiff::diffusion {

/// [0, 1] HWC image -> [3, H, W] tensor in [-1, 1].
Tensor<float> to_model_space(const Image& image);
/// [3, H, W] (or view v of [V, 3, H, W]) in [-1, 1] -> clamped [0, 1] image.
Image from_model_space(const Tensor<double>& x, std::size_t view = 0);

/// Stacks [3, H, W] tensors into [V, 3, H, W].
Tensor<float> stack_views(const std::vector<Tensor<float>>& views);

struct Conditioning {
  Tensor<float> z;        // [Nz, model_dim]
  Tensor<float> latents;  // [V, 3, H, W], model space
};

/// Encodes `inputs` once and renders the SRT prediction at each camera.
Conditioning condition(const srt::ParamStore<float>& srt_params, const srt::SRTConfig& srt_config,
                       const std::vector<srt::PosedImage>& inputs,
                       const std::vector<camera::CameraSpec>& cameras);

/// Training example: ground-truth targets paired with their conditioning.
Example make_example(const srt::ParamStore<float>& srt_params, const srt::SRTConfig& srt_config,
                     const srt::Example& views);

/// Noise predictor over the joint state, evaluated in single precision.
EpsModel unet_eps_model(const ParamStore<float>& params, const UNetConfig& config, const Conditioning& cond);

struct Models {
  const ParamStore<float>& srt_params;
  const srt::SRTConfig& srt_config;
  const ParamStore<float>& unet_params;
  const UNetConfig& unet_config;
  const NoiseSchedule& schedule;
};

inline constexpr int kDefaultCandidates = 5;

struct GenerateOptions {
  int candidates = kDefaultCandidates;
  SamplerOptions sampler;  // sampler.seed is the base seed for all candidates
};

struct Candidate {
  std::uint64_t seed = 0;
  std::vector<Image> targets;  // generated views at the target poses
  std::vector<Image> inputs;   // generated views at the input poses
  double score = 0.0;          // mean PSNR of `inputs` against the given input images
};

struct Generation {
  std::vector<Candidate> candidates;  // in generation order
  std::vector<std::size_t> ranking;   // indices into candidates, best first
  const Candidate& best() const { return candidates.at(ranking.front()); }
};

/// Jointly samples the target poses together with the input poses, one DDIM
/// run per candidate seed, and ranks candidates by how well the re-generated
/// input views match the given inputs. Throws std::invalid_argument without
/// inputs, targets, or candidates.
Generation generate_multiview(const Models& models, const std::vector<srt::PosedImage>& inputs,
                              const std::vector<camera::CameraSpec>& targets, const GenerateOptions& options = {});

}  // namespace mvdiff::diffusion
