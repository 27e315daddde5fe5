// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvdiff/diffcore/param_store.h"
#include "mvdiff/diffusion/pipeline.h"
#include "mvdiff/scenes/dataset.h"
#include "mvdiff/srt/srt.h"

namespace mvdiff::cli {

/// Thrown for malformed or invalid configuration; the message starts with the
/// offending field path.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int steps = 2000;
  double lr = 1e-4;
  double lr_final = 1e-5;
  double lr_drop_fraction = 0.8;  // lr_final from this fraction of the steps on
  double weight_decay = 0.01;
  int batch_scenes = 8;
  int input_views = 3;
  int target_views = 3;
  int rays_per_target = 512;  // SRT only
  int log_every = 50;

  double lr_at(int step) const;
};

struct ScheduleConfig {
  int steps = diffusion::kDefaultSteps;
  double beta_start = diffusion::kDefaultBetaStart;
  double beta_end = diffusion::kDefaultBetaEnd;
};

struct SamplerConfig {
  int steps = 50;
  double eta = 0.0;
  int candidates = diffusion::kDefaultCandidates;
};

struct EvalConfig {
  int scenes = 20;        // first N test scenes
  int input_views = 1;    // reference views taken from the test rig
  int target_views = 5;   // held-out test-rig views generated per scene
  int voxel_resolution = 64;
  double foreground_tol = 0.05;
  int chamfer_samples = 10000;
};

struct AblateConfig {
  std::string toggle = "epipolar";  // "epipolar" | "multiview"
  bool diffusion = true;            // false: compare SRT renders only
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string data_dir = "data";
  scenes::DatasetOptions dataset;
  srt::SRTConfig srt;
  diffusion::UNetConfig unet;
  ScheduleConfig schedule;
  TrainConfig train_srt;
  TrainConfig train_diff;
  SamplerConfig sampler;
  EvalConfig eval;
  AblateConfig ablate;

  /// Cross-field checks; throws ConfigError naming the field.
  void validate() const;
};

nlohmann::json to_json(const RunConfig& config);

/// Parses a (possibly partial) config over the defaults. Unknown keys and
/// type mismatches throw ConfigError with the dotted field path.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::string& path);
/// Raw document; throws ConfigError when unreadable or not JSON.
nlohmann::json read_config_document(const std::string& path);

/// Applies "a.b.c=value" to a config document. The value is parsed as JSON
/// when possible, otherwise taken as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Stable, pretty-printed echo; parsing it back reproduces the config.
std::string dump_config(const RunConfig& config);

}  // namespace mvdiff::cli
