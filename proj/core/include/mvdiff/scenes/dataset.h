// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvdiff/scenes/scene.h"

// On-disk layout:
//   <root>/manifest.json
//   <root>/<split>/<scene-id>/{view_k.ppm, view_k.json, spec.json, occupancy.bin}
namespace mvdiff::scenes {

enum class Split { kTrain, kTest };

const char* split_name(Split split);

struct DatasetOptions {
  std::uint64_t seed = 0;
  int train_scenes = 32;
  int test_scenes = 20;
  int train_views = 12;
  int difficulty_min = 1;
  int difficulty_max = 2;
  int voxel_resolution = 64;
  RigOptions rig;
};

void to_json(nlohmann::json& j, const DatasetOptions& o);
void from_json(const nlohmann::json& j, DatasetOptions& o);

struct SceneData {
  std::string id;
  SceneSpec spec;
  std::vector<RenderedView> views;
  VoxelGrid occupancy;
};

/// Deterministic in (options.seed, split, index). Training scenes use a
/// random training rig; test scenes use the fixed 16-view test rig.
SceneData make_scene(const DatasetOptions& options, Split split, int index);

struct SceneEntry {
  std::string id;
  std::vector<std::string> images;   // relative to the dataset root
  std::vector<std::string> cameras;
  std::string spec;
  std::string occupancy;
};

struct DatasetManifest {
  DatasetOptions options;
  std::vector<SceneEntry> train;
  std::vector<SceneEntry> test;

  const std::vector<SceneEntry>& entries(Split split) const { return split == Split::kTrain ? train : test; }

  // Every referenced file exists and view counts are uniform per split.
  void validate(const std::filesystem::path& root) const;
};

void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);

DatasetManifest write_dataset(const std::filesystem::path& root, const DatasetOptions& options);
DatasetManifest load_manifest(const std::filesystem::path& root);

/// Reads one scene back. Images come back 8-bit quantized.
SceneData load_scene(const std::filesystem::path& root, const SceneEntry& entry);

}  // namespace mvdiff::scenes
