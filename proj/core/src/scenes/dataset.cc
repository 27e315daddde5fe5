// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#include "mvdiff/scenes/dataset.h"

#include <cstdio>
#include <fstream>
#include <random>
#include <stdexcept>

#include "mvdiff/common/parallel.h"
#include "mvdiff/common/random.h"
#include "mvdiff/scenes/ppm.h"

namespace mvdiff::scenes {

namespace fs = std::filesystem;

namespace {

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  out << j.dump(2) << '\n';
}

std::string scene_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%04d", index);
  return buf;
}

}  // namespace

const char* split_name(Split split) {
  return split == Split::kTrain ? "train" : "test";
}

void to_json(nlohmann::json& j, const DatasetOptions& o) {
  j = nlohmann::json{{"seed", o.seed},
                     {"train_scenes", o.train_scenes},
                     {"test_scenes", o.test_scenes},
                     {"train_views", o.train_views},
                     {"difficulty_min", o.difficulty_min},
                     {"difficulty_max", o.difficulty_max},
                     {"voxel_resolution", o.voxel_resolution},
                     {"image_size", o.rig.image_size},
                     {"focal", o.rig.focal},
                     {"radius", o.rig.radius}};
}

void from_json(const nlohmann::json& j, DatasetOptions& o) {
  j.at("seed").get_to(o.seed);
  j.at("train_scenes").get_to(o.train_scenes);
  j.at("test_scenes").get_to(o.test_scenes);
  j.at("train_views").get_to(o.train_views);
  j.at("difficulty_min").get_to(o.difficulty_min);
  j.at("difficulty_max").get_to(o.difficulty_max);
  j.at("voxel_resolution").get_to(o.voxel_resolution);
  j.at("image_size").get_to(o.rig.image_size);
  j.at("focal").get_to(o.rig.focal);
  j.at("radius").get_to(o.rig.radius);
}

SceneData make_scene(const DatasetOptions& options, Split split, int index) {
  if (options.difficulty_min < 1 || options.difficulty_max > 3 || options.difficulty_min > options.difficulty_max) {
    throw std::invalid_argument("dataset difficulty range must lie within 1..3");
  }
  const std::uint64_t seed = derive_seed(options.seed, split == Split::kTrain ? 1 : 2, static_cast<std::uint64_t>(index));
  std::mt19937_64 rng(seed);
  const int difficulty = std::uniform_int_distribution<int>(options.difficulty_min, options.difficulty_max)(rng);

  SceneData scene;
  scene.id = scene_id(index);
  scene.spec = generate_scene(seed, difficulty);
  const auto rig = split == Split::kTrain ? training_rig(scene.spec, seed, options.train_views, options.rig)
                                          : test_rig(options.rig);
  for (const auto& cam : rig) scene.views.push_back(render_view(scene.spec, cam));
  scene.occupancy = voxelize(scene.spec, options.voxel_resolution);
  return scene;
}

void DatasetManifest::validate(const fs::path& root) const {
  for (Split split : {Split::kTrain, Split::kTest}) {
    const auto& list = entries(split);
    for (const SceneEntry& e : list) {
      if (e.images.size() != list.front().images.size() || e.cameras.size() != e.images.size()) {
        throw FormatError(std::string("non-uniform view counts in split ") + split_name(split));
      }
      std::vector<std::string> files = e.images;
      files.insert(files.end(), e.cameras.begin(), e.cameras.end());
      files.push_back(e.spec);
      files.push_back(e.occupancy);
      for (const auto& f : files) {
        if (!fs::exists(root / f)) throw FormatError("manifest references missing file " + (root / f).string());
      }
    }
  }
}

void to_json(nlohmann::json& j, const DatasetManifest& m) {
  auto entries_json = [](const std::vector<SceneEntry>& list) {
    nlohmann::json arr = nlohmann::json::array();
    for (const SceneEntry& e : list) {
      arr.push_back({{"id", e.id}, {"images", e.images}, {"cameras", e.cameras}, {"spec", e.spec}, {"occupancy", e.occupancy}});
    }
    return arr;
  };
  j = nlohmann::json{{"version", 1}, {"options", m.options}, {"splits", {{"train", entries_json(m.train)}, {"test", entries_json(m.test)}}}};
}

void from_json(const nlohmann::json& j, DatasetManifest& m) {
  m.options = j.at("options").get<DatasetOptions>();
  auto read = [](const nlohmann::json& arr) {
    std::vector<SceneEntry> out;
    for (const auto& ej : arr) {
      SceneEntry e;
      ej.at("id").get_to(e.id);
      ej.at("images").get_to(e.images);
      ej.at("cameras").get_to(e.cameras);
      ej.at("spec").get_to(e.spec);
      ej.at("occupancy").get_to(e.occupancy);
      out.push_back(std::move(e));
    }
    return out;
  };
  m.train = read(j.at("splits").at("train"));
  m.test = read(j.at("splits").at("test"));
}

DatasetManifest write_dataset(const fs::path& root, const DatasetOptions& options) {
  DatasetManifest manifest;
  manifest.options = options;
  for (Split split : {Split::kTrain, Split::kTest}) {
    const int count = split == Split::kTrain ? options.train_scenes : options.test_scenes;
    std::vector<SceneEntry> entries(static_cast<std::size_t>(count));
    parallel_for(entries.size(), [&](std::size_t i) {
      const SceneData scene = make_scene(options, split, static_cast<int>(i));
      const fs::path rel = fs::path(split_name(split)) / scene.id;
      fs::create_directories(root / rel);
      SceneEntry& e = entries[i];
      e.id = scene.id;
      for (std::size_t k = 0; k < scene.views.size(); ++k) {
        const std::string stem = "view_" + std::to_string(k);
        save_ppm(root / rel / (stem + ".ppm"), scene.views[k].image);
        write_json(root / rel / (stem + ".json"), scene.views[k].camera);
        e.images.push_back((rel / (stem + ".ppm")).generic_string());
        e.cameras.push_back((rel / (stem + ".json")).generic_string());
      }
      write_json(root / rel / "spec.json", scene.spec);
      save_occupancy(root / rel / "occupancy.bin", scene.occupancy);
      e.spec = (rel / "spec.json").generic_string();
      e.occupancy = (rel / "occupancy.bin").generic_string();
    });
    (split == Split::kTrain ? manifest.train : manifest.test) = std::move(entries);
  }
  write_json(root / "manifest.json", manifest);
  return manifest;
}

DatasetManifest load_manifest(const fs::path& root) {
  DatasetManifest m;
  try {
    m = read_json(root / "manifest.json").get<DatasetManifest>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("invalid manifest: " + std::string(e.what()));
  }
  m.validate(root);
  return m;
}

SceneData load_scene(const fs::path& root, const SceneEntry& entry) {
  SceneData scene;
  scene.id = entry.id;
  try {
    scene.spec = read_json(root / entry.spec).get<SceneSpec>();
    for (std::size_t k = 0; k < entry.images.size(); ++k) {
      RenderedView view;
      view.image = load_ppm(root / entry.images[k]);
      view.camera = read_json(root / entry.cameras[k]).get<camera::CameraSpec>();
      scene.views.push_back(std::move(view));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("scene " + entry.id + ": " + e.what());
  }
  scene.occupancy = load_occupancy(root / entry.occupancy);
  return scene;
}

}  // namespace mvdiff::scenes
