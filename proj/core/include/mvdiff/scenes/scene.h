// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <vector>

#include <json.hpp>

#include "mvdiff/camera/camera_spec.h"
#include "mvdiff/common/image.h"
#include "mvdiff/common/voxel_grid.h"

namespace mvdiff::scenes {

using Vec3 = Eigen::Vector3d;

enum class PrimitiveKind { kSphere, kBox };

struct Primitive {
  PrimitiveKind kind = PrimitiveKind::kSphere;
  Vec3 center = Vec3::Zero();
  // Sphere: size.x() is the radius. Box: half extents along x, y, z.
  Vec3 size = Vec3::Constant(0.5);
  Rgb albedo = {0.8f, 0.2f, 0.2f};

  bool contains(const Vec3& p) const;
  // Nearest hit distance along the ray beyond t_min, with the surface normal.
  std::optional<double> intersect(const Vec3& origin, const Vec3& dir, Vec3* normal) const;
  // Distance from the origin to the farthest point of the primitive.
  double bounding_radius() const;
};

struct SceneSpec {
  std::uint64_t seed = 0;
  std::vector<Primitive> primitives;

  bool contains(const Vec3& p) const;
  void validate() const;  // at least one primitive, all inside [-1, 1]^3
};

inline constexpr Rgb kBackground = {0.5f, 0.5f, 0.5f};

struct RenderedView {
  Image image;
  camera::CameraSpec camera;
  Rgb background = kBackground;

  camera::CameraPose pose() const { return camera.pose(); }
  const camera::Intrinsics& intrinsics() const { return camera.intrinsics; }
};

/// Primitive count by difficulty: 1 -> 1-2, 2 -> 3-4, 3 -> 5-8.
/// The scene is centered and scaled so every primitive fits the unit ball.
SceneSpec generate_scene(std::uint64_t seed, int difficulty);

/// Nearest-hit ray casting with Lambertian shading (one directional light,
/// 0.3 ambient); misses show the background. `samples_per_axis` > 1 averages
/// a regular sub-pixel grid.
RenderedView render_view(const SceneSpec& spec, const camera::CameraSpec& camera, int samples_per_axis = 1);

/// Occupancy at cell centers over [-1, 1]^3.
VoxelGrid voxelize(const SceneSpec& spec, int resolution);

std::size_t foreground_pixel_count(const RenderedView& view, float tol = 0.05f);

// Orbit rigs ---------------------------------------------------------------

struct RigOptions {
  int image_size = 32;
  double focal = 32.0;
  double radius = 3.5;
};

inline constexpr double kTrainElevationMin = -10.0;
inline constexpr double kTrainElevationMax = 45.0;
inline constexpr int kTrainAzimuthCount = 8;
inline constexpr double kTestElevation = 30.0;
inline constexpr double kTestAzimuthStep = 22.5;
inline constexpr int kTestViewCount = 16;

/// Training cameras: azimuth drawn from the eight values k * 45 deg,
/// elevation uniform in [-10, 45] deg. Cameras whose render has no
/// foreground pixel are discarded and redrawn.
std::vector<camera::CameraSpec> training_rig(const SceneSpec& spec, std::uint64_t seed, int views,
                                             const RigOptions& options = {});

/// Evaluation cameras: 16 azimuths every 22.5 deg at 30 deg elevation.
std::vector<camera::CameraSpec> test_rig(const RigOptions& options = {});

void to_json(nlohmann::json& j, const SceneSpec& spec);
void from_json(const nlohmann::json& j, SceneSpec& spec);

}  // namespace mvdiff::scenes
