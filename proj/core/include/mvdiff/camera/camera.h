// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <vector>

#include "mvdiff/common/error.h"

// Pinhole camera algebra and two-view epipolar geometry.
//
// Conventions: right-handed world with +z up. In camera coordinates x points
// right, y points down and the camera looks down +z. A pose maps world
// points into the camera frame: X_cam = R * X_world + t. Pixel (u, v) covers
// [u, u+1) x [v, v+1); the principal point (cx, cy) is in the same
// continuous coordinates.
namespace mvdiff::camera {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  // Square-pixel camera with the principal point at the image center.
  static Intrinsics centered(int width, int height, double focal);

  Mat3 matrix() const;
  void validate() const;  // throws std::invalid_argument

  friend bool operator==(const Intrinsics&, const Intrinsics&) = default;
};

/// World-to-camera rigid transform.
struct CameraPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 center() const { return -rotation.transpose() * translation; }
  Vec3 optical_axis() const { return rotation.row(2).transpose(); }
  Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }

  // Orthonormal with det +1 within `tol`.
  bool is_valid(double tol = 1e-6) const;

  // (this ∘ first): applies `first`, then this transform.
  CameraPose after(const CameraPose& first) const;
};

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit length

  Vec3 at(double depth) const { return origin + depth * direction; }
};

/// Camera on a sphere of `radius` looking at the origin with +z as up
/// reference. Center = radius * (cos e cos a, cos e sin a, sin e).
CameraPose look_at_pose(double azimuth_deg, double elevation_deg, double radius);

Vec2 project(const Vec3& point, const CameraPose& pose, const Intrinsics& intr);

// Depth of a world point along the optical axis.
double depth_of(const Vec3& point, const CameraPose& pose);

Ray ray_for_pixel(const Vec2& pixel, const CameraPose& pose, const Intrinsics& intr);

/// Maps camera-i coordinates to camera-j coordinates.
CameraPose relative_pose(const CameraPose& pose_i, const CameraPose& pose_j);

/// F with x_jᵀ F x_i = 0 for corresponding pixels (homogeneous).
/// Throws GeometryError when the camera centers coincide.
Mat3 fundamental_matrix(const CameraPose& pose_i, const CameraPose& pose_j, const Intrinsics& intr_i,
                        const Intrinsics& intr_j);

/// Perpendicular distance in view-j pixels from q to the epipolar line F·p.
/// Returns +inf when p maps to a degenerate (zero) line.
double epipolar_distance(const Mat3& f, const Vec2& p_i, const Vec2& q_j);

/// Additive attention bias between the feature tokens of two views.
///
/// Row p is a query token of view i, column q a key token of view j;
/// values[p * key_tokens + q] = weight * exp(-d^2 / (2 sigma^2)) where d is
/// the distance from q to the epipolar line of p in feature-grid pixels.
struct EpipolarBiasMap {
  std::size_t query_tokens = 0;
  std::size_t key_tokens = 0;
  std::vector<double> values;
  double sigma = 2.0;
  double weight = 1.0;
  bool degenerate = false;  // coincident centers; values are all zero

  double at(std::size_t p, std::size_t q) const { return values[p * key_tokens + q]; }
};

struct FeatureGrid {
  int cols = 8;
  int rows = 8;

  std::size_t tokens() const { return static_cast<std::size_t>(cols) * static_cast<std::size_t>(rows); }
  // Full-image pixel coordinates of a token center.
  Vec2 token_center(std::size_t token, const Intrinsics& intr) const;
  // Image pixels per feature-grid pixel; throws if the grid does not divide the image.
  double stride(const Intrinsics& intr) const;
};

EpipolarBiasMap epipolar_bias(const CameraPose& pose_i, const CameraPose& pose_j, const Intrinsics& intr_i,
                              const Intrinsics& intr_j, const FeatureGrid& grid, double sigma = 2.0,
                              double weight = 1.0);

/// Same map from an explicit fundamental matrix (view i -> lines in view j).
EpipolarBiasMap epipolar_bias_from_fundamental(const Mat3& f, const Intrinsics& intr_i, const Intrinsics& intr_j,
                                               const FeatureGrid& grid, double sigma = 2.0, double weight = 1.0);

}  // namespace mvdiff::camera
