// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#include "mvdiff/camera/camera.h"

#include <Eigen/Geometry>

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace mvdiff::camera {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return s;
}

}  // namespace

Intrinsics Intrinsics::centered(int width, int height, double focal) {
  Intrinsics k;
  k.fx = focal;
  k.fy = focal;
  k.cx = 0.5 * width;
  k.cy = 0.5 * height;
  k.width = width;
  k.height = height;
  k.validate();
  return k;
}

Mat3 Intrinsics::matrix() const {
  Mat3 k;
  k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
  return k;
}

void Intrinsics::validate() const {
  if (!(fx > 0) || !(fy > 0)) throw std::invalid_argument("intrinsics: focal lengths must be positive");
  if (width <= 0 || height <= 0) throw std::invalid_argument("intrinsics: image size must be positive");
  if (!(cx >= 0 && cx < width && cy >= 0 && cy < height)) {
    throw std::invalid_argument("intrinsics: principal point outside the image");
  }
}

bool CameraPose::is_valid(double tol) const {
  const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  return ortho < tol && std::abs(rotation.determinant() - 1.0) < tol && translation.allFinite();
}

CameraPose CameraPose::after(const CameraPose& first) const {
  CameraPose out;
  out.rotation = rotation * first.rotation;
  out.translation = rotation * first.translation + translation;
  return out;
}

CameraPose look_at_pose(double azimuth_deg, double elevation_deg, double radius) {
  if (!(radius > 0)) throw std::invalid_argument("look_at_pose: radius must be positive");
  if (!(std::abs(elevation_deg) < 90.0)) {
    throw GeometryError("look_at_pose: |elevation| must be below 90 degrees (up vector degenerates)");
  }
  const double a = azimuth_deg * kDegToRad;
  const double e = elevation_deg * kDegToRad;
  const Vec3 center = radius * Vec3(std::cos(e) * std::cos(a), std::cos(e) * std::sin(a), std::sin(e));
  const Vec3 forward = (-center).normalized();
  const Vec3 right = forward.cross(Vec3::UnitZ()).normalized();
  const Vec3 down = forward.cross(right);

  CameraPose pose;
  pose.rotation.row(0) = right.transpose();
  pose.rotation.row(1) = down.transpose();
  pose.rotation.row(2) = forward.transpose();
  pose.translation = -pose.rotation * center;
  return pose;
}

double depth_of(const Vec3& point, const CameraPose& pose) {
  return pose.to_camera(point).z();
}

Vec2 project(const Vec3& point, const CameraPose& pose, const Intrinsics& intr) {
  const Vec3 pc = pose.to_camera(point);
  if (!(pc.z() > 0)) throw GeometryError("project: point is not in front of the camera");
  return {intr.fx * pc.x() / pc.z() + intr.cx, intr.fy * pc.y() / pc.z() + intr.cy};
}

Ray ray_for_pixel(const Vec2& pixel, const CameraPose& pose, const Intrinsics& intr) {
  if (!(pixel.x() >= 0 && pixel.x() <= intr.width && pixel.y() >= 0 && pixel.y() <= intr.height)) {
    throw std::out_of_range("ray_for_pixel: pixel outside the image");
  }
  const Vec3 dir_cam((pixel.x() - intr.cx) / intr.fx, (pixel.y() - intr.cy) / intr.fy, 1.0);
  return {pose.center(), (pose.rotation.transpose() * dir_cam).normalized()};
}

CameraPose relative_pose(const CameraPose& pose_i, const CameraPose& pose_j) {
  CameraPose rel;
  rel.rotation = pose_j.rotation * pose_i.rotation.transpose();
  rel.translation = pose_j.translation - rel.rotation * pose_i.translation;
  return rel;
}

Mat3 fundamental_matrix(const CameraPose& pose_i, const CameraPose& pose_j, const Intrinsics& intr_i,
                        const Intrinsics& intr_j) {
  const Vec3 baseline = pose_i.center() - pose_j.center();
  const double scale = std::max({1.0, pose_i.center().norm(), pose_j.center().norm()});
  if (baseline.norm() <= 1e-12 * scale) {
    throw GeometryError("fundamental_matrix: camera centers coincide");
  }
  const CameraPose rel = relative_pose(pose_i, pose_j);
  const Mat3 essential = skew(rel.translation) * rel.rotation;
  return intr_j.matrix().inverse().transpose() * essential * intr_i.matrix().inverse();
}

double epipolar_distance(const Mat3& f, const Vec2& p_i, const Vec2& q_j) {
  const Vec3 line = f * p_i.homogeneous();
  const double norm = std::hypot(line.x(), line.y());
  if (norm == 0.0) return std::numeric_limits<double>::infinity();
  return std::abs(line.dot(q_j.homogeneous())) / norm;
}

Vec2 FeatureGrid::token_center(std::size_t token, const Intrinsics& intr) const {
  const double s = stride(intr);
  const auto col = static_cast<double>(token % static_cast<std::size_t>(cols));
  const auto row = static_cast<double>(token / static_cast<std::size_t>(cols));
  return {(col + 0.5) * s, (row + 0.5) * s};
}

double FeatureGrid::stride(const Intrinsics& intr) const {
  if (cols <= 0 || rows <= 0 || intr.width % cols != 0 || intr.height % rows != 0 ||
      intr.width / cols != intr.height / rows) {
    throw ShapeError("feature grid " + std::to_string(cols) + "x" + std::to_string(rows) +
                     " does not evenly divide image " + std::to_string(intr.width) + "x" +
                     std::to_string(intr.height) + " with square cells");
  }
  return static_cast<double>(intr.width / cols);
}

EpipolarBiasMap epipolar_bias_from_fundamental(const Mat3& f, const Intrinsics& intr_i, const Intrinsics& intr_j,
                                               const FeatureGrid& grid, double sigma, double weight) {
  if (!(sigma > 0)) throw std::invalid_argument("epipolar_bias: sigma must be positive");
  EpipolarBiasMap map;
  map.query_tokens = grid.tokens();
  map.key_tokens = grid.tokens();
  map.sigma = sigma;
  map.weight = weight;
  map.values.assign(map.query_tokens * map.key_tokens, 0.0);

  const double stride_j = grid.stride(intr_j);
  grid.stride(intr_i);
  const double inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t p = 0; p < map.query_tokens; ++p) {
    const Vec3 line = f * grid.token_center(p, intr_i).homogeneous();
    const double norm = std::hypot(line.x(), line.y());
    if (norm == 0.0) continue;
    for (std::size_t q = 0; q < map.key_tokens; ++q) {
      const double d_px = std::abs(line.dot(grid.token_center(q, intr_j).homogeneous())) / norm;
      const double d = d_px / stride_j;
      map.values[p * map.key_tokens + q] = weight * std::exp(-d * d * inv_two_sigma2);
    }
  }
  return map;
}

EpipolarBiasMap epipolar_bias(const CameraPose& pose_i, const CameraPose& pose_j, const Intrinsics& intr_i,
                              const Intrinsics& intr_j, const FeatureGrid& grid, double sigma, double weight) {
  Mat3 f;
  try {
    f = fundamental_matrix(pose_i, pose_j, intr_i, intr_j);
  } catch (const GeometryError&) {
    if (!(sigma > 0)) throw std::invalid_argument("epipolar_bias: sigma must be positive");
    EpipolarBiasMap map;
    map.query_tokens = grid.tokens();
    map.key_tokens = grid.tokens();
    map.sigma = sigma;
    map.weight = weight;
    map.values.assign(map.query_tokens * map.key_tokens, 0.0);
    map.degenerate = true;
    return map;
  }
  return epipolar_bias_from_fundamental(f, intr_i, intr_j, grid, sigma, weight);
}

}  // namespace mvdiff::camera
