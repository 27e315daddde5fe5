// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <json.hpp>

#include "mvdiff/camera/camera.h"

namespace mvdiff::camera {

/// Orbit camera description; serialized as
/// {azimuth_deg, elevation_deg, radius, fx, fy, cx, cy, width, height}.
struct CameraSpec {
  double azimuth_deg = 0.0;
  double elevation_deg = 0.0;
  double radius = 4.0;
  Intrinsics intrinsics;

  CameraPose pose() const { return look_at_pose(azimuth_deg, elevation_deg, radius); }

  friend bool operator==(const CameraSpec&, const CameraSpec&) = default;
};

void to_json(nlohmann::json& j, const CameraSpec& spec);
void from_json(const nlohmann::json& j, CameraSpec& spec);

}  // namespace mvdiff::camera
