// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#include "mvdiff/camera/camera_spec.h"

namespace mvdiff::camera {

void to_json(nlohmann::json& j, const CameraSpec& spec) {
  const Intrinsics& k = spec.intrinsics;
  j = nlohmann::json{{"azimuth_deg", spec.azimuth_deg},
                     {"elevation_deg", spec.elevation_deg},
                     {"radius", spec.radius},
                     {"fx", k.fx},
                     {"fy", k.fy},
                     {"cx", k.cx},
                     {"cy", k.cy},
                     {"width", k.width},
                     {"height", k.height}};
}

void from_json(const nlohmann::json& j, CameraSpec& spec) {
  j.at("azimuth_deg").get_to(spec.azimuth_deg);
  j.at("elevation_deg").get_to(spec.elevation_deg);
  j.at("radius").get_to(spec.radius);
  Intrinsics& k = spec.intrinsics;
  j.at("fx").get_to(k.fx);
  j.at("fy").get_to(k.fy);
  j.at("cx").get_to(k.cx);
  j.at("cy").get_to(k.cy);
  j.at("width").get_to(k.width);
  j.at("height").get_to(k.height);
  k.validate();
}

}  // namespace mvdiff::camera
