// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#include "mvdiff/scenes/scene.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "mvdiff/common/random.h"

namespace mvdiff::scenes {

namespace {

constexpr double kAmbient = 0.3;
constexpr double kHitEpsilon = 1e-9;

const Vec3& light_direction() {
  static const Vec3 dir = Vec3(0.35, 0.25, 0.9).normalized();
  return dir;
}

}  // namespace

bool Primitive::contains(const Vec3& p) const {
  const Vec3 d = p - center;
  if (kind == PrimitiveKind::kSphere) return d.squaredNorm() <= size.x() * size.x();
  return std::abs(d.x()) <= size.x() && std::abs(d.y()) <= size.y() && std::abs(d.z()) <= size.z();
}

std::optional<double> Primitive::intersect(const Vec3& origin, const Vec3& dir, Vec3* normal) const {
  const Vec3 oc = origin - center;
  if (kind == PrimitiveKind::kSphere) {
    const double r = size.x();
    const double b = oc.dot(dir);
    const double c = oc.squaredNorm() - r * r;
    const double disc = b * b - c;
    if (disc < 0) return std::nullopt;
    const double sq = std::sqrt(disc);
    double t = -b - sq;
    if (t <= kHitEpsilon) t = -b + sq;
    if (t <= kHitEpsilon) return std::nullopt;
    if (normal) *normal = (oc + t * dir).normalized();
    return t;
  }
  // slab test
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  int near_axis = 0;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dir[a]) < 1e-15) {
      if (std::abs(oc[a]) > size[a]) return std::nullopt;
      continue;
    }
    double t0 = (-size[a] - oc[a]) / dir[a];
    double t1 = (size[a] - oc[a]) / dir[a];
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > t_near) {
      t_near = t0;
      near_axis = a;
    }
    t_far = std::min(t_far, t1);
  }
  if (t_near > t_far || t_far <= kHitEpsilon) return std::nullopt;
  if (t_near <= kHitEpsilon) return std::nullopt;  // origin inside the box; cameras never are
  if (normal) {
    *normal = Vec3::Zero();
    (*normal)[near_axis] = dir[near_axis] > 0 ? -1.0 : 1.0;
  }
  return t_near;
}

double Primitive::bounding_radius() const {
  if (kind == PrimitiveKind::kSphere) return center.norm() + size.x();
  double best = 0;
  for (int corner = 0; corner < 8; ++corner) {
    const Vec3 sign((corner & 1) ? 1.0 : -1.0, (corner & 2) ? 1.0 : -1.0, (corner & 4) ? 1.0 : -1.0);
    best = std::max(best, (center + sign.cwiseProduct(size)).norm());
  }
  return best;
}

bool SceneSpec::contains(const Vec3& p) const {
  return std::any_of(primitives.begin(), primitives.end(), [&](const Primitive& q) { return q.contains(p); });
}

void SceneSpec::validate() const {
  if (primitives.empty()) throw std::invalid_argument("scene has no primitives");
  for (const Primitive& p : primitives) {
    const Vec3 ext = p.kind == PrimitiveKind::kSphere ? Vec3::Constant(p.size.x()) : p.size;
    if (((p.center - ext).array() < -1.0 - 1e-12).any() || ((p.center + ext).array() > 1.0 + 1e-12).any()) {
      throw std::invalid_argument("scene primitive leaves the [-1, 1]^3 cube");
    }
  }
}

SceneSpec generate_scene(std::uint64_t seed, int difficulty) {
  if (difficulty < 1 || difficulty > 3) throw std::invalid_argument("difficulty must be 1, 2 or 3");
  std::mt19937_64 rng(derive_seed(seed, 0x5CE11E));
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  static constexpr int kMinCount[] = {1, 3, 5};
  static constexpr int kMaxCount[] = {2, 4, 8};
  const int count = std::uniform_int_distribution<int>(kMinCount[difficulty - 1], kMaxCount[difficulty - 1])(rng);

  SceneSpec spec;
  spec.seed = seed;
  for (int i = 0; i < count; ++i) {
    Primitive p;
    p.kind = uniform(0, 1) < 0.5 ? PrimitiveKind::kSphere : PrimitiveKind::kBox;
    if (p.kind == PrimitiveKind::kSphere) {
      p.size = Vec3::Constant(uniform(0.3, 0.7));
    } else {
      p.size = Vec3(uniform(0.2, 0.6), uniform(0.2, 0.6), uniform(0.2, 0.6));
    }
    const double spread = count == 1 ? 0.0 : 0.45;
    p.center = Vec3(uniform(-spread, spread), uniform(-spread, spread), uniform(-spread, spread));
    // One dim channel keeps every shade far from the gray background.
    const int dim_channel = std::uniform_int_distribution<int>(0, 2)(rng);
    for (int c = 0; c < 3; ++c) {
      p.albedo[c] = static_cast<float>(c == dim_channel ? uniform(0.0, 0.15) : uniform(0.35, 1.0));
    }
    spec.primitives.push_back(p);
  }

  // Center the bounding box on the origin, then fit the unit ball.
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (const Primitive& p : spec.primitives) {
    const Vec3 ext = p.kind == PrimitiveKind::kSphere ? Vec3::Constant(p.size.x()) : p.size;
    lo = lo.cwiseMin(p.center - ext);
    hi = hi.cwiseMax(p.center + ext);
  }
  const Vec3 mid = 0.5 * (lo + hi);
  double reach = 0;
  for (Primitive& p : spec.primitives) {
    p.center -= mid;
    reach = std::max(reach, p.bounding_radius());
  }
  if (reach > 1.0) {
    const double s = 1.0 / reach;
    for (Primitive& p : spec.primitives) {
      p.center *= s;
      p.size *= s;
    }
  }
  spec.validate();
  return spec;
}

RenderedView render_view(const SceneSpec& spec, const camera::CameraSpec& cam, int samples_per_axis) {
  if (samples_per_axis < 1) throw std::invalid_argument("samples_per_axis must be >= 1");
  cam.intrinsics.validate();
  const camera::CameraPose pose = cam.pose();
  const camera::Intrinsics& k = cam.intrinsics;
  RenderedView view;
  view.camera = cam;
  view.image = Image(k.width, k.height, kBackground);
  const Vec3 origin = pose.center();
  const Eigen::Matrix3d cam_to_world = pose.rotation.transpose();
  const double inv_samples = 1.0 / (samples_per_axis * samples_per_axis);

  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      Eigen::Vector3d color = Eigen::Vector3d::Zero();
      for (int sy = 0; sy < samples_per_axis; ++sy) {
        for (int sx = 0; sx < samples_per_axis; ++sx) {
          const double u = x + (sx + 0.5) / samples_per_axis;
          const double v = y + (sy + 0.5) / samples_per_axis;
          const Vec3 dir = (cam_to_world * Vec3((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0)).normalized();
          double best = std::numeric_limits<double>::infinity();
          const Primitive* hit = nullptr;
          Vec3 hit_normal;
          for (const Primitive& p : spec.primitives) {
            Vec3 n;
            if (auto t = p.intersect(origin, dir, &n); t && *t < best) {
              best = *t;
              hit = &p;
              hit_normal = n;
            }
          }
          if (hit) {
            const double shade = std::min(1.0, kAmbient + (1.0 - kAmbient) * std::max(0.0, hit_normal.dot(light_direction())));
            for (int c = 0; c < 3; ++c) color[c] += hit->albedo[c] * shade;
          } else {
            for (int c = 0; c < 3; ++c) color[c] += kBackground[c];
          }
        }
      }
      for (int c = 0; c < 3; ++c) view.image.at(x, y, c) = static_cast<float>(color[c] * inv_samples);
    }
  }
  return view;
}

VoxelGrid voxelize(const SceneSpec& spec, int resolution) {
  if (resolution < 8) throw std::invalid_argument("voxelize: resolution must be >= 8");
  VoxelGrid grid(resolution);
  for (int z = 0; z < resolution; ++z) {
    for (int y = 0; y < resolution; ++y) {
      for (int x = 0; x < resolution; ++x) grid.set(x, y, z, spec.contains(grid.cell_center(x, y, z)));
    }
  }
  return grid;
}

std::size_t foreground_pixel_count(const RenderedView& view, float tol) {
  std::size_t n = 0;
  for (int y = 0; y < view.image.height; ++y) {
    for (int x = 0; x < view.image.width; ++x) {
      float dev = 0;
      for (int c = 0; c < 3; ++c) dev = std::max(dev, std::abs(view.image.at(x, y, c) - view.background[c]));
      n += dev > tol ? 1 : 0;
    }
  }
  return n;
}

std::vector<camera::CameraSpec> training_rig(const SceneSpec& spec, std::uint64_t seed, int views,
                                             const RigOptions& options) {
  std::mt19937_64 rng(derive_seed(seed, 0x7EA1));
  std::uniform_int_distribution<int> azimuth_index(0, kTrainAzimuthCount - 1);
  std::uniform_real_distribution<double> elevation(kTrainElevationMin, kTrainElevationMax);
  const auto intr = camera::Intrinsics::centered(options.image_size, options.image_size, options.focal);
  std::vector<camera::CameraSpec> rig;
  constexpr int kMaxAttempts = 1000;
  for (int attempt = 0; static_cast<int>(rig.size()) < views; ++attempt) {
    if (attempt >= kMaxAttempts) throw std::runtime_error("training_rig: could not find non-empty views");
    camera::CameraSpec cam;
    cam.azimuth_deg = 360.0 / kTrainAzimuthCount * azimuth_index(rng);
    cam.elevation_deg = elevation(rng);
    cam.radius = options.radius;
    cam.intrinsics = intr;
    if (foreground_pixel_count(render_view(spec, cam)) == 0) continue;
    rig.push_back(cam);
  }
  return rig;
}

std::vector<camera::CameraSpec> test_rig(const RigOptions& options) {
  const auto intr = camera::Intrinsics::centered(options.image_size, options.image_size, options.focal);
  std::vector<camera::CameraSpec> rig;
  for (int i = 0; i < kTestViewCount; ++i) {
    rig.push_back({kTestAzimuthStep * i, kTestElevation, options.radius, intr});
  }
  return rig;
}

void to_json(nlohmann::json& j, const SceneSpec& spec) {
  j = nlohmann::json{{"seed", spec.seed}, {"primitives", nlohmann::json::array()}};
  for (const Primitive& p : spec.primitives) {
    nlohmann::json pj{{"kind", p.kind == PrimitiveKind::kSphere ? "sphere" : "box"},
                      {"center", {p.center.x(), p.center.y(), p.center.z()}},
                      {"albedo", {p.albedo[0], p.albedo[1], p.albedo[2]}}};
    if (p.kind == PrimitiveKind::kSphere) {
      pj["radius"] = p.size.x();
    } else {
      pj["size"] = {p.size.x(), p.size.y(), p.size.z()};
    }
    j["primitives"].push_back(std::move(pj));
  }
}

void from_json(const nlohmann::json& j, SceneSpec& spec) {
  spec.seed = j.at("seed").get<std::uint64_t>();
  spec.primitives.clear();
  for (const auto& pj : j.at("primitives")) {
    Primitive p;
    const auto kind = pj.at("kind").get<std::string>();
    if (kind == "sphere") {
      p.kind = PrimitiveKind::kSphere;
      p.size = Vec3::Constant(pj.at("radius").get<double>());
    } else if (kind == "box") {
      p.kind = PrimitiveKind::kBox;
      const auto s = pj.at("size").get<std::vector<double>>();
      p.size = Vec3(s.at(0), s.at(1), s.at(2));
    } else {
      throw std::invalid_argument("unknown primitive kind: " + kind);
    }
    const auto c = pj.at("center").get<std::vector<double>>();
    p.center = Vec3(c.at(0), c.at(1), c.at(2));
    const auto a = pj.at("albedo").get<std::vector<float>>();
    p.albedo = {a.at(0), a.at(1), a.at(2)};
    spec.primitives.push_back(p);
  }
  spec.validate();
}

}  // namespace mvdiff::scenes
