// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "mvdiff/camera/camera_spec.h"
#include "mvdiff/common/image.h"
#include "mvdiff/common/voxel_grid.h"
#include "mvdiff/scenes/scene.h"

// Views -> silhouettes -> visual hull -> triangle mesh.
namespace mvdiff::recon {

inline constexpr float kDefaultForegroundTol = 0.05f;

struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;  // row-major, 1 = foreground

  bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
  std::size_t count() const;
};

/// Foreground iff the largest per-channel deviation from `background`
/// exceeds `tol`.
Mask foreground_mask(const Image& image, const Rgb& background, float tol = kDefaultForegroundTol);
Mask foreground_mask(const scenes::RenderedView& view, float tol = kDefaultForegroundTol);

struct Silhouette {
  Mask mask;
  camera::CameraSpec camera;
};

/// Keeps a voxel iff its center lands on a foreground pixel of every view
/// that sees it in front of the camera. Projections outside a view's frame
/// do not constrain the voxel. Throws std::invalid_argument with
/// fewer than two views or when a mask does not match its intrinsics.
VoxelGrid space_carve(const std::vector<Silhouette>& views, int resolution);

struct Mesh {
  std::vector<Eigen::Vector3d> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;

  bool empty() const { return triangles.empty(); }
  double area() const;
};

inline constexpr double kIsoLevel = 0.5;

/// Iso-surface of the 3x3x3 box-filtered occupancy at 0.5, outward-facing,
/// with shared vertices. The field is padded with empty cells so the surface
/// closes at the grid boundary. Each cube is split into six tetrahedra
/// around its main diagonal. An empty grid yields an empty mesh. Throws
/// std::invalid_argument for resolution < 8.
Mesh marching_cubes(const VoxelGrid& grid);

/// Area-weighted uniform samples; deterministic per seed. When `triangle`
/// is given it receives the source triangle of every sample. Throws
/// std::invalid_argument for an empty mesh or n < 1.
std::vector<Eigen::Vector3d> sample_surface(const Mesh& mesh, int n, std::uint64_t seed,
                                            std::vector<std::size_t>* triangle = nullptr);

/// Inside/outside by ray parity along +x through every cell center.
VoxelGrid voxelize_mesh(const Mesh& mesh, int resolution);

// ASCII OBJ, v/f records only (1-based indices).
void write_obj(std::ostream& out, const Mesh& mesh);
Mesh read_obj(std::istream& in);
void save_obj(const std::filesystem::path& path, const Mesh& mesh);
Mesh load_obj(const std::filesystem::path& path);

}  // namespace mvdiff::recon
