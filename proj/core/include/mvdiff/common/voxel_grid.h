// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

namespace mvdiff {

/// Binary occupancy over the cube [-1, 1]^3, cell (x, y, z) stored at
/// x + r * (y + r * z). Cell centers sit at -1 + (i + 0.5) * 2 / r.
class VoxelGrid {
 public:
  VoxelGrid() = default;
  explicit VoxelGrid(int resolution, bool fill = false);

  int resolution() const { return resolution_; }
  std::size_t size() const { return cells_.size(); }

  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(resolution_) * (static_cast<std::size_t>(y) + static_cast<std::size_t>(resolution_) * z);
  }
  bool get(int x, int y, int z) const { return cells_[index(x, y, z)] != 0; }
  void set(int x, int y, int z, bool v) { cells_[index(x, y, z)] = v ? 1 : 0; }
  bool operator[](std::size_t i) const { return cells_[i] != 0; }
  void set(std::size_t i, bool v) { cells_[i] = v ? 1 : 0; }

  double cell_size() const { return 2.0 / resolution_; }
  double center_coord(int i) const { return -1.0 + (i + 0.5) * cell_size(); }
  Eigen::Vector3d cell_center(int x, int y, int z) const {
    return {center_coord(x), center_coord(y), center_coord(z)};
  }

  std::size_t count() const;
  double occupied_fraction() const { return static_cast<double>(count()) / static_cast<double>(size()); }

  friend bool operator==(const VoxelGrid&, const VoxelGrid&) = default;

 private:
  int resolution_ = 0;
  std::vector<std::uint8_t> cells_;
};

// occupancy.bin: "MVOX" | u32 resolution | ceil(r^3 / 8) bytes, x-fastest,
// bit i of byte k holds cell 8k + i.
void write_occupancy(std::ostream& out, const VoxelGrid& grid);
VoxelGrid read_occupancy(std::istream& in);
void save_occupancy(const std::filesystem::path& path, const VoxelGrid& grid);
VoxelGrid load_occupancy(const std::filesystem::path& path);

}  // namespace mvdiff
