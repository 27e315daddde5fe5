// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#include "mvdiff/common/voxel_grid.h"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>

#include "mvdiff/common/error.h"

namespace mvdiff {

VoxelGrid::VoxelGrid(int resolution, bool fill) : resolution_(resolution) {
  if (resolution <= 0) throw std::invalid_argument("voxel grid resolution must be positive");
  const auto r = static_cast<std::size_t>(resolution);
  cells_.assign(r * r * r, fill ? 1 : 0);
}

std::size_t VoxelGrid::count() const {
  return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), std::uint8_t{1}));
}

void write_occupancy(std::ostream& out, const VoxelGrid& grid) {
  out.write("MVOX", 4);
  const auto r = static_cast<std::uint32_t>(grid.resolution());
  out.write(reinterpret_cast<const char*>(&r), sizeof(r));
  std::vector<std::uint8_t> bytes((grid.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i]) bytes[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing occupancy grid");
}

VoxelGrid read_occupancy(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "MVOX", 4) != 0) throw FormatError("not an occupancy file (bad magic)");
  std::uint32_t r = 0;
  in.read(reinterpret_cast<char*>(&r), sizeof(r));
  if (!in || r == 0 || r > 4096) throw FormatError("bad occupancy resolution");
  VoxelGrid grid(static_cast<int>(r));
  std::vector<std::uint8_t> bytes((grid.size() + 7) / 8);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw FormatError("occupancy file truncated");
  for (std::size_t i = 0; i < grid.size(); ++i) grid.set(i, (bytes[i / 8] >> (i % 8)) & 1u);
  return grid;
}

void save_occupancy(const std::filesystem::path& path, const VoxelGrid& grid) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  write_occupancy(out, grid);
}

VoxelGrid load_occupancy(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open occupancy file: " + path.string());
  return read_occupancy(in);
}

}  // namespace mvdiff
