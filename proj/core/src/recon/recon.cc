// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#include "mvdiff/recon/recon.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>

#include "mvdiff/camera/camera.h"
#include "mvdiff/common/error.h"
#include "mvdiff/common/parallel.h"

namespace mvdiff::recon {

std::size_t Mask::count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }

Mask foreground_mask(const Image& image, const Rgb& background, float tol) {
  Mask m{image.width, image.height, std::vector<std::uint8_t>(image.pixels(), 0)};
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      float dev = 0.f;
      for (int c = 0; c < 3; ++c) dev = std::max(dev, std::abs(image.at(x, y, c) - background[c]));
      m.bits[static_cast<std::size_t>(y) * image.width + x] = dev > tol ? 1 : 0;
    }
  }
  return m;
}

Mask foreground_mask(const scenes::RenderedView& view, float tol) {
  return foreground_mask(view.image, view.background, tol);
}

VoxelGrid space_carve(const std::vector<Silhouette>& views, int resolution) {
  if (views.size() < 2) throw std::invalid_argument("space_carve: at least two views are required");
  if (resolution < 1) throw std::invalid_argument("space_carve: resolution must be positive");
  std::vector<camera::CameraPose> poses;
  for (const Silhouette& v : views) {
    v.camera.intrinsics.validate();
    if (v.mask.width != v.camera.intrinsics.width || v.mask.height != v.camera.intrinsics.height ||
        v.mask.bits.size() != static_cast<std::size_t>(v.mask.width) * v.mask.height) {
      throw std::invalid_argument("space_carve: mask size does not match the camera intrinsics");
    }
    poses.push_back(v.camera.pose());
  }

  VoxelGrid grid(resolution, true);
  parallel_for(static_cast<std::size_t>(resolution), [&](std::size_t zi) {
    const int z = static_cast<int>(zi);
    for (int y = 0; y < resolution; ++y) {
      for (int x = 0; x < resolution; ++x) {
        const Eigen::Vector3d c = grid.cell_center(x, y, z);
        for (std::size_t v = 0; v < views.size(); ++v) {
          if (camera::depth_of(c, poses[v]) <= 0) continue;
          const Eigen::Vector2d p = camera::project(c, poses[v], views[v].camera.intrinsics);
          const double px = std::floor(p.x()), py = std::floor(p.y());
          const Mask& m = views[v].mask;
          // Outside the frame the view says nothing about the voxel.
          if (px < 0 || py < 0 || px >= m.width || py >= m.height) continue;
          if (!m.at(static_cast<int>(px), static_cast<int>(py))) {
            grid.set(x, y, z, false);
            break;
          }
        }
      }
    }
  });
  return grid;
}

double Mesh::area() const {
  double a = 0;
  for (const auto& t : triangles) {
    a += 0.5 * (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]).norm();
  }
  return a;
}

namespace {

// Six tetrahedra sharing the 0-7 diagonal; corner index = dx + 2 dy + 4 dz.
constexpr int kTets[6][4] = {{0, 1, 3, 7}, {0, 3, 2, 7}, {0, 2, 6, 7}, {0, 6, 4, 7}, {0, 4, 5, 7}, {0, 5, 1, 7}};

class SurfaceBuilder {
 public:
  SurfaceBuilder(const std::vector<double>& field, int n, double h) : field_(field), n_(n), h_(h) {}

  void tetrahedron(const std::array<std::size_t, 4>& ids) {
    std::array<std::size_t, 4> in{}, out{};
    int ni = 0, no = 0;
    for (std::size_t id : ids) {
      if (field_[id] > kIsoLevel) {
        in[static_cast<std::size_t>(ni++)] = id;
      } else {
        out[static_cast<std::size_t>(no++)] = id;
      }
    }
    if (ni == 0 || no == 0) return;
    Eigen::Vector3d cin = Eigen::Vector3d::Zero(), cout = Eigen::Vector3d::Zero();
    for (int i = 0; i < ni; ++i) cin += position(in[static_cast<std::size_t>(i)]) / ni;
    for (int i = 0; i < no; ++i) cout += position(out[static_cast<std::size_t>(i)]) / no;
    const Eigen::Vector3d outward = cout - cin;
    if (ni == 1) {
      emit(vertex(in[0], out[0]), vertex(in[0], out[1]), vertex(in[0], out[2]), outward);
    } else if (ni == 3) {
      emit(vertex(in[0], out[0]), vertex(in[1], out[0]), vertex(in[2], out[0]), outward);
    } else {
      const std::uint32_t a = vertex(in[0], out[0]), b = vertex(in[0], out[1]), c = vertex(in[1], out[1]),
                          d = vertex(in[1], out[0]);
      emit(a, b, c, outward);
      emit(a, c, d, outward);
    }
  }

  Mesh take() { return std::move(mesh_); }

 private:
  Eigen::Vector3d position(std::size_t id) const {
    const auto n = static_cast<std::size_t>(n_);
    const std::size_t x = id % n, y = (id / n) % n, z = id / (n * n);
    // Padded index 0 sits half a cell outside the extent.
    auto coord = [&](std::size_t i) { return -1.0 + (static_cast<double>(i) - 0.5) * h_; };
    return {coord(x), coord(y), coord(z)};
  }

  std::uint32_t vertex(std::size_t a, std::size_t b) {
    if (a > b) std::swap(a, b);
    const std::uint64_t key = static_cast<std::uint64_t>(a) * field_.size() + b;
    const auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    const double t = (kIsoLevel - field_[a]) / (field_[b] - field_[a]);
    Eigen::Vector3d p = position(a) + t * (position(b) - position(a));
    p = p.cwiseMax(-1.0).cwiseMin(1.0);
    const auto id = static_cast<std::uint32_t>(mesh_.vertices.size());
    mesh_.vertices.push_back(p);
    cache_.emplace(key, id);
    return id;
  }

  void emit(std::uint32_t a, std::uint32_t b, std::uint32_t c, const Eigen::Vector3d& outward) {
    const Eigen::Vector3d nrm =
        (mesh_.vertices[b] - mesh_.vertices[a]).cross(mesh_.vertices[c] - mesh_.vertices[a]);
    if (nrm.norm() <= 1e-12 * h_ * h_) return;
    if (nrm.dot(outward) < 0) std::swap(b, c);
    mesh_.triangles.push_back({a, b, c});
  }

  const std::vector<double>& field_;
  int n_;
  double h_;
  Mesh mesh_;
  std::unordered_map<std::uint64_t, std::uint32_t> cache_;
};

}  // namespace

Mesh marching_cubes(const VoxelGrid& grid) {
  const int r = grid.resolution();
  if (r < 8) throw std::invalid_argument("marching_cubes: resolution must be at least 8");
  if (grid.count() == 0) return {};

  // Box-filtered occupancy on the grid padded by one empty layer.
  const int n = r + 2;
  const auto un = static_cast<std::size_t>(n);
  auto occ = [&](int x, int y, int z) {
    return x >= 0 && y >= 0 && z >= 0 && x < r && y < r && z < r && grid.get(x, y, z);
  };
  std::vector<double> field(un * un * un);
  for (int z = 0; z < n; ++z) {
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        int s = 0;
        for (int dz = -1; dz <= 1; ++dz) {
          for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) s += occ(x - 1 + dx, y - 1 + dy, z - 1 + dz) ? 1 : 0;
          }
        }
        field[static_cast<std::size_t>(x) + un * (static_cast<std::size_t>(y) + un * static_cast<std::size_t>(z))] =
            s / 27.0;
      }
    }
  }

  SurfaceBuilder builder(field, n, grid.cell_size());
  for (std::size_t z = 0; z + 1 < un; ++z) {
    for (std::size_t y = 0; y + 1 < un; ++y) {
      for (std::size_t x = 0; x + 1 < un; ++x) {
        std::array<std::size_t, 8> corner{};
        for (std::size_t c = 0; c < 8; ++c) {
          corner[c] = (x + (c & 1)) + un * ((y + ((c >> 1) & 1)) + un * (z + ((c >> 2) & 1)));
        }
        for (const auto& tet : kTets) {
          builder.tetrahedron({corner[tet[0]], corner[tet[1]], corner[tet[2]], corner[tet[3]]});
        }
      }
    }
  }
  return builder.take();
}

std::vector<Eigen::Vector3d> sample_surface(const Mesh& mesh, int n, std::uint64_t seed,
                                            std::vector<std::size_t>* triangle) {
  if (mesh.empty()) throw std::invalid_argument("sample_surface: empty mesh");
  if (n < 1) throw std::invalid_argument("sample_surface: n must be >= 1");
  std::vector<double> cumulative;
  double total = 0;
  for (const auto& t : mesh.triangles) {
    total += (mesh.vertices[t[1]] - mesh.vertices[t[0]]).cross(mesh.vertices[t[2]] - mesh.vertices[t[0]]).norm();
    cumulative.push_back(total);
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Eigen::Vector3d> out;
  out.reserve(static_cast<std::size_t>(n));
  if (triangle) triangle->clear();
  for (int i = 0; i < n; ++i) {
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u(rng) * total);
    const auto k = std::min(static_cast<std::size_t>(it - cumulative.begin()), cumulative.size() - 1);
    const auto& t = mesh.triangles[k];
    const double s = std::sqrt(u(rng)), w = u(rng);
    out.push_back((1 - s) * mesh.vertices[t[0]] + s * (1 - w) * mesh.vertices[t[1]] + s * w * mesh.vertices[t[2]]);
    if (triangle) triangle->push_back(k);
  }
  return out;
}

VoxelGrid voxelize_mesh(const Mesh& mesh, int resolution) {
  if (resolution < 1) throw std::invalid_argument("voxelize_mesh: resolution must be positive");
  VoxelGrid grid(resolution);
  if (mesh.empty()) return grid;
  const double h = grid.cell_size();
  // Rows are nudged off the cell centers so they never graze mesh edges
  // that interpolate between those same centers.
  const double dy = 1e-7 * 3.14159265, dz = 1e-7 * 2.71828183;
  const auto r = static_cast<std::size_t>(resolution);

  std::vector<std::vector<std::uint32_t>> rows(r * r);
  auto cell_range = [&](double lo, double hi, double nudge) {
    const int a = std::max(0, static_cast<int>(std::ceil((lo - nudge + 1.0) / h - 0.5)));
    const int b = std::min(resolution - 1, static_cast<int>(std::floor((hi - nudge + 1.0) / h - 0.5)));
    return std::pair{a, b};
  };
  for (std::size_t k = 0; k < mesh.triangles.size(); ++k) {
    const auto& t = mesh.triangles[k];
    double ylo = 2, yhi = -2, zlo = 2, zhi = -2;
    for (auto id : t) {
      ylo = std::min(ylo, mesh.vertices[id].y());
      yhi = std::max(yhi, mesh.vertices[id].y());
      zlo = std::min(zlo, mesh.vertices[id].z());
      zhi = std::max(zhi, mesh.vertices[id].z());
    }
    const auto [y0, y1] = cell_range(ylo, yhi, dy);
    const auto [z0, z1] = cell_range(zlo, zhi, dz);
    for (int z = z0; z <= z1; ++z) {
      for (int y = y0; y <= y1; ++y) rows[static_cast<std::size_t>(y) + r * static_cast<std::size_t>(z)].push_back(
          static_cast<std::uint32_t>(k));
    }
  }

  parallel_for(r * r, [&](std::size_t row) {
    const int y = static_cast<int>(row % r), z = static_cast<int>(row / r);
    const double py = grid.center_coord(y) + dy, pz = grid.center_coord(z) + dz;
    std::vector<double> hits;
    for (std::uint32_t k : rows[row]) {
      const auto& t = mesh.triangles[k];
      const Eigen::Vector3d &a = mesh.vertices[t[0]], &b = mesh.vertices[t[1]], &c = mesh.vertices[t[2]];
      // Barycentric coordinates of (py, pz) in the triangle's yz projection.
      const double det = (b.y() - a.y()) * (c.z() - a.z()) - (c.y() - a.y()) * (b.z() - a.z());
      if (det == 0) continue;
      const double u = ((py - a.y()) * (c.z() - a.z()) - (c.y() - a.y()) * (pz - a.z())) / det;
      const double v = ((b.y() - a.y()) * (pz - a.z()) - (py - a.y()) * (b.z() - a.z())) / det;
      if (u < 0 || v < 0 || u + v > 1) continue;
      hits.push_back(a.x() + u * (b.x() - a.x()) + v * (c.x() - a.x()));
    }
    std::sort(hits.begin(), hits.end());
    for (std::size_t i = 0; i + 1 < hits.size(); i += 2) {
      for (int x = 0; x < resolution; ++x) {
        const double cx = grid.center_coord(x);
        if (cx > hits[i] && cx < hits[i + 1]) grid.set(x, y, z, true);
      }
    }
  });
  return grid;
}

void write_obj(std::ostream& out, const Mesh& mesh) {
  out << std::setprecision(17);
  for (const auto& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& t : mesh.triangles) out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
}

Mesh read_obj(std::istream& in) {
  Mesh mesh;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Eigen::Vector3d v;
      if (!(ls >> v.x() >> v.y() >> v.z())) throw FormatError("obj line " + std::to_string(lineno) + ": bad vertex");
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::array<std::uint32_t, 3> t{};
      for (auto& idx : t) {
        std::string tok;
        if (!(ls >> tok)) throw FormatError("obj line " + std::to_string(lineno) + ": face needs 3 indices");
        const long long i = std::stoll(tok.substr(0, tok.find('/')));
        if (i < 1 || static_cast<std::size_t>(i) > mesh.vertices.size()) {
          throw FormatError("obj line " + std::to_string(lineno) + ": vertex index out of range");
        }
        idx = static_cast<std::uint32_t>(i - 1);
      }
      mesh.triangles.push_back(t);
    }
  }
  return mesh;
}

void save_obj(const std::filesystem::path& path, const Mesh& mesh) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  write_obj(out, mesh);
}

Mesh load_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  return read_obj(in);
}

}  // namespace mvdiff::recon
