// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvdiff/common/image.h"
#include "mvdiff/common/voxel_grid.h"

namespace mvdiff::metrics {

using PointSet = std::vector<Eigen::Vector3d>;

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(max^2 / MSE) over all channels; identical images give kPsnrCap.
/// Throws ShapeError when the sizes differ.
double psnr(const Image& a, const Image& b, double max_val = 1.0);

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double dynamic_range = 1.0;
};

/// Mean local SSIM with a Gaussian window (valid positions only), computed
/// per channel and averaged. Throws std::invalid_argument when the image is
/// smaller than the window.
double ssim(const Image& a, const Image& b, const SsimOptions& options = {});

/// Symmetric mean nearest-neighbour distance (non-squared), halved.
/// Throws std::invalid_argument on an empty set.
double chamfer(const PointSet& p, const PointSet& q);

struct IouResult {
  double iou = 0.0;
  bool both_empty = false;  // iou reported as 1
};

/// Throws std::invalid_argument on a resolution mismatch.
IouResult volume_iou(const VoxelGrid& a, const VoxelGrid& b);

/// Nearest-neighbour queries over a fixed point set.
class KdTree {
 public:
  explicit KdTree(PointSet points);
  /// Distance to the closest stored point; the tree must be nonempty.
  double nearest_distance(const Eigen::Vector3d& query) const;
  std::size_t size() const { return points_.size(); }

 private:
  struct Node {
    int axis = -1;  // -1: leaf
    std::size_t begin = 0, end = 0;
    double split = 0.0;
    int left = -1, right = -1;
  };
  int build(std::size_t begin, std::size_t end);
  void search(int node, const Eigen::Vector3d& q, double& best_sq) const;

  PointSet points_;
  std::vector<Node> nodes_;
};

// Reports --------------------------------------------------------------------

struct ItemMetrics {
  std::string name;
  std::optional<double> psnr, ssim, chamfer, volume_iou;
};

/// Aggregates are the arithmetic means over items that carry the metric.
struct MetricReport {
  std::vector<ItemMetrics> items;
  SsimOptions ssim_options;
  int chamfer_samples = 0;
  nlohmann::json extra = nlohmann::json::object();  // free-form context (run label, view counts)

  std::optional<double> mean_psnr() const;
  std::optional<double> mean_ssim() const;
  std::optional<double> mean_chamfer() const;
  std::optional<double> mean_volume_iou() const;
};

/// {psnr, ssim, lpips: null, chamfer, volume_iou} aggregates plus "items",
/// "counts", "config" and "extra".
nlohmann::json to_json(const MetricReport& report);

}  // namespace mvdiff::metrics
