// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#include "mvdiff/metrics/metrics.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "mvdiff/common/error.h"

namespace mvdiff::metrics {

namespace {

void require_same_size(const Image& a, const Image& b, const char* what) {
  if (a.width != b.width || a.height != b.height) {
    throw ShapeError(std::string(what) + ": image sizes differ (" + std::to_string(a.width) + "x" +
                     std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" + std::to_string(b.height) +
                     ")");
  }
}

// Valid-mode separable filter of one channel.
std::vector<double> filter_valid(const std::vector<double>& img, int w, int h, const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int ow = w - n + 1, oh = h - n + 1;
  std::vector<double> rows(static_cast<std::size_t>(ow) * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0;
      for (int i = 0; i < n; ++i) s += k[i] * img[static_cast<std::size_t>(y) * w + x + i];
      rows[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(ow) * oh);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0;
      for (int i = 0; i < n; ++i) s += k[i] * rows[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }
  return out;
}

std::optional<double> mean_of(const std::vector<ItemMetrics>& items, std::optional<double> ItemMetrics::*field) {
  double total = 0;
  int n = 0;
  for (const ItemMetrics& it : items) {
    if (const auto& v = it.*field) {
      total += *v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return total / n;
}

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

double psnr(const Image& a, const Image& b, double max_val) {
  require_same_size(a, b, "psnr");
  if (a.rgb.empty()) throw std::invalid_argument("psnr: empty image");
  double se = 0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) {
    const double d = static_cast<double>(a.rgb[i]) - b.rgb[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.rgb.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(max_val * max_val / mse));
}

double ssim(const Image& a, const Image& b, const SsimOptions& options) {
  require_same_size(a, b, "ssim");
  if (options.window < 1 || options.sigma <= 0) throw std::invalid_argument("ssim: invalid window");
  if (a.width < options.window || a.height < options.window) {
    throw std::invalid_argument("ssim: image smaller than the " + std::to_string(options.window) + "px window");
  }
  std::vector<double> k(static_cast<std::size_t>(options.window));
  const double c = (options.window - 1) / 2.0;
  for (int i = 0; i < options.window; ++i) k[i] = std::exp(-(i - c) * (i - c) / (2 * options.sigma * options.sigma));
  const double ksum = std::accumulate(k.begin(), k.end(), 0.0);
  for (double& v : k) v /= ksum;

  const double c1 = std::pow(0.01 * options.dynamic_range, 2), c2 = std::pow(0.03 * options.dynamic_range, 2);
  const std::size_t n = a.pixels();
  double total = 0;
  for (int ch = 0; ch < 3; ++ch) {
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = a.rgb[i * 3 + ch];
      y[i] = b.rgb[i * 3 + ch];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, a.width, a.height, k), my = filter_valid(y, a.width, a.height, k);
    const auto sxx = filter_valid(xx, a.width, a.height, k), syy = filter_valid(yy, a.width, a.height, k);
    const auto sxy = filter_valid(xy, a.width, a.height, k);
    double sum = 0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cov = sxy[i] - mx[i] * my[i];
      sum += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    total += sum / static_cast<double>(mx.size());
  }
  return total / 3.0;
}

KdTree::KdTree(PointSet points) : points_(std::move(points)) {
  if (!points_.empty()) build(0, points_.size());
}

int KdTree::build(std::size_t begin, std::size_t end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({});
  nodes_[id].begin = begin;
  nodes_[id].end = end;
  if (end - begin <= 8) return id;

  Eigen::Vector3d lo = points_[begin], hi = points_[begin];
  for (std::size_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[i]);
    hi = hi.cwiseMax(points_[i]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  const std::size_t mid = begin + (end - begin) / 2;
  std::nth_element(points_.begin() + static_cast<std::ptrdiff_t>(begin),
                   points_.begin() + static_cast<std::ptrdiff_t>(mid),
                   points_.begin() + static_cast<std::ptrdiff_t>(end),
                   [axis](const Eigen::Vector3d& p, const Eigen::Vector3d& q) { return p[axis] < q[axis]; });
  const double split = points_[mid][axis];
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree::search(int id, const Eigen::Vector3d& q, double& best_sq) const {
  const Node& node = nodes_[static_cast<std::size_t>(id)];
  if (node.axis < 0) {
    for (std::size_t i = node.begin; i < node.end; ++i) best_sq = std::min(best_sq, (points_[i] - q).squaredNorm());
    return;
  }
  // Left holds coordinates <= split, right >= split.
  const double d = q[node.axis] - node.split;
  const int near = d < 0 ? node.left : node.right;
  const int far = d < 0 ? node.right : node.left;
  search(near, q, best_sq);
  if (d * d < best_sq) search(far, q, best_sq);
}

double KdTree::nearest_distance(const Eigen::Vector3d& query) const {
  if (points_.empty()) throw std::logic_error("KdTree: query on an empty tree");
  double best = std::numeric_limits<double>::infinity();
  search(0, query, best);
  return std::sqrt(best);
}

double chamfer(const PointSet& p, const PointSet& q) {
  if (p.empty() || q.empty()) throw std::invalid_argument("chamfer: point sets must be nonempty");
  const KdTree tp(p), tq(q);
  double a = 0, b = 0;
  for (const auto& x : p) a += tq.nearest_distance(x);
  for (const auto& x : q) b += tp.nearest_distance(x);
  return 0.5 * (a / static_cast<double>(p.size()) + b / static_cast<double>(q.size()));
}

IouResult volume_iou(const VoxelGrid& a, const VoxelGrid& b) {
  if (a.resolution() != b.resolution()) {
    throw std::invalid_argument("volume_iou: resolutions differ (" + std::to_string(a.resolution()) + " vs " +
                                std::to_string(b.resolution()) + ")");
  }
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] && b[i]) ? 1 : 0;
    uni += (a[i] || b[i]) ? 1 : 0;
  }
  if (uni == 0) return {1.0, true};
  return {static_cast<double>(inter) / static_cast<double>(uni), false};
}

std::optional<double> MetricReport::mean_psnr() const { return mean_of(items, &ItemMetrics::psnr); }
std::optional<double> MetricReport::mean_ssim() const { return mean_of(items, &ItemMetrics::ssim); }
std::optional<double> MetricReport::mean_chamfer() const { return mean_of(items, &ItemMetrics::chamfer); }
std::optional<double> MetricReport::mean_volume_iou() const { return mean_of(items, &ItemMetrics::volume_iou); }

nlohmann::json to_json(const MetricReport& report) {
  nlohmann::json items = nlohmann::json::array();
  nlohmann::json counts = {{"psnr", 0}, {"ssim", 0}, {"chamfer", 0}, {"volume_iou", 0}};
  for (const ItemMetrics& it : report.items) {
    items.push_back({{"name", it.name},
                     {"psnr", opt(it.psnr)},
                     {"ssim", opt(it.ssim)},
                     {"chamfer", opt(it.chamfer)},
                     {"volume_iou", opt(it.volume_iou)}});
    if (it.psnr) counts["psnr"] = counts["psnr"].get<int>() + 1;
    if (it.ssim) counts["ssim"] = counts["ssim"].get<int>() + 1;
    if (it.chamfer) counts["chamfer"] = counts["chamfer"].get<int>() + 1;
    if (it.volume_iou) counts["volume_iou"] = counts["volume_iou"].get<int>() + 1;
  }
  return {{"psnr", opt(report.mean_psnr())},
          {"ssim", opt(report.mean_ssim())},
          {"lpips", nullptr},
          {"chamfer", opt(report.mean_chamfer())},
          {"volume_iou", opt(report.mean_volume_iou())},
          {"counts", counts},
          {"config",
           {{"ssim_window", report.ssim_options.window},
            {"ssim_sigma", report.ssim_options.sigma},
            {"chamfer_samples", report.chamfer_samples}}},
          {"items", items},
          {"extra", report.extra}};
}

}  // namespace mvdiff::metrics
