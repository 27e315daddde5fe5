// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "mvdiff/metrics/metrics.h"

namespace mvdiff::metrics {
namespace {

Image random_image(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  Image img(w, h);
  for (float& v : img.rgb) v = u(rng);
  return img;
}

PointSet random_points(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  PointSet p(n);
  for (auto& x : p) x = {u(rng), u(rng), u(rng)};
  return p;
}

// Direct 2-D window SSIM, no separable filtering.
double ssim_direct(const Image& a, const Image& b) {
  const int n = 11;
  double k[11][11], ks = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      k[i][j] = std::exp(-((i - 5.0) * (i - 5.0) + (j - 5.0) * (j - 5.0)) / (2 * 1.5 * 1.5));
      ks += k[i][j];
    }
  }
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0;
  int count = 0;
  for (int ch = 0; ch < 3; ++ch) {
    for (int y = 0; y + n <= a.height; ++y) {
      for (int x = 0; x + n <= a.width; ++x) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < n; ++j) {
            const double w = k[i][j] / ks, p = a.at(x + j, y + i, ch), q = b.at(x + j, y + i, ch);
            mx += w * p;
            my += w * q;
            sxx += w * p * p;
            syy += w * q * q;
            sxy += w * p * q;
          }
        }
        const double vx = sxx - mx * mx, vy = syy - my * my, cov = sxy - mx * my;
        total += (2 * mx * my + c1) * (2 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++count;
      }
    }
  }
  return total / count;
}

VoxelGrid box_grid(int res, double x0, double x1) {
  VoxelGrid g(res);
  for (int z = 0; z < res; ++z) {
    for (int y = 0; y < res; ++y) {
      for (int x = 0; x < res; ++x) {
        const auto c = g.cell_center(x, y, z);
        g.set(x, y, z, c.x() > x0 && c.x() < x1 && std::abs(c.y()) < 0.5 && std::abs(c.z()) < 0.5);
      }
    }
  }
  return g;
}

TEST(Psnr, IdenticalImagesHitCap) {
  const Image a = random_image(8, 8, 1);
  EXPECT_EQ(psnr(a, a), kPsnrCap);
  EXPECT_EQ(kPsnrCap, 99.0);
}

TEST(Psnr, SpotValues) {
  // 48 of 75 entries off by 0.125: MSE = 48 * 0.015625 / 75 = 0.01.
  Image a(5, 5), b(5, 5);
  for (int i = 0; i < 48; ++i) b.rgb[static_cast<std::size_t>(i)] = 0.125f;
  EXPECT_DOUBLE_EQ(psnr(a, b), 20.0);
  EXPECT_EQ(psnr(Image(4, 4, {0, 0, 0}), Image(4, 4, {1, 1, 1})), 0.0);
  EXPECT_DOUBLE_EQ(psnr(Image(4, 4, {0, 0, 0}), Image(4, 4, {0.5f, 0.5f, 0.5f}), 0.5), 0.0);
}

TEST(Psnr, StrictlyDecreasingInError) {
  const Image a(6, 6, {0.2f, 0.2f, 0.2f});
  double last = std::numeric_limits<double>::infinity();
  for (float d = 0.01f; d < 0.8f; d += 0.05f) {
    const double v = psnr(a, Image(6, 6, {0.2f + d, 0.2f, 0.2f}));
    EXPECT_LT(v, last);
    last = v;
  }
}

TEST(Psnr, ShapeMismatchThrows) { EXPECT_THROW(psnr(Image(4, 4), Image(4, 5)), ShapeError); }

TEST(Ssim, IdentityIsOne) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Image a = random_image(16 + static_cast<int>(s), 20, s);
    EXPECT_NEAR(ssim(a, a), 1.0, 1e-6);
  }
  EXPECT_NEAR(ssim(Image(12, 12), Image(12, 12)), 1.0, 1e-6);
}

TEST(Ssim, MatchesDirectWindowOracle) {
  for (std::uint64_t s = 0; s < 4; ++s) {
    const Image a = random_image(17, 13, s), b = random_image(17, 13, s + 50);
    EXPECT_NEAR(ssim(a, b), ssim_direct(a, b), 1e-9);
  }
}

TEST(Ssim, Symmetric) {
  const Image a = random_image(20, 20, 3), b = random_image(20, 20, 4);
  EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-9);
}

TEST(Ssim, InvertedCheckerboardIsNegative) {
  Image x(16, 16), inv(16, 16);
  for (int y = 0; y < 16; ++y) {
    for (int c = 0; c < 16; ++c) {
      const float v = (c + y) % 2 == 0 ? 1.f : 0.f;
      x.set(c, y, {v, v, v});
      inv.set(c, y, {1 - v, 1 - v, 1 - v});
    }
  }
  const double s = ssim(x, inv);
  EXPECT_NEAR(s, ssim_direct(x, inv), 1e-9);
  EXPECT_LT(s, 0.0);
}

TEST(Ssim, TooSmallThrows) {
  EXPECT_THROW(ssim(Image(10, 20), Image(10, 20)), std::invalid_argument);
  EXPECT_THROW(ssim(Image(12, 12), Image(12, 13)), ShapeError);
}

TEST(Chamfer, IdentityAndSingletons) {
  const PointSet p = random_points(50, 1);
  EXPECT_EQ(chamfer(p, p), 0.0);
  EXPECT_DOUBLE_EQ(chamfer({{0, 0, 0}}, {{0.3, 0.4, 0}}), 0.5);
}

TEST(Chamfer, MatchesBruteForce) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const PointSet p = random_points(200, s), q = random_points(200, s + 10);
    double a = 0, b = 0;
    for (const auto& x : p) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& y : q) best = std::min(best, (x - y).norm());
      a += best;
    }
    for (const auto& y : q) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& x : p) best = std::min(best, (x - y).norm());
      b += best;
    }
    EXPECT_NEAR(chamfer(p, q), 0.5 * (a / 200 + b / 200), 1e-9);
    EXPECT_NEAR(chamfer(p, q), chamfer(q, p), 1e-12);
  }
}

TEST(Chamfer, EmptyThrows) {
  EXPECT_THROW(chamfer({}, random_points(3, 1)), std::invalid_argument);
  EXPECT_THROW(chamfer(random_points(3, 1), {}), std::invalid_argument);
}

TEST(KdTreeTest, NearestMatchesBruteForceWithDuplicates) {
  PointSet pts = random_points(300, 5);
  for (int i = 0; i < 40; ++i) pts.push_back(pts[static_cast<std::size_t>(i)]);
  for (int i = 0; i < 30; ++i) pts.push_back({0.1, 0.1, 0.1});
  const KdTree tree(pts);
  for (const auto& q : random_points(200, 9)) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : pts) best = std::min(best, (p - q).norm());
    EXPECT_DOUBLE_EQ(tree.nearest_distance(q), best);
  }
  EXPECT_THROW(KdTree({}).nearest_distance({0, 0, 0}), std::logic_error);
}

TEST(VolumeIou, IdentityDisjointAndEmpty) {
  const VoxelGrid a = box_grid(16, -0.5, 0.5);
  EXPECT_EQ(volume_iou(a, a).iou, 1.0);
  EXPECT_EQ(volume_iou(box_grid(16, -0.9, -0.1), box_grid(16, 0.1, 0.9)).iou, 0.0);
  const IouResult empty = volume_iou(VoxelGrid(8), VoxelGrid(8));
  EXPECT_EQ(empty.iou, 1.0);
  EXPECT_TRUE(empty.both_empty);
  EXPECT_FALSE(volume_iou(a, a).both_empty);
  EXPECT_THROW(volume_iou(VoxelGrid(8), VoxelGrid(16)), std::invalid_argument);
}

TEST(VolumeIou, HalfEdgeOffsetCubes) {
  const VoxelGrid a = box_grid(64, -0.75, 0.25), b = box_grid(64, -0.25, 0.75);
  EXPECT_NEAR(volume_iou(a, b).iou, 1.0 / 3.0, 0.02 / 3.0);
  EXPECT_DOUBLE_EQ(volume_iou(a, b).iou, volume_iou(b, a).iou);
}

TEST(VolumeIou, MonotoneUnderSharedVoxels) {
  VoxelGrid a = box_grid(16, -0.8, 0.2), b = box_grid(16, -0.2, 0.8);
  double last = volume_iou(a, b).iou;
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> cell(0, a.size() - 1);
  for (int i = 0; i < 200; ++i) {
    const std::size_t k = cell(rng);
    a.set(k, true);
    b.set(k, true);
    const double now = volume_iou(a, b).iou;
    EXPECT_GE(now, last);
    last = now;
  }
}

TEST(Report, SchemaAndAggregates) {
  MetricReport r;
  r.items.push_back({"a", 20.0, 0.8, 0.05, 0.5});
  r.items.push_back({"b", 30.0, 0.6, std::nullopt, std::nullopt});
  r.chamfer_samples = 1000;
  const nlohmann::json j = to_json(r);
  EXPECT_DOUBLE_EQ(j["psnr"].get<double>(), 25.0);
  EXPECT_DOUBLE_EQ(j["ssim"].get<double>(), 0.7);
  EXPECT_DOUBLE_EQ(j["chamfer"].get<double>(), 0.05);
  EXPECT_DOUBLE_EQ(j["volume_iou"].get<double>(), 0.5);
  EXPECT_TRUE(j["lpips"].is_null());
  EXPECT_EQ(j["counts"]["psnr"], 2);
  EXPECT_EQ(j["counts"]["chamfer"], 1);
  EXPECT_EQ(j["config"]["ssim_window"], 11);
  EXPECT_EQ(j["config"]["chamfer_samples"], 1000);
  EXPECT_TRUE(j["items"][1]["chamfer"].is_null());
  EXPECT_TRUE(to_json(MetricReport{})["psnr"].is_null());
}

}  // namespace
}  // namespace mvdiff::metrics
