// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails. Usage:
//   mvdiff_acceptance [--only 1,3,7] [--work DIR] [--keep]

#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "commands.h"
#include "mvdiff/camera/camera.h"
#include "mvdiff/common/random.h"
#include "mvdiff/diffcore/checkpoint.h"
#include "mvdiff/diffcore/gradcheck.h"
#include "mvdiff/diffcore/ops.h"
#include "mvdiff/diffusion/pipeline.h"
#include "mvdiff/metrics/metrics.h"
#include "mvdiff/recon/recon.h"
#include "mvdiff/scenes/dataset.h"
#include "mvdiff/srt/srt.h"
#include "run_config.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mvdiff::acceptance {
namespace {

// Pinned tolerances and budgets.
constexpr double kGradTol = 1e-4;
constexpr double kGradBudgetSec = 120;
constexpr double kEpipolarResidualPx = 1e-6;
constexpr double kSamplerTol = 1e-4;
constexpr double kSamplerBudgetSec = 10;
constexpr double kOverfitMse = 0.01;
constexpr double kOverfitHeldOutPsnr = 18.0;
constexpr double kOverfitBudgetSec = 15 * 60;
constexpr double kDiffusionLoss = 0.9;
constexpr double kDiffusionBudgetSec = 30 * 60;
constexpr double kCarveIou = 0.8;
constexpr double kAreaTol = 0.05;
constexpr double kSsimTol = 1e-6;
constexpr double kChamferTol = 1e-9;
constexpr double kOffsetIou = 1.0 / 3.0;
constexpr double kOffsetIouTol = 0.02;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    pass = pass && ok;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [x]");
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <typename T>
void randomize(diff::ParamStore<T>& params, std::uint64_t seed, double scale = 0.3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (auto& e : params.entries()) {
    for (T& v : e.value.storage()) v += static_cast<T>(n(rng));
  }
}

diff::Tensor<double> random_tensor(diff::Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  diff::Tensor<double> t(std::move(shape));
  for (double& v : t.storage()) v = u(rng);
  return t;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 1 ---------------------------------------------------------------------------

Outcome gradient_suite() {
  using namespace diff;
  using V = std::vector<Var<double>>;
  const auto t0 = std::chrono::steady_clock::now();
  struct Case {
    std::string name;
    InputLossFn fn;
    std::vector<Shape> shapes;
  };
  const std::vector<Case> cases = {
      {"matmul", [](Tape<double>&, const V& v) { return random_projection(matmul(v[0], v[1]), 1); }, {{2, 3, 4}, {4, 5}}},
      {"matmul_bt", [](Tape<double>&, const V& v) { return random_projection(matmul(v[0], v[1], true), 2); },
       {{2, 3, 4}, {2, 5, 4}}},
      {"add", [](Tape<double>&, const V& v) { return random_projection(add(v[0], v[1]), 3); }, {{3, 4}, {4}}},
      {"sub", [](Tape<double>&, const V& v) { return random_projection(sub(v[0], v[1]), 4); }, {{3, 4}, {3, 4}}},
      {"mul", [](Tape<double>&, const V& v) { return random_projection(mul(v[0], v[1]), 5); }, {{3, 4}, {4}}},
      {"scale", [](Tape<double>&, const V& v) { return random_projection(scale(v[0], 0.7), 6); }, {{3, 4}}},
      {"square", [](Tape<double>&, const V& v) { return random_projection(square(v[0]), 7); }, {{3, 4}}},
      {"gelu", [](Tape<double>&, const V& v) { return random_projection(gelu(v[0]), 8); }, {{4, 5}}},
      {"silu", [](Tape<double>&, const V& v) { return random_projection(silu(v[0]), 9); }, {{4, 5}}},
      {"softmax", [](Tape<double>&, const V& v) { return random_projection(softmax_rows(v[0]), 10); }, {{2, 3, 5}}},
      {"softmax_bias", [](Tape<double>&, const V& v) { return random_projection(softmax_rows(v[0], v[1]), 11); },
       {{2, 3, 5}, {3, 5}}},
      {"standardize", [](Tape<double>&, const V& v) { return random_projection(standardize_rows(v[0], 1e-5), 12); },
       {{3, 6}}},
      {"layer_norm",
       [](Tape<double>&, const V& v) { return random_projection(layer_norm(v[0], v[1], v[2], 1e-5), 13); },
       {{3, 6}, {6}, {6}}},
      {"channel_affine",
       [](Tape<double>&, const V& v) { return random_projection(channel_affine(v[0], v[1], v[2]), 14); },
       {{2, 3, 2, 2}, {3}, {3}}},
      {"group_norm",
       [](Tape<double>&, const V& v) { return random_projection(group_norm(v[0], 2, v[1], v[2], 1e-5), 15); },
       {{2, 4, 3, 3}, {4}, {4}}},
      {"conv2d", [](Tape<double>&, const V& v) { return random_projection(conv2d(v[0], v[1], 2, 1), 16); },
       {{2, 3, 6, 6}, {4, 3, 3, 3}}},
      {"avg_pool2", [](Tape<double>&, const V& v) { return random_projection(avg_pool2(v[0]), 17); }, {{2, 4, 6}}},
      {"upsample2", [](Tape<double>&, const V& v) { return random_projection(upsample2(v[0]), 18); }, {{2, 3, 2}}},
      {"reshape", [](Tape<double>&, const V& v) { return random_projection(reshape(v[0], {3, 8}), 19); }, {{2, 3, 4}}},
      {"permute", [](Tape<double>&, const V& v) { return random_projection(permute(v[0], {2, 0, 1}), 20); },
       {{2, 3, 4}}},
      {"concat", [](Tape<double>&, const V& v) { return random_projection(concat<double>({v[0], v[1]}, 1), 21); },
       {{2, 3, 2}, {2, 4, 2}}},
      {"slice", [](Tape<double>&, const V& v) { return random_projection(slice(v[0], 1, 1, 3), 22); }, {{2, 4, 3}}},
      {"sum", [](Tape<double>&, const V& v) { return sum(square(v[0])); }, {{3, 3}}},
      {"mean", [](Tape<double>&, const V& v) { return mean(square(v[0])); }, {{3, 3}}},
  };
  double worst = 0;
  std::string worst_name;
  for (const Case& c : cases) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      std::vector<Tensor<double>> in;
      for (std::size_t i = 0; i < c.shapes.size(); ++i) in.push_back(random_tensor(c.shapes[i], seed * 17 + i));
      const double e = check_input_gradients(c.fn, in).max_rel_error;
      if (e > worst) worst = e, worst_name = c.name;
    }
  }

  // SRT with a 4-layer encoder.
  srt::SRTConfig sc;
  sc.image_size = 8;
  sc.patch_size = 4;
  sc.model_dim = 16;
  sc.encoder_layers = 4;
  sc.decoder_layers = 1;
  sc.heads = 2;
  sc.conv_channels = 4;
  sc.ray_frequencies = 2;
  auto sp = srt::init_params<double>(sc, 10);
  randomize(sp, 11);
  const scenes::SceneSpec spec = scenes::generate_scene(3, 2);
  scenes::RigOptions rig{sc.image_size, static_cast<double>(sc.image_size), 3.5};
  std::vector<srt::PosedImage> views;
  for (const auto& cam : scenes::training_rig(spec, 3, 2, rig)) views.push_back(srt::posed(scenes::render_view(spec, cam)));
  const auto all_rays = srt::pixel_rays(views[0].camera);
  const std::vector<camera::Ray> rays(all_rays.begin(), all_rays.begin() + 6);
  GradCheckOptions opts;
  opts.max_entries = 6;
  const GradCheckReport srt_r = check_param_gradients(
      [&](Tape<double>& t, const ParamStore<double>& p) {
        return random_projection(srt::decode_rays(t, p, sc, srt::encode_views(t, p, sc, views), rays), 5);
      },
      sp, opts);

  // UNet on two 8x8 views.
  diffusion::UNetConfig uc;
  uc.image_size = 8;
  uc.base_channels = 4;
  uc.channel_mult = {1, 2};
  uc.attention_resolutions = {4};
  uc.groups = 2;
  uc.heads = 2;
  uc.context_dim = 4;
  auto up = diffusion::init_unet_params<double>(uc, 7);
  randomize(up, 8);
  const auto noisy = diffusion::gaussian<double>({2, 3, 8, 8}, 1);
  const auto latent = diffusion::gaussian<double>({2, 3, 8, 8}, 2);
  const auto z = diffusion::gaussian<double>({5, 4}, 3);
  opts.max_entries = 4;
  const GradCheckReport unet_r = check_param_gradients(
      [&](Tape<double>& t, const ParamStore<double>& p) {
        return random_projection(
            diffusion::unet_forward(t, p, uc, t.constant(noisy), t.constant(latent), t.constant(z), 33), 4);
      },
      up, opts);

  const double secs = seconds_since(t0);
  Outcome o;
  o.require(worst < kGradTol, std::to_string(cases.size()) + " ops max rel err " + fmt("%.2e", worst) + " (" +
                                  worst_name + ")");
  o.require(srt_r.max_rel_error < kGradTol, "SRT " + fmt("%.2e", srt_r.max_rel_error));
  o.require(unet_r.max_rel_error < kGradTol, "UNet " + fmt("%.2e", unet_r.max_rel_error));
  o.require(secs < kGradBudgetSec, fmt("%.1f s", secs));
  return o;
}

// 2 ---------------------------------------------------------------------------

Outcome epipolar_suite() {
  using camera::CameraPose;
  using camera::Intrinsics;
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> az(0.0, 360.0), el(-30.0, 60.0), rad(2.5, 5.0), pt(-0.8, 0.8);
  const Intrinsics intr = Intrinsics::centered(32, 32, 32.0);
  double max_residual = 0, worst_rank_ratio = 0, min_sigma2 = 1e300;
  int points = 0, pairs = 0;
  while (pairs < 100) {
    const CameraPose a = camera::look_at_pose(az(rng), el(rng), rad(rng));
    const CameraPose b = camera::look_at_pose(az(rng), el(rng), rad(rng));
    if ((a.center() - b.center()).norm() < 1e-3) continue;
    ++pairs;
    const camera::Mat3 f = camera::fundamental_matrix(a, b, intr, intr);
    Eigen::JacobiSVD<camera::Mat3> svd(f);
    const auto s = svd.singularValues();
    worst_rank_ratio = std::max(worst_rank_ratio, s(2) / s(0));
    min_sigma2 = std::min(min_sigma2, s(1) / s(0));
    for (int k = 0; k < 10; ++k, ++points) {
      const camera::Vec3 x(pt(rng), pt(rng), pt(rng));
      max_residual =
          std::max(max_residual, camera::epipolar_distance(f, camera::project(x, a, intr), camera::project(x, b, intr)));
    }
  }
  // Coincident centers: same position, different orientation.
  CameraPose c1 = camera::look_at_pose(30, 20, 3.5);
  CameraPose c2 = c1;
  c2.rotation = Eigen::AngleAxisd(0.3, camera::Vec3::UnitY()).toRotationMatrix() * c1.rotation;
  c2.translation = -c2.rotation * c1.center();
  const auto bias = camera::epipolar_bias(c1, c2, intr, intr, camera::FeatureGrid{});
  bool zeros = true;
  for (double v : bias.values) zeros = zeros && v == 0.0;

  Outcome o;
  o.require(points == 1000 && max_residual < kEpipolarResidualPx,
            std::to_string(points) + " points / " + std::to_string(pairs) + " pairs, max residual " +
                fmt("%.2e px", max_residual));
  o.require(worst_rank_ratio < 1e-12 && min_sigma2 > 1e-6,
            "rank 2 (max s3/s1 " + fmt("%.1e", worst_rank_ratio) + ", min s2/s1 " + fmt("%.1e", min_sigma2) + ")");
  o.require(bias.degenerate && zeros && bias.values.size() == 64u * 64u, "coincident pair flagged with zero map");
  return o;
}

// 3 ---------------------------------------------------------------------------

Outcome sampler_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto sched =
      diffusion::schedule_linear(diffusion::kDefaultSteps, diffusion::kDefaultBetaStart, diffusion::kDefaultBetaEnd);
  const auto x0 = diffusion::gaussian<double>({3, 3, 32, 32}, 5);
  const diffusion::EpsModel oracle = [&](const diff::Tensor<double>& xt, int t) {
    const double ab = sched.alpha_bars[static_cast<std::size_t>(t)];
    diff::Tensor<double> eps(xt.shape());
    for (std::size_t i = 0; i < xt.numel(); ++i) eps[i] = (xt[i] - std::sqrt(ab) * x0[i]) / std::sqrt(1.0 - ab);
    return eps;
  };
  diffusion::SamplerOptions opts;
  opts.steps = 50;
  opts.eta = 0.0;
  opts.seed = 9;
  const auto x = diffusion::ddim_sample(sched, oracle, x0.shape(), opts);
  double err = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) err = std::max(err, std::abs(x[i] - x0[i]));
  const double secs = seconds_since(t0);
  Outcome o;
  o.require(err < kSamplerTol, "50-step eta=0 max abs error " + fmt("%.2e", err));
  o.require(secs < kSamplerBudgetSec, fmt("%.2f s", secs));
  return o;
}

// 4 ---------------------------------------------------------------------------

double mse(const Image& a, const Image& b) {
  const double p = metrics::psnr(a, b);
  return std::pow(10.0, -p / 10.0);
}

Outcome srt_overfit() {
  const auto t0 = std::chrono::steady_clock::now();
  scenes::DatasetOptions data;
  data.train_views = 8;
  const scenes::SceneData scene = scenes::make_scene(data, scenes::Split::kTrain, 0);
  std::vector<srt::PosedImage> views;
  for (const auto& v : scene.views) views.push_back(srt::posed(v));

  const srt::SRTConfig config;  // defaults, 32x32
  auto params = srt::init_params<float>(config, derive_seed(4, 0x737274));
  const std::vector<srt::Example> batch{{views, views}};
  constexpr int kSteps = 2000;
  constexpr int kRays = 256;  // per target view, a quarter of its pixels
  diff::AdamWOptions opt;
  opt.weight_decay = 0.0;
  for (int s = 0; s < kSteps; ++s) {
    opt.lr = s < kSteps * 8 / 10 ? 1e-3 : 1e-4;
    srt::train_step(params, config, batch, opt, derive_seed(4, 0x72617973, static_cast<std::uint64_t>(s)), kRays);
  }

  std::vector<camera::CameraSpec> cams;
  for (const auto& v : views) cams.push_back(v.camera);
  const auto rendered = srt::render_views(params, config, views, cams);
  double train_mse = 0;
  for (std::size_t i = 0; i < views.size(); ++i) train_mse += mse(rendered[i], views[i].image) / views.size();

  // Held-out pose: between two training azimuths at 30 deg elevation.
  const auto test_cam = scenes::test_rig()[1];
  const Image truth = scenes::render_view(scene.spec, test_cam).image;
  const double held_out = metrics::psnr(srt::render_view(params, config, views, test_cam), truth);
  const double gray = metrics::psnr(Image(truth.width, truth.height, scenes::kBackground), truth);
  const double secs = seconds_since(t0);

  Outcome o;
  o.require(train_mse < kOverfitMse, "training-pixel MSE " + fmt("%.4f", train_mse));
  o.require(held_out > kOverfitHeldOutPsnr,
            "held-out PSNR " + fmt("%.2f dB", held_out) + " (gray baseline " + fmt("%.2f dB)", gray));
  o.require(secs < kOverfitBudgetSec, fmt("%.0f s", secs));
  return o;
}

// Shared run setup for 5, 6 and 9 -------------------------------------------

cli::RunConfig make_config(const json& patch) {
  json doc = json::object();
  doc.merge_patch(patch);
  return cli::parse_config(doc);
}

// 5 ---------------------------------------------------------------------------

Outcome diffusion_signal(const fs::path& work) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path dir = work / "c5";
  const cli::RunConfig cfg = make_config({
      {"seed", 5},
      {"data_dir", (dir / "data").string()},
      {"dataset", {{"train_scenes", 4}, {"test_scenes", 1}}},
      {"train_srt",
       {{"steps", 300}, {"lr", 1e-3}, {"lr_final", 1e-4}, {"batch_scenes", 4}, {"rays_per_target", 256},
        {"log_every", 100}}},
      {"train_diff", {{"steps", 2000}, {"lr", 1e-3}, {"lr_final", 1e-4}, {"batch_scenes", 2}, {"log_every", 250}}},
  });
  cli::gen_data(cli::open_run(cfg, cfg.data_dir, true));
  const cli::Context ctx = cli::open_run(cfg, dir / "run", true);
  cli::train_srt(ctx);
  cli::train_diff(ctx);

  const auto srt_params = diff::load_checkpoint<float>(ctx.out / cli::kSrtCheckpoint);
  const auto unet_params = diff::load_checkpoint<float>(ctx.out / cli::kDiffusionCheckpoint);
  const auto untrained = diffusion::init_unet_params<float>(cfg.unet, 1);
  const auto sched = diffusion::schedule_linear(cfg.schedule.steps, cfg.schedule.beta_start, cfg.schedule.beta_end);

  // Fresh view splits and fresh (t, eps) draws on the four training scenes.
  const auto manifest = scenes::load_manifest(cfg.data_dir);
  std::vector<diffusion::Example> examples;
  std::mt19937_64 rng(55);
  for (const auto& entry : manifest.train) {
    const auto scene = scenes::load_scene(cfg.data_dir, entry);
    for (int rep = 0; rep < 2; ++rep) {
      std::vector<std::size_t> idx(scene.views.size());
      std::iota(idx.begin(), idx.end(), 0);
      std::shuffle(idx.begin(), idx.end(), rng);
      srt::Example ex;
      for (int k = 0; k < 3; ++k) ex.inputs.push_back(srt::posed(scene.views[idx[k]]));
      for (int k = 3; k < 6; ++k) ex.targets.push_back(srt::posed(scene.views[idx[k]]));
      examples.push_back(diffusion::make_example(srt_params, cfg.srt, ex));
    }
  }
  const double loss = diffusion::evaluate_loss(unet_params, cfg.unet, sched, examples, 77, 16);
  const double baseline = diffusion::evaluate_loss(untrained, cfg.unet, sched, examples, 77, 16);
  const double secs = seconds_since(t0);

  Outcome o;
  o.require(loss < kDiffusionLoss, "vldm_loss " + fmt("%.4f", loss) + " (predict-zero " + fmt("%.4f)", baseline));
  o.require(secs < kDiffusionBudgetSec, fmt("%.0f s", secs));
  return o;
}

// 6 ---------------------------------------------------------------------------

json trend_patch(const fs::path& data) {
  return {
      {"seed", 6},
      {"data_dir", data.string()},
      {"train_srt",
       {{"steps", 1500}, {"lr", 1e-3}, {"lr_final", 1e-4}, {"batch_scenes", 4}, {"rays_per_target", 256},
        {"log_every", 250}}},
      {"train_diff", {{"steps", 1000}, {"lr", 1e-3}, {"lr_final", 1e-4}, {"batch_scenes", 2}, {"log_every", 250}}},
      {"sampler", {{"steps", 25}, {"candidates", 2}}},
      {"eval", {{"scenes", 20}, {"target_views", 5}, {"chamfer_samples", 2000}}},
  };
}

json evaluate_with(const cli::RunConfig& base, const fs::path& trained, const fs::path& out, int input_views) {
  cli::RunConfig cfg = base;
  cfg.eval.input_views = input_views;
  fs::create_directories(out);
  for (const char* f : {cli::kSrtCheckpoint, cli::kDiffusionCheckpoint}) {
    fs::copy_file(trained / f, out / f, fs::copy_options::overwrite_existing);
  }
  const cli::Context ctx = cli::open_run(cfg, out, true);
  cli::sample(ctx);
  cli::evaluate(ctx);
  return json::parse(slurp(out / cli::kMetricsFile));
}

Outcome trend_checks(const fs::path& work) {
  const fs::path dir = work / "c6";
  json patch = trend_patch(dir / "data");
  const cli::RunConfig on = make_config(patch);
  patch["srt"] = {{"epipolar_enabled", false}};
  const cli::RunConfig off = make_config(patch);
  cli::gen_data(cli::open_run(on, on.data_dir, true));

  for (const auto& [cfg, name] : {std::pair{&on, "epipolar_on"}, std::pair{&off, "epipolar_off"}}) {
    const cli::Context ctx = cli::open_run(*cfg, dir / name, true);
    cli::train_srt(ctx);
    cli::train_diff(ctx);
  }
  const json one = evaluate_with(on, dir / "epipolar_on", dir / "on_1view", 1);
  const json three = evaluate_with(on, dir / "epipolar_on", dir / "on_3view", 3);
  const json no_epi = evaluate_with(off, dir / "epipolar_off", dir / "off_3view", 3);

  const double p1 = one["psnr"], p3 = three["psnr"], p_off = no_epi["psnr"];
  const double s1 = one["extra"]["srt_psnr"], s3 = three["extra"]["srt_psnr"], s_off = no_epi["extra"]["srt_psnr"];
  Outcome o;
  o.require(p3 > p1, "(a) PSNR 3 views " + fmt("%.3f", p3) + " vs 1 view " + fmt("%.3f", p1) + " (SRT " +
                         fmt("%.3f", s3) + " vs " + fmt("%.3f)", s1));
  o.require(p_off < p3, "(b) without epipolar bias " + fmt("%.3f", p_off) + " vs " + fmt("%.3f", p3) + " (SRT " +
                            fmt("%.3f", s_off) + " vs " + fmt("%.3f)", s3));
  return o;
}

// 7 ---------------------------------------------------------------------------

recon::Mask exact_sphere_mask(const camera::CameraSpec& cam, double r) {
  const auto& in = cam.intrinsics;
  const double d = cam.radius;
  const double rho = in.fx * r / std::sqrt(d * d - r * r);
  recon::Mask m{in.width, in.height, std::vector<std::uint8_t>(static_cast<std::size_t>(in.width) * in.height)};
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      const double qx = std::clamp(in.cx, double(x), x + 1.0), qy = std::clamp(in.cy, double(y), y + 1.0);
      m.bits[static_cast<std::size_t>(y) * in.width + x] = std::hypot(qx - in.cx, qy - in.cy) <= rho ? 1 : 0;
    }
  }
  return m;
}

Outcome geometry_suite() {
  constexpr double r = 0.5;
  scenes::SceneSpec sphere;
  scenes::Primitive p;
  p.size = Eigen::Vector3d::Constant(r);
  sphere.primitives.push_back(p);
  const scenes::RigOptions rig{64, 64.0, 3.5};
  const VoxelGrid truth = scenes::voxelize(sphere, 64);

  std::vector<recon::Silhouette> rendered, exact;
  for (const auto& cam : scenes::test_rig(rig)) {
    rendered.push_back({recon::foreground_mask(scenes::render_view(sphere, cam)), cam});
    exact.push_back({exact_sphere_mask(cam, r), cam});
  }
  const double iou = metrics::volume_iou(recon::space_carve(rendered, 64), truth).iou;
  const VoxelGrid hull = recon::space_carve(exact, 64);
  std::size_t missing = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) missing += (truth[i] && !hull[i]) ? 1 : 0;

  const double area = recon::marching_cubes(truth).area();
  const double analytic = 4 * std::numbers::pi * r * r;

  Outcome o;
  o.require(iou > kCarveIou, "carved IoU " + fmt("%.4f", iou));
  o.require(missing == 0, "visual hull misses " + std::to_string(missing) + " occupied voxels");
  o.require(std::abs(area - analytic) < kAreaTol * analytic,
            "mesh area " + fmt("%.4f", area) + " vs " + fmt("%.4f", analytic));
  return o;
}

// 8 ---------------------------------------------------------------------------

Outcome metric_suite() {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image x(32, 32);
  for (float& v : x.rgb) v = u(rng);
  const double self = metrics::ssim(x, x);

  std::uniform_real_distribution<double> c(-1.0, 1.0);
  std::vector<Eigen::Vector3d> a(200), b(200);
  for (auto& q : a) q = {c(rng), c(rng), c(rng)};
  for (auto& q : b) q = {c(rng), c(rng), c(rng)};
  auto brute_dir = [](const std::vector<Eigen::Vector3d>& from, const std::vector<Eigen::Vector3d>& to) {
    double s = 0;
    for (const auto& q : from) {
      double best = 1e300;
      for (const auto& t : to) best = std::min(best, (q - t).norm());
      s += best;
    }
    return s / static_cast<double>(from.size());
  };
  const double brute = 0.5 * (brute_dir(a, b) + brute_dir(b, a));
  const double fast = metrics::chamfer(a, b);

  // Half-unit cubes offset by half their side along x: IoU = 0.5 / 1.5.
  VoxelGrid g1(64), g2(64);
  for (int z = 0; z < 64; ++z) {
    for (int y = 0; y < 64; ++y) {
      for (int xi = 0; xi < 64; ++xi) {
        const auto q = g1.cell_center(xi, y, z);
        const bool in_yz = std::abs(q.y()) < 0.5 && std::abs(q.z()) < 0.5;
        g1.set(xi, y, z, in_yz && q.x() > -0.5 && q.x() < 0.5);
        g2.set(xi, y, z, in_yz && q.x() > 0.0 && q.x() < 1.0);
      }
    }
  }
  const double iou = metrics::volume_iou(g1, g2).iou;

  // 0.125 is exact in binary: MSE is exactly 1/64.
  const double spot_64 = metrics::psnr(Image(4, 4, {0.25f, 0.25f, 0.25f}), Image(4, 4, {0.375f, 0.375f, 0.375f}));
  // Three of 300 values off by one: MSE 0.01.
  Image p(10, 10, {0.0f, 0.0f, 0.0f}), q = p;
  for (int k = 0; k < 3; ++k) q.at(k, 0, k) = 1.0f;
  const double spot_20 = metrics::psnr(p, q);

  Outcome o;
  o.require(std::abs(self - 1.0) < kSsimTol, "ssim(x,x) " + fmt("%.9f", self));
  o.require(std::abs(fast - brute) < kChamferTol, "chamfer vs brute force " + fmt("%.1e", std::abs(fast - brute)));
  o.require(std::abs(iou - kOffsetIou) < kOffsetIouTol, "offset-cube IoU " + fmt("%.4f", iou));
  o.require(spot_20 == 20.0 && spot_64 == 10.0 * std::log10(64.0),
            "PSNR spot values " + fmt("%.15f dB", spot_20) + ", " + fmt("%.15f dB", spot_64));
  return o;
}

// 9 ---------------------------------------------------------------------------

json tiny_patch(const fs::path& data) {
  return {{"seed", 9},
          {"data_dir", data.string()},
          {"dataset", {{"train_scenes", 3}, {"test_scenes", 2}, {"train_views", 6}, {"voxel_resolution", 32}}},
          {"srt",
           {{"model_dim", 16}, {"encoder_layers", 1}, {"decoder_layers", 1}, {"heads", 2}, {"conv_channels", 8},
            {"ray_frequencies", 2}}},
          {"unet",
           {{"base_channels", 8}, {"channel_mult", {1, 2}}, {"attention_resolutions", {16}}, {"groups", 4},
            {"heads", 2}, {"context_dim", 16}}},
          {"train_srt", {{"steps", 5}, {"batch_scenes", 2}, {"rays_per_target", 64}}},
          {"train_diff", {{"steps", 3}, {"batch_scenes", 2}}},
          {"sampler", {{"steps", 4}, {"candidates", 2}}},
          {"eval", {{"scenes", 2}, {"input_views", 2}, {"target_views", 3}, {"voxel_resolution", 32},
                    {"chamfer_samples", 500}}}};
}

Outcome determinism(const fs::path& work) {
  const fs::path dir = work / "c9";
  const cli::RunConfig cfg = make_config(tiny_patch(dir / "data"));
  cli::gen_data(cli::open_run(cfg, cfg.data_dir, true));
  for (const char* run : {"a", "b"}) {
    const cli::Context ctx = cli::open_run(cfg, dir / run, true);
    cli::train_srt(ctx);
    cli::train_diff(ctx);
    cli::sample(ctx);
    cli::reconstruct(ctx);
    cli::evaluate(ctx);
  }
  bool same = true;
  for (const char* f : {cli::kSrtCheckpoint, cli::kDiffusionCheckpoint, cli::kSamplesFile, cli::kMetricsFile}) {
    same = same && slurp(dir / "a" / f) == slurp(dir / "b" / f);
  }

  // Checkpoint round trip: values and re-serialized bytes.
  const fs::path ckpt = dir / "a" / cli::kDiffusionCheckpoint;
  const auto params = diff::load_checkpoint<float>(ckpt);
  diff::save_checkpoint(dir / "resaved.ckpt", params);
  const auto again = diff::load_checkpoint<float>(dir / "resaved.ckpt");
  bool values = params.names() == again.names();
  for (const auto& name : params.names()) {
    values = values && params.value(name).storage() == again.value(name).storage();
  }
  const bool ckpt_bytes = slurp(ckpt) == slurp(dir / "resaved.ckpt");

  // Occupancy round trip on a grid with a non-multiple-of-8 cell count.
  VoxelGrid grid(13);
  std::mt19937_64 rng(9);
  for (std::size_t i = 0; i < grid.size(); ++i) grid.set(i, (rng() & 1) != 0);
  save_occupancy(dir / "grid.bin", grid);
  const VoxelGrid loaded = load_occupancy(dir / "grid.bin");
  save_occupancy(dir / "grid2.bin", loaded);
  const bool occ = loaded == grid && slurp(dir / "grid.bin") == slurp(dir / "grid2.bin");
  const fs::path recon_occ = dir / "a" / "recon" / "scene_0000" / "occupancy.bin";
  const bool recon_same = slurp(recon_occ) == slurp(dir / "b" / "recon" / "scene_0000" / "occupancy.bin") &&
                          fs::exists(recon_occ);

  Outcome o;
  o.require(same && recon_same, "two fixed-seed runs give identical checkpoints, samples, occupancy and metrics");
  o.require(values && ckpt_bytes, "checkpoint round trip");
  o.require(occ, "occupancy round trip");
  return o;
}

}  // namespace
}  // namespace mvdiff::acceptance

int main(int argc, char** argv) {
  using namespace mvdiff::acceptance;
  CLI::App app{"mvdiff acceptance suite"};
  std::vector<int> only;
  std::string work = (fs::temp_directory_path() / "mvdiff_acceptance").string();
  bool keep = false;
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  app.add_option("--work", work, "scratch directory");
  app.add_flag("--keep", keep, "keep the scratch directory");
  CLI11_PARSE(app, argc, argv);

  fs::remove_all(work);
  fs::create_directories(work);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient suite", gradient_suite},
      {"epipolar suite", epipolar_suite},
      {"sampler oracle", sampler_oracle},
      {"SRT overfit", srt_overfit},
      {"diffusion learning signal", [&] { return diffusion_signal(work); }},
      {"trend checks", [&] { return trend_checks(work); }},
      {"geometry suite", geometry_suite},
      {"metric suite", metric_suite},
      {"determinism and formats", [&] { return determinism(work); }},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.contains(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("threw: ") + e.what();
    }
    failures += o.pass ? 0 : 1;
    std::printf("criterion %d [PRIMARY] %-26s %s  (%.1f s)  %s\n", id, criteria[i].first.c_str(),
                o.pass ? "PASS" : "FAIL", seconds_since(t0), o.detail.c_str());
    std::fflush(stdout);
  }
  if (!keep) fs::remove_all(work);
  return failures == 0 ? 0 : 1;
}
