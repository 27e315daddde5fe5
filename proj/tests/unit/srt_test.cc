// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include "mvdiff/diffcore/gradcheck.h"
#include "mvdiff/diffcore/ops.h"
#include "mvdiff/srt/srt.h"

namespace mvdiff::srt {
namespace {

SRTConfig micro_config() {
  SRTConfig c;
  c.image_size = 16;
  c.patch_size = 4;
  c.model_dim = 16;
  c.encoder_layers = 2;
  c.decoder_layers = 1;
  c.heads = 2;
  c.conv_channels = 4;
  c.ray_frequencies = 2;
  return c;
}

std::vector<PosedImage> make_views(const SRTConfig& config, int count, std::uint64_t seed = 3) {
  const scenes::SceneSpec spec = scenes::generate_scene(seed, 2);
  scenes::RigOptions rig;
  rig.image_size = config.image_size;
  rig.focal = config.image_size;
  std::vector<PosedImage> views;
  for (const auto& cam : scenes::training_rig(spec, seed, count, rig)) {
    views.push_back(posed(scenes::render_view(spec, cam)));
  }
  return views;
}

// Random head weights so outputs depend on the latent.
template <typename T>
void randomize(ParamStore<T>& params, std::uint64_t seed, double scale = 0.3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (auto& e : params.entries()) {
    if (e.name.starts_with("srt/head") || e.name.ends_with("/g") || e.name.ends_with("/b")) {
      for (T& v : e.value.storage()) v += static_cast<T>(n(rng));
    }
  }
}

TEST(SrtConfig, ValidationAndJson) {
  SRTConfig c;
  EXPECT_NO_THROW(c.validate());
  c.heads = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = SRTConfig{};
  c.patch_size = 5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  const SRTConfig d = micro_config();
  EXPECT_EQ(nlohmann::json(d).get<SRTConfig>(), d);
}

TEST(EncodeViews, TokenCountAndProvenance) {
  const SRTConfig config;
  const auto params = init_params<float>(config, 1);
  for (int n : {1, 3}) {
    Tape<float> tape;
    const auto z = encode_views(tape, params, config, make_views(config, n));
    EXPECT_EQ(z.tokens.shape(), (diff::Shape{64u * n, 64u}));
    ASSERT_EQ(z.provenance.size(), 64u * n);
    for (std::size_t k = 0; k < z.provenance.size(); ++k) {
      EXPECT_EQ(z.provenance[k], (TokenProvenance{k / 64, k % 64}));
    }
    EXPECT_TRUE(z.tokens.value().all_finite());
  }
}

TEST(EncodeViews, ResolutionMismatchThrows) {
  const SRTConfig config;
  const auto params = init_params<float>(config, 1);
  auto views = make_views(config, 2);
  views[1].image = downsample(views[1].image, 2);
  Tape<float> tape;
  EXPECT_THROW(encode_views(tape, params, config, views), ShapeError);
  EXPECT_THROW(encode_views(tape, params, config, {}), std::invalid_argument);
}

TEST(EncodeViews, DisabledEpipolarEqualsZeroBias) {
  SRTConfig on = micro_config();
  SRTConfig off = on;
  off.epipolar_enabled = false;
  const auto params = init_params<float>(on, 2);
  const auto views = make_views(on, 3);
  Tape<float> t1, t2, t3;
  const auto plain = encode_views(t1, params, off, views);
  const Tensor<float> zeros({3 * on.tokens_per_view(), 3 * on.tokens_per_view()});
  const auto zero_bias = encode_views(t2, params, on, views, &zeros);
  EXPECT_EQ(plain.tokens.value(), zero_bias.tokens.value());
  // The real bias does change the latent.
  const auto biased = encode_views(t3, params, on, views);
  EXPECT_NE(plain.tokens.value(), biased.tokens.value());
}

TEST(EncodeViews, BiasMatrixBlocks) {
  const SRTConfig config = micro_config();
  const auto views = make_views(config, 2);
  const Tensor<double> bias = epipolar_bias_matrix<double>(views, config);
  const std::size_t p = config.tokens_per_view();
  const camera::EpipolarBiasMap map =
      camera::epipolar_bias(views[0].camera.pose(), views[1].camera.pose(), views[0].camera.intrinsics,
                            views[1].camera.intrinsics, camera::FeatureGrid{4, 4}, config.sigma_px);
  for (std::size_t a = 0; a < p; ++a) {
    for (std::size_t b = 0; b < p; ++b) {
      EXPECT_EQ(bias.at({a, b}), 0.0);
      EXPECT_EQ(bias.at({p + a, p + b}), 0.0);
      EXPECT_EQ(bias.at({a, p + b}), map.at(a, b));
    }
  }
}

TEST(EncodeViews, PermutationEquivariance) {
  const SRTConfig config = micro_config();
  const auto params = init_params<double>(config, 4);
  const auto views = make_views(config, 3);
  const std::vector<std::size_t> order{2, 0, 1};
  std::vector<PosedImage> permuted;
  for (std::size_t i : order) permuted.push_back(views[i]);
  Tape<double> t1, t2;
  const auto z = encode_views(t1, params, config, views);
  const auto zp = encode_views(t2, params, config, permuted);
  const std::size_t p = config.tokens_per_view(), d = 16;
  for (std::size_t k = 0; k < zp.provenance.size(); ++k) {
    const TokenProvenance prov = zp.provenance[k];
    const std::size_t original = order[prov.view] * p + prov.cell;
    for (std::size_t c = 0; c < d; ++c) {
      EXPECT_NEAR(zp.tokens.value()[k * d + c], z.tokens.value()[original * d + c], 1e-5);
    }
  }
}

TEST(DecodeRays, UntrainedOutputIsConstant) {
  const SRTConfig config;
  const auto params = init_params<float>(config, 5);
  Tape<float> tape;
  const auto z = encode_views(tape, params, config, make_views(config, 2));
  const Var<float> rgb = predict_latent_image(tape, params, config, z, scenes::test_rig()[3]);
  EXPECT_EQ(rgb.shape(), (diff::Shape{32, 32, 3}));
  for (float v : rgb.value().data()) EXPECT_EQ(v, 0.5f);
}

TEST(DecodeRays, BatchedEqualsLooped) {
  const SRTConfig config = micro_config();
  auto params = init_params<double>(config, 6);
  randomize(params, 7);
  const auto views = make_views(config, 2);
  scenes::RigOptions rig;
  rig.image_size = 16;
  rig.focal = 16;
  const camera::CameraSpec target = scenes::test_rig(rig)[5];
  Tape<double> tape;
  const auto z = encode_views(tape, params, config, views);
  const Var<double> image = predict_latent_image(tape, params, config, z, target);
  const auto rays = pixel_rays(target);
  for (std::size_t r = 0; r < rays.size(); r += 37) {
    const Var<double> one = decode_rays(tape, params, config, z, {rays[r]});
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(one.value()[c], image.value()[r * 3 + c], 1e-12);
  }
  // Same inputs, same answer.
  const Var<double> again = predict_latent_image(tape, params, config, z, target);
  EXPECT_EQ(again.value(), image.value());
}

TEST(DecodeRays, GradientWrtLatent) {
  const SRTConfig config = micro_config();
  auto params = init_params<double>(config, 8);
  randomize(params, 9);
  const auto views = make_views(config, 2);
  Tape<double> tape;
  const Tensor<double> z0 = encode_views(tape, params, config, views).tokens.value();
  const auto rays = pixel_rays(scenes::test_rig({16, 16.0, 3.5})[2]);
  const std::vector<camera::Ray> some(rays.begin(), rays.begin() + 12);
  const diff::GradCheckReport r = diff::check_input_gradients(
      [&](Tape<double>& t, const std::vector<Var<double>>& in) {
        SetLatent<double> z{in[0], {}};
        return diff::random_projection(decode_rays(t, params, config, z, some), 3);
      },
      {z0});
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(Srt, FullNetworkParameterGradients) {
  SRTConfig config = micro_config();
  config.image_size = 8;
  config.encoder_layers = 4;
  auto params = init_params<double>(config, 10);
  randomize(params, 11);
  const auto views = make_views(config, 2);
  const auto rays = pixel_rays(views[0].camera);
  const std::vector<camera::Ray> some(rays.begin(), rays.begin() + 6);
  diff::GradCheckOptions opts;
  opts.max_entries = 6;
  const diff::GradCheckReport r = diff::check_param_gradients(
      [&](Tape<double>& t, const ParamStore<double>& p) {
        return diff::random_projection(decode_rays(t, p, config, encode_views(t, p, config, views), some), 5);
      },
      params, opts);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  EXPECT_GT(r.checked, 100u);
}

TEST(ReconLoss, Formula) {
  Tape<double> tape;
  Tensor<double> truth({1, 3}, std::vector<double>{0.2, 0.3, 0.4});
  Tensor<double> pred({1, 3}, std::vector<double>{0.3, 0.3, 0.4});
  EXPECT_NEAR(recon_loss(tape.constant(pred), truth).value().item(), 0.01, 1e-15);
  EXPECT_EQ(recon_loss(tape.constant(truth), truth).value().item(), 0.0);
  EXPECT_THROW(recon_loss(tape.constant(Tensor<double>({2, 3})), truth), ShapeError);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  for (int i = 0; i < 100; ++i) {
    Tensor<double> a({4, 3}), b({4, 3});
    for (std::size_t k = 0; k < 12; ++k) {
      a[k] = n(rng);
      b[k] = n(rng);
    }
    EXPECT_GT(recon_loss(tape.constant(a), b).value().item(), 0.0);
  }
}

TEST(TrainStep, ReducesLossOnFixedExample) {
  const SRTConfig config = micro_config();
  auto params = init_params<float>(config, 12);
  const auto views = make_views(config, 3);
  const std::vector<Example> batch{{views, views}};
  diff::AdamWOptions opt;
  opt.lr = 3e-3;
  const StepStats first = train_step(params, config, batch, opt, 1, 64);
  StepStats last;
  for (int s = 0; s < 60; ++s) last = train_step(params, config, batch, opt, 1, 64);
  EXPECT_LT(last.loss, first.loss);
  EXPECT_EQ(last.rays, 3u * 64u);
  EXPECT_EQ(params.step(), 61u);
}

}  // namespace
}  // namespace mvdiff::srt
