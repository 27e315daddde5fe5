// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "commands.h"
#include "run_config.h"

namespace mvdiff::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class TempDir {
 public:
  TempDir()
      : path_(fs::temp_directory_path() /
              (std::string("mvdiff_cli_") + ::testing::UnitTest::GetInstance()->current_test_info()->name())) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json tiny(const fs::path& data) {
  return {{"data_dir", data.string()},
          {"dataset", {{"train_scenes", 2}, {"test_scenes", 2}, {"train_views", 6}, {"voxel_resolution", 32}}},
          {"srt",
           {{"model_dim", 16}, {"encoder_layers", 1}, {"decoder_layers", 1}, {"heads", 2}, {"conv_channels", 8},
            {"ray_frequencies", 2}}},
          {"unet",
           {{"base_channels", 8}, {"channel_mult", {1, 2}}, {"attention_resolutions", {16}}, {"groups", 4},
            {"heads", 2}, {"context_dim", 16}}},
          {"train_srt", {{"steps", 3}, {"batch_scenes", 2}, {"rays_per_target", 64}}},
          {"train_diff", {{"steps", 2}, {"batch_scenes", 2}}},
          {"sampler", {{"steps", 3}, {"candidates", 2}}},
          {"eval", {{"scenes", 2}, {"target_views", 3}, {"voxel_resolution", 32}, {"chamfer_samples", 300}}}};
}

void run_pipeline(const RunConfig& cfg, const fs::path& out) {
  const Context ctx = open_run(cfg, out, /*quiet=*/true);
  train_srt(ctx);
  train_diff(ctx);
  sample(ctx);
  reconstruct(ctx);
  evaluate(ctx);
}

std::string error_of(const json& doc) {
  try {
    parse_config(doc);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(RunConfigTest, Defaults) {
  const RunConfig c = parse_config(json::object());
  EXPECT_EQ(c.train_srt.lr, 1e-4);
  EXPECT_EQ(c.train_srt.lr_final, 1e-5);
  EXPECT_EQ(c.train_srt.weight_decay, 0.01);
  EXPECT_EQ(c.train_srt.input_views, 3);
  EXPECT_EQ(c.train_srt.target_views, 3);
  EXPECT_EQ(c.train_srt.batch_scenes, 8);
  EXPECT_EQ(c.sampler.candidates, 5);
  EXPECT_EQ(c.schedule.steps, 200);
  EXPECT_EQ(c.unet.context_dim, c.srt.model_dim);
}

TEST(RunConfigTest, LearningRateDropsAtEightyPercent) {
  TrainConfig t;
  t.steps = 100;
  EXPECT_EQ(t.lr_at(0), 1e-4);
  EXPECT_EQ(t.lr_at(79), 1e-4);
  EXPECT_EQ(t.lr_at(80), 1e-5);
  EXPECT_EQ(t.lr_at(99), 1e-5);
}

TEST(RunConfigTest, ErrorsNameTheFieldPath) {
  EXPECT_EQ(error_of({{"srt", {{"model_dimm", 3}}}}), "srt.model_dimm: unknown key");
  EXPECT_EQ(error_of({{"train_srt", {{"steps", "many"}}}}), "train_srt.steps: expected integer, got string");
  EXPECT_EQ(error_of({{"train_srt", {{"steps", 1.5}}}}), "train_srt.steps: expected integer, got number");
  EXPECT_EQ(error_of({{"unet", {{"channel_mult", {1, "x"}}}}}), "unet.channel_mult[1]: expected integer, got string");
  EXPECT_EQ(error_of({{"seed", -1}}), "seed: expected non-negative integer, got integer");
  EXPECT_EQ(error_of({{"sampler", {{"steps", 500}}}}), "sampler.steps: must lie in [1, schedule.steps]");
  EXPECT_EQ(error_of({{"unet", {{"context_dim", 32}}}}), "unet.context_dim: must equal srt.model_dim");
  EXPECT_EQ(error_of({{"ablate", {{"toggle", "both"}}}}).rfind("ablate.toggle:", 0), 0u);
  EXPECT_EQ(error_of(json::array()), "config: expected object, got array");
  EXPECT_EQ(error_of({{"train_srt", {{"lr", 1}}}}), "");  // integers are fine for real fields
  EXPECT_EQ(parse_config({{"seed", 7}}).seed, 7u);        // signed literal, non-negative
}

TEST(RunConfigTest, MalformedFileIsConfigError) {
  TempDir dir;
  std::ofstream(dir.path() / "bad.json") << "{\"srt\": ";
  EXPECT_THROW(load_config((dir.path() / "bad.json").string()), ConfigError);
  EXPECT_THROW(load_config((dir.path() / "missing.json").string()), ConfigError);
}

TEST(RunConfigTest, OverridesUseDotPaths) {
  json doc = json::object();
  apply_override(doc, "train_srt.steps=42");
  apply_override(doc, "srt.epipolar_enabled=false");
  apply_override(doc, "data_dir=some/where");
  apply_override(doc, "unet.channel_mult=[1,2]");
  const RunConfig c = parse_config(doc);
  EXPECT_EQ(c.train_srt.steps, 42);
  EXPECT_FALSE(c.srt.epipolar_enabled);
  EXPECT_EQ(c.data_dir, "some/where");
  EXPECT_EQ(c.unet.channel_mult, (std::vector<int>{1, 2}));
  EXPECT_THROW(apply_override(doc, "novalue"), ConfigError);
  apply_override(doc, "train_srt.bogus=1");
  EXPECT_THROW(parse_config(doc), ConfigError);
}

TEST(RunConfigTest, EchoReproducesConfig) {
  TempDir dir;
  const RunConfig c = parse_config(tiny(dir.path()));
  const std::string echo = dump_config(c);
  const RunConfig back = parse_config(json::parse(echo));
  EXPECT_EQ(dump_config(back), echo);
}

TEST(Commands, PipelineIsDeterministic) {
  TempDir dir;
  const RunConfig cfg = parse_config(tiny(dir.path() / "data"));
  gen_data(open_run(cfg, dir.path() / "data", true));
  run_pipeline(cfg, dir.path() / "a");
  run_pipeline(cfg, dir.path() / "b");
  for (const char* f : {kSrtCheckpoint, kDiffusionCheckpoint, kMetricsFile, kSamplesFile, kConfigFile}) {
    EXPECT_EQ(slurp(dir.path() / "a" / f), slurp(dir.path() / "b" / f)) << f;
  }
  const json m = json::parse(slurp(dir.path() / "a" / kMetricsFile));
  for (const char* key : {"psnr", "ssim", "lpips", "chamfer", "volume_iou"}) EXPECT_TRUE(m.contains(key)) << key;
  EXPECT_TRUE(m["lpips"].is_null());
  EXPECT_TRUE(m["psnr"].is_number());
  EXPECT_TRUE(fs::exists(dir.path() / "a" / "recon" / "scene_0000" / "mesh.obj"));
  EXPECT_TRUE(fs::exists(dir.path() / "a" / "samples" / "scene_0000" / "gen_0.ppm"));
  EXPECT_TRUE(fs::exists(dir.path() / "a" / kLogFile));

  // Evaluation needs nothing outside the run directory.
  const fs::path moved = dir.path() / "moved";
  fs::rename(dir.path() / "a", moved);
  fs::remove_all(dir.path() / "data");
  fs::remove(moved / kMetricsFile);
  evaluate(open_run(cfg, moved, true));
  EXPECT_EQ(slurp(moved / kMetricsFile), slurp(dir.path() / "b" / kMetricsFile));
}

TEST(Commands, MissingArtifactsAreReported) {
  TempDir dir;
  const RunConfig cfg = parse_config(tiny(dir.path() / "nodata"));
  const Context ctx = open_run(cfg, dir.path() / "run", true);
  EXPECT_THROW(train_srt(ctx), MissingArtifact);
  EXPECT_THROW(train_diff(ctx), MissingArtifact);
  EXPECT_THROW(sample(ctx), MissingArtifact);
  EXPECT_THROW(reconstruct(ctx), MissingArtifact);
  EXPECT_THROW(evaluate(ctx), MissingArtifact);
}

void write_metrics(const fs::path& dir, int refs, double psnr) {
  fs::create_directories(dir);
  std::ofstream(dir / kMetricsFile) << json{{"psnr", psnr}, {"ssim", 0.5}, {"lpips", nullptr}, {"chamfer", nullptr},
                                            {"volume_iou", 0.25}, {"extra", {{"input_views", refs}}}}
                                           .dump();
}

TEST(Report, SingleRunIsOneRow) {
  TempDir dir;
  write_metrics(dir.path() / "only", 1, 20.0);
  const auto rows = collect_report({dir.path() / "only"});
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].run, "only");
  const std::string text = format_report(rows);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
}

TEST(Report, SortedByReferenceViewsAndConsistent) {
  TempDir dir;
  write_metrics(dir.path() / "three", 3, 21.123456);
  write_metrics(dir.path() / "one", 1, 19.5);
  write_metrics(dir.path() / "two", 2, 20.25);
  const auto rows = collect_report({dir.path() / "three", dir.path() / "one", dir.path() / "two"});
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].reference_views, 1);
  EXPECT_EQ(rows[1].reference_views, 2);
  EXPECT_EQ(rows[2].reference_views, 3);
  const json j = report_json(rows);
  const std::string text = format_report(rows);
  for (const json& r : j["rows"]) {
    std::ostringstream num;
    num << std::fixed << std::setprecision(4) << r["psnr"].get<double>();
    EXPECT_NE(text.find(num.str()), std::string::npos) << num.str();
    EXPECT_TRUE(r["chamfer"].is_null());
  }
  EXPECT_EQ(j["rows"][2]["psnr"].get<double>(), 21.1235);
  EXPECT_THROW(collect_report({dir.path() / "absent"}), MissingArtifact);
}

}  // namespace
}  // namespace mvdiff::cli
