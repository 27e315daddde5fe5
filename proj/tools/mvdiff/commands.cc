// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#include "commands.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/sinks/stdout_sinks.h>

#include "mvdiff/common/parallel.h"
#include "mvdiff/common/random.h"
#include "mvdiff/diffcore/checkpoint.h"
#include "mvdiff/diffusion/pipeline.h"
#include "mvdiff/metrics/metrics.h"
#include "mvdiff/recon/recon.h"
#include "mvdiff/scenes/ppm.h"

namespace mvdiff::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("missing " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

fs::path require_file(const fs::path& path, const std::string& producer) {
  if (!fs::exists(path)) throw MissingArtifact("missing " + path.string() + " (run `mvdiff " + producer + "` first)");
  return path;
}

std::vector<scenes::SceneData> load_split(const fs::path& root, scenes::Split split, int limit = -1) {
  if (!fs::exists(root / "manifest.json")) {
    throw MissingArtifact("no dataset at " + root.string() + " (run `mvdiff gen-data` first)");
  }
  const scenes::DatasetManifest manifest = scenes::load_manifest(root);
  const auto& entries = manifest.entries(split);
  const std::size_t n = limit < 0 ? entries.size() : std::min(entries.size(), static_cast<std::size_t>(limit));
  std::vector<scenes::SceneData> out(n);
  parallel_for(n, [&](std::size_t i) { out[i] = scenes::load_scene(root, entries[i]); });
  return out;
}

// Random disjoint input/target views from random scenes.
std::vector<srt::Example> draw_batch(const std::vector<scenes::SceneData>& data, const TrainConfig& t,
                                     std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::vector<srt::Example> batch;
  for (int b = 0; b < t.batch_scenes; ++b) {
    const scenes::SceneData& scene = data[pick(rng)];
    std::vector<std::size_t> idx(scene.views.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    srt::Example ex;
    for (int k = 0; k < t.input_views; ++k) ex.inputs.push_back(srt::posed(scene.views[idx[static_cast<std::size_t>(k)]]));
    for (int k = 0; k < t.target_views; ++k) {
      ex.targets.push_back(srt::posed(scene.views[idx[static_cast<std::size_t>(t.input_views + k)]]));
    }
    batch.push_back(std::move(ex));
  }
  return batch;
}

diff::AdamWOptions optimizer_at(const TrainConfig& t, int step) {
  diff::AdamWOptions o;
  o.lr = t.lr_at(step);
  o.weight_decay = t.weight_decay;
  return o;
}

// Evenly spread reference views on the 16-view test rig. Targets sit at
// fixed half-step positions so that runs with different reference counts
// score the same held-out views; a collision moves to the next free view.
std::pair<std::vector<int>, std::vector<int>> split_test_views(int inputs, int targets) {
  constexpr int n = scenes::kTestViewCount;
  std::vector<bool> taken(n, false);
  std::vector<int> in, out;
  for (int i = 0; i < inputs; ++i) {
    in.push_back(i * n / inputs);
    taken[static_cast<std::size_t>(in.back())] = true;
  }
  for (int j = 0; j < targets; ++j) {
    int v = (2 * j + 1) * n / (2 * targets);
    while (taken[static_cast<std::size_t>(v)]) v = (v + 1) % n;
    taken[static_cast<std::size_t>(v)] = true;
    out.push_back(v);
  }
  return {in, out};
}

std::string view_file(const std::string& prefix, std::size_t k) { return prefix + "_" + std::to_string(k) + ".ppm"; }

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

json rounded(const json& v) {
  if (!v.is_number()) return nullptr;
  return std::round(v.get<double>() * 1e4) / 1e4;
}

}  // namespace

Context open_run(const RunConfig& config, const fs::path& out, bool quiet) {
  fs::create_directories(out);
  write_text(out / kConfigFile, dump_config(config));
  std::vector<spdlog::sink_ptr> sinks;
  if (!quiet) sinks.push_back(std::make_shared<spdlog::sinks::stdout_sink_mt>());
  sinks.push_back(std::make_shared<spdlog::sinks::basic_file_sink_mt>((out / kLogFile).string()));
  auto log = std::make_shared<spdlog::logger>("mvdiff", sinks.begin(), sinks.end());
  log->set_pattern("[%H:%M:%S] %v");
  log->flush_on(spdlog::level::info);
  return {config, out, log};
}

void gen_data(const Context& ctx) {
  const fs::path root = ctx.out;
  ctx.log->info("generating dataset in {} ({} train / {} test scenes)", root.string(), ctx.config.dataset.train_scenes,
                ctx.config.dataset.test_scenes);
  const scenes::DatasetManifest m = scenes::write_dataset(root, ctx.config.dataset);
  ctx.log->info("wrote {} train and {} test scenes", m.train.size(), m.test.size());
}

void train_srt(const Context& ctx) {
  const RunConfig& c = ctx.config;
  const auto data = load_split(c.data_dir, scenes::Split::kTrain);
  auto params = srt::init_params<float>(c.srt, derive_seed(c.seed, 0x737274));
  ctx.log->info("train-srt: {} scenes, {} parameter tensors, {} steps", data.size(), params.names().size(), c.train_srt.steps);
  json curve = json::array();
  double last_mse = 0;
  for (int step = 0; step < c.train_srt.steps; ++step) {
    const auto batch = draw_batch(data, c.train_srt, derive_seed(c.seed, 0x62617463, static_cast<std::uint64_t>(step)));
    const srt::StepStats st = srt::train_step(params, c.srt, batch, optimizer_at(c.train_srt, step),
                                              derive_seed(c.seed, 0x72617973, static_cast<std::uint64_t>(step)),
                                              c.train_srt.rays_per_target);
    last_mse = st.mse;
    if ((step + 1) % c.train_srt.log_every == 0 || step + 1 == c.train_srt.steps) {
      ctx.log->info("step {:>6}  mse {:.5f}  lr {:.1e}", step + 1, st.mse, c.train_srt.lr_at(step));
      curve.push_back({{"step", step + 1}, {"mse", st.mse}});
    }
  }
  diff::save_checkpoint(ctx.out / kSrtCheckpoint, params);
  write_json(ctx.out / "train_srt.json", {{"steps", c.train_srt.steps}, {"final_mse", last_mse}, {"curve", curve}});
  ctx.log->info("saved {}", (ctx.out / kSrtCheckpoint).string());
}

void train_diff(const Context& ctx) {
  const RunConfig& c = ctx.config;
  const auto srt_params = diff::load_checkpoint<float>(require_file(ctx.out / kSrtCheckpoint, "train-srt"));
  const auto data = load_split(c.data_dir, scenes::Split::kTrain);
  const diffusion::NoiseSchedule sched =
      diffusion::schedule_linear(c.schedule.steps, c.schedule.beta_start, c.schedule.beta_end);
  auto params = diffusion::init_unet_params<float>(c.unet, derive_seed(c.seed, 0x756e6574));
  ctx.log->info("train-diff: {} scenes, {} steps", data.size(), c.train_diff.steps);
  json curve = json::array();
  double last = 0;
  for (int step = 0; step < c.train_diff.steps; ++step) {
    const auto views = draw_batch(data, c.train_diff, derive_seed(c.seed, 0x64626174, static_cast<std::uint64_t>(step)));
    std::vector<diffusion::Example> batch(views.size());
    parallel_for(views.size(), [&](std::size_t i) { batch[i] = diffusion::make_example(srt_params, c.srt, views[i]); });
    const auto st = diffusion::train_step(params, c.unet, sched, batch, optimizer_at(c.train_diff, step),
                                          derive_seed(c.seed, 0x6e6f6973, static_cast<std::uint64_t>(step)));
    last = st.loss;
    if ((step + 1) % c.train_diff.log_every == 0 || step + 1 == c.train_diff.steps) {
      ctx.log->info("step {:>6}  loss {:.5f}  lr {:.1e}", step + 1, st.loss, c.train_diff.lr_at(step));
      curve.push_back({{"step", step + 1}, {"loss", st.loss}});
    }
  }
  diff::save_checkpoint(ctx.out / kDiffusionCheckpoint, params);
  write_json(ctx.out / "train_diff.json", {{"steps", c.train_diff.steps}, {"final_loss", last}, {"curve", curve}});
  ctx.log->info("saved {}", (ctx.out / kDiffusionCheckpoint).string());
}

void sample(const Context& ctx, bool srt_only) {
  const RunConfig& c = ctx.config;
  const auto srt_params = diff::load_checkpoint<float>(require_file(ctx.out / kSrtCheckpoint, "train-srt"));
  diff::ParamStore<float> unet_params;
  if (!srt_only) unet_params = diff::load_checkpoint<float>(require_file(ctx.out / kDiffusionCheckpoint, "train-diff"));
  const auto data = load_split(c.data_dir, scenes::Split::kTest, c.eval.scenes);
  const diffusion::NoiseSchedule sched =
      diffusion::schedule_linear(c.schedule.steps, c.schedule.beta_start, c.schedule.beta_end);
  const auto [in_idx, tgt_idx] = split_test_views(c.eval.input_views, c.eval.target_views);
  ctx.log->info("sample: {} test scenes, {} reference / {} target views{}", data.size(), in_idx.size(), tgt_idx.size(),
                srt_only ? " (SRT renders only)" : "");

  json scenes_json = json::array();
  for (std::size_t s = 0; s < data.size(); ++s) {
    const scenes::SceneData& scene = data[s];
    const fs::path dir = ctx.out / "samples" / scene.id;
    fs::create_directories(dir);
    std::vector<srt::PosedImage> inputs;
    std::vector<camera::CameraSpec> targets;
    json in_json = json::array(), tgt_json = json::array();
    for (std::size_t k = 0; k < in_idx.size(); ++k) {
      const auto& v = scene.views[static_cast<std::size_t>(in_idx[k])];
      inputs.push_back(srt::posed(v));
      scenes::save_ppm(dir / view_file("input", k), v.image);
      in_json.push_back({{"view", in_idx[k]}, {"camera", v.camera}});
    }
    for (std::size_t k = 0; k < tgt_idx.size(); ++k) {
      const auto& v = scene.views[static_cast<std::size_t>(tgt_idx[k])];
      targets.push_back(v.camera);
      scenes::save_ppm(dir / view_file("gt", k), v.image);
      tgt_json.push_back({{"view", tgt_idx[k]}, {"camera", v.camera}});
    }
    save_occupancy(dir / "gt_occupancy.bin", scene.occupancy);

    const std::vector<Image> srt_views = srt::render_views(srt_params, c.srt, inputs, targets);
    for (std::size_t k = 0; k < srt_views.size(); ++k) scenes::save_ppm(dir / view_file("srt", k), srt_views[k]);

    json entry = {{"id", scene.id}, {"inputs", in_json}, {"targets", tgt_json}};
    if (srt_only) {
      for (std::size_t k = 0; k < srt_views.size(); ++k) scenes::save_ppm(dir / view_file("gen", k), srt_views[k]);
      entry["candidates"] = json::array();
    } else {
      diffusion::GenerateOptions opts;
      opts.candidates = c.sampler.candidates;
      opts.sampler = {c.sampler.steps, c.sampler.eta, derive_seed(c.seed, 0x73616d70, s)};
      const diffusion::Models models{srt_params, c.srt, unet_params, c.unet, sched};
      const diffusion::Generation gen = diffusion::generate_multiview(models, inputs, targets, opts);
      json cands = json::array();
      for (std::size_t i = 0; i < gen.candidates.size(); ++i) {
        const auto& cand = gen.candidates[i];
        for (std::size_t k = 0; k < cand.targets.size(); ++k) {
          scenes::save_ppm(dir / view_file("cand" + std::to_string(i), k), cand.targets[k]);
        }
        cands.push_back({{"seed", cand.seed}, {"score", cand.score}});
      }
      for (std::size_t k = 0; k < gen.best().targets.size(); ++k) {
        scenes::save_ppm(dir / view_file("gen", k), gen.best().targets[k]);
      }
      entry["candidates"] = cands;
      entry["ranking"] = gen.ranking;
      ctx.log->info("  {}: best candidate {} (input-view PSNR {:.2f} dB)", scene.id, gen.ranking.front(),
                    gen.best().score);
    }
    scenes_json.push_back(entry);
  }
  write_json(ctx.out / kSamplesFile, {{"srt_only", srt_only},
                                      {"input_views", in_idx.size()},
                                      {"target_views", tgt_idx.size()},
                                      {"scenes", scenes_json}});
}

void reconstruct(const Context& ctx) {
  const RunConfig& c = ctx.config;
  const json samples = read_json(require_file(ctx.out / kSamplesFile, "sample"));
  for (const json& entry : samples.at("scenes")) {
    const std::string id = entry.at("id").get<std::string>();
    const fs::path src = ctx.out / "samples" / id, dst = ctx.out / "recon" / id;
    fs::create_directories(dst);
    std::vector<recon::Silhouette> views;
    auto add = [&](const json& list, const std::string& prefix) {
      for (std::size_t k = 0; k < list.size(); ++k) {
        const Image img = scenes::load_ppm(src / view_file(prefix, k));
        views.push_back({recon::foreground_mask(img, scenes::kBackground, static_cast<float>(c.eval.foreground_tol)),
                         list[k].at("camera").get<camera::CameraSpec>()});
      }
    };
    add(entry.at("inputs"), "input");
    add(entry.at("targets"), "gen");
    const VoxelGrid carved = recon::space_carve(views, c.eval.voxel_resolution);
    const recon::Mesh mesh = recon::marching_cubes(carved);
    save_occupancy(dst / "occupancy.bin", carved);
    recon::save_obj(dst / "mesh.obj", mesh);
    ctx.log->info("  {}: {} voxels, {} triangles{}", id, carved.count(), mesh.triangles.size(),
                  mesh.empty() ? " (empty mesh)" : "");
  }
}

void evaluate(const Context& ctx) {
  const RunConfig& c = ctx.config;
  const json samples = read_json(require_file(ctx.out / kSamplesFile, "sample"));
  const json& list = samples.at("scenes");
  metrics::MetricReport report;
  report.chamfer_samples = c.eval.chamfer_samples;
  report.items.resize(list.size());
  std::vector<double> srt_psnr(list.size()), srt_ssim(list.size());
  std::vector<std::string> warnings(list.size());

  parallel_for(list.size(), [&](std::size_t s) {
    const json& entry = list[s];
    const std::string id = entry.at("id").get<std::string>();
    const fs::path src = ctx.out / "samples" / id, rec = ctx.out / "recon" / id;
    std::vector<double> p, q, sp, sq;
    for (std::size_t k = 0; k < entry.at("targets").size(); ++k) {
      const Image gt = scenes::load_ppm(src / view_file("gt", k));
      const Image gen = scenes::load_ppm(src / view_file("gen", k));
      const Image srt_img = scenes::load_ppm(src / view_file("srt", k));
      p.push_back(metrics::psnr(gen, gt));
      q.push_back(metrics::ssim(gen, gt));
      sp.push_back(metrics::psnr(srt_img, gt));
      sq.push_back(metrics::ssim(srt_img, gt));
    }
    metrics::ItemMetrics& item = report.items[s];
    item.name = id;
    item.psnr = mean(p);
    item.ssim = mean(q);
    srt_psnr[s] = mean(sp);
    srt_ssim[s] = mean(sq);
    if (!fs::exists(rec / "occupancy.bin")) {
      warnings[s] = id + ": no reconstruction (run `mvdiff reconstruct`)";
      return;
    }
    const VoxelGrid truth = load_occupancy(src / "gt_occupancy.bin");
    VoxelGrid carved = load_occupancy(rec / "occupancy.bin");
    if (carved.resolution() == truth.resolution()) {
      const metrics::IouResult iou = metrics::volume_iou(carved, truth);
      item.volume_iou = iou.iou;
      if (iou.both_empty) warnings[s] = id + ": both volumes empty";
    } else {
      warnings[s] = id + ": reconstruction and ground-truth resolutions differ; IoU skipped";
    }
    const recon::Mesh mesh = recon::load_obj(rec / "mesh.obj");
    const recon::Mesh gt_mesh = recon::marching_cubes(truth);
    if (mesh.empty() || gt_mesh.empty()) {
      warnings[s] = id + ": empty mesh; chamfer skipped";
    } else {
      const std::uint64_t seed = derive_seed(c.seed, 0x63686d66, s);
      item.chamfer = metrics::chamfer(recon::sample_surface(mesh, c.eval.chamfer_samples, seed),
                                      recon::sample_surface(gt_mesh, c.eval.chamfer_samples, seed + 1));
    }
  });
  for (const std::string& w : warnings) {
    if (!w.empty()) ctx.log->warn(w);
  }
  report.extra = {{"input_views", samples.at("input_views")},
                  {"target_views", samples.at("target_views")},
                  {"srt_only", samples.at("srt_only")},
                  {"srt_psnr", mean(srt_psnr)},
                  {"srt_ssim", mean(srt_ssim)}};
  const json out = metrics::to_json(report);
  write_json(ctx.out / kMetricsFile, out);
  ctx.log->info("psnr {}  ssim {}  chamfer {}  volume_iou {}", out["psnr"].dump(), out["ssim"].dump(),
                out["chamfer"].dump(), out["volume_iou"].dump());
}

void ablate(const Context& ctx) {
  const RunConfig& base = ctx.config;
  const bool epipolar = base.ablate.toggle == "epipolar";
  if (epipolar && base.eval.input_views < 2) {
    ctx.log->warn("ablate: with eval.input_views = 1 the epipolar bias has no cross-view pairs to act on");
  }
  json summary = {{"toggle", base.ablate.toggle}, {"variants", json::object()}};
  for (const bool enabled : {true, false}) {
    RunConfig cfg = base;
    if (epipolar) {
      cfg.srt.epipolar_enabled = enabled;
    } else {
      cfg.unet.multiview_attention_enabled = enabled;
    }
    const std::string name = base.ablate.toggle + (enabled ? "_on" : "_off");
    const Context sub = open_run(cfg, ctx.out / name);
    ctx.log->info("ablate: variant {}", name);
    // Multi-view attention lives in the denoiser only, so both variants share one SRT.
    if (!epipolar && !enabled) {
      fs::copy_file(ctx.out / (base.ablate.toggle + "_on") / kSrtCheckpoint, sub.out / kSrtCheckpoint,
                    fs::copy_options::overwrite_existing);
    } else {
      train_srt(sub);
    }
    const bool use_diffusion = base.ablate.diffusion || !epipolar;
    if (use_diffusion) train_diff(sub);
    sample(sub, !use_diffusion);
    reconstruct(sub);
    evaluate(sub);
    summary["variants"][name] = read_json(sub.out / kMetricsFile);
  }
  write_json(ctx.out / "ablation.json", summary);
  const auto rows = collect_report({ctx.out / (base.ablate.toggle + "_on"), ctx.out / (base.ablate.toggle + "_off")});
  ctx.log->info("\n{}", format_report(rows));
}

std::vector<ReportRow> collect_report(const std::vector<fs::path>& runs) {
  std::vector<ReportRow> rows;
  for (const fs::path& run : runs) {
    const fs::path file = run / kMetricsFile;
    if (!fs::exists(file)) throw MissingArtifact("missing " + file.string());
    const json m = read_json(file);
    ReportRow r;
    r.run = run.filename().empty() ? run.parent_path().filename().string() : run.filename().string();
    r.reference_views = m.contains("extra") && m["extra"].contains("input_views") ? m["extra"]["input_views"].get<int>() : 0;
    r.psnr = rounded(m.value("psnr", json()));
    r.ssim = rounded(m.value("ssim", json()));
    r.chamfer = rounded(m.value("chamfer", json()));
    r.volume_iou = rounded(m.value("volume_iou", json()));
    rows.push_back(std::move(r));
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const ReportRow& a, const ReportRow& b) { return a.reference_views < b.reference_views; });
  return rows;
}

std::string format_report(const std::vector<ReportRow>& rows) {
  auto cell = [](const json& v) {
    std::ostringstream os;
    if (v.is_number()) {
      os << std::fixed << std::setprecision(4) << v.get<double>();
    } else {
      os << "-";
    }
    return os.str();
  };
  std::size_t width = 3;
  for (const auto& r : rows) width = std::max(width, r.run.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(width)) << "run" << std::right << std::setw(7) << "#ref"
     << std::setw(10) << "PSNR" << std::setw(10) << "SSIM" << std::setw(10) << "CD" << std::setw(10) << "IoU" << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(static_cast<int>(width)) << r.run << std::right << std::setw(7) << r.reference_views
       << std::setw(10) << cell(r.psnr) << std::setw(10) << cell(r.ssim) << std::setw(10) << cell(r.chamfer)
       << std::setw(10) << cell(r.volume_iou) << '\n';
  }
  return os.str();
}

json report_json(const std::vector<ReportRow>& rows) {
  json out = json::array();
  for (const auto& r : rows) {
    out.push_back({{"run", r.run},
                   {"reference_views", r.reference_views},
                   {"psnr", r.psnr},
                   {"ssim", r.ssim},
                   {"chamfer", r.chamfer},
                   {"volume_iou", r.volume_iou}});
  }
  return {{"rows", out}};
}

}  // namespace mvdiff::cli
