// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <spdlog/logger.h>

#include "run_config.h"

// Pipeline stages. Every stage reads and writes inside one run directory;
// file names are fixed so later stages find earlier artifacts.
namespace mvdiff::cli {

inline constexpr const char* kConfigFile = "config.json";
inline constexpr const char* kLogFile = "log.txt";
inline constexpr const char* kSrtCheckpoint = "srt.ckpt";
inline constexpr const char* kDiffusionCheckpoint = "diffusion.ckpt";
inline constexpr const char* kSamplesFile = "samples.json";
inline constexpr const char* kMetricsFile = "metrics.json";

/// Thrown when a stage needs an artifact an earlier stage did not produce.
class MissingArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Context {
  RunConfig config;
  std::filesystem::path out;
  std::shared_ptr<spdlog::logger> log;
};

/// Creates `out`, echoes the config and opens the log (stdout + log.txt).
Context open_run(const RunConfig& config, const std::filesystem::path& out, bool quiet = false);

void gen_data(const Context& ctx);
void train_srt(const Context& ctx);
void train_diff(const Context& ctx);
/// With `srt_only`, the SRT renders stand in for the generated views.
void sample(const Context& ctx, bool srt_only = false);
void reconstruct(const Context& ctx);
void evaluate(const Context& ctx);
/// Runs the pipeline twice with the configured toggle on and off.
void ablate(const Context& ctx);

struct ReportRow {
  std::string run;
  int reference_views = 0;
  nlohmann::json psnr, ssim, chamfer, volume_iou;  // numbers (rounded to 1e-4) or null
};

/// Rows sorted by reference-view count, ascending (stable).
std::vector<ReportRow> collect_report(const std::vector<std::filesystem::path>& runs);
std::string format_report(const std::vector<ReportRow>& rows);
nlohmann::json report_json(const std::vector<ReportRow>& rows);

}  // namespace mvdiff::cli
