// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "commands.h"

namespace {

using namespace mvdiff::cli;

struct CommonFlags {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& f, const std::string& out_help) {
  cmd->add_option("--config", f.config, "JSON run config (defaults for missing keys)");
  cmd->add_option("--set", f.sets, "Override a config field, e.g. --set train_srt.steps=100")->take_all();
  cmd->add_option("--seed", f.seed, "Run seed (overrides config.seed)");
  cmd->add_option("--out", f.out, out_help);
}

RunConfig resolve(const CommonFlags& f) {
  nlohmann::json doc = nlohmann::json::object();
  if (!f.config.empty()) doc = read_config_document(f.config);
  for (const std::string& s : f.sets) apply_override(doc, s);
  if (f.seed) doc["seed"] = *f.seed;
  return parse_config(doc);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mvdiff: geometry-conditioned multi-view diffusion at desk scale"};
  app.require_subcommand(1);

  CommonFlags flags;
  bool srt_only = false;
  std::vector<std::string> report_runs;
  std::string report_out;

  struct Stage {
    const char* name;
    const char* help;
  };
  const std::vector<Stage> stages = {
      {"gen-data", "Render the procedural dataset (writes to --out, default: config data_dir)"},
      {"train-srt", "Train the scene representation transformer"},
      {"train-diff", "Train the view-conditioned denoiser (needs srt.ckpt)"},
      {"sample", "Generate novel views for the test split"},
      {"reconstruct", "Carve and mesh the generated views"},
      {"evaluate", "Write metrics.json for a run directory"},
      {"ablate", "Run the pipeline with ablate.toggle on and off"},
  };
  std::map<std::string, CLI::App*> cmds;
  for (const Stage& s : stages) {
    CLI::App* cmd = app.add_subcommand(s.name, s.help);
    add_common(cmd, flags, "Run directory (default: run)");
    cmds[s.name] = cmd;
  }
  cmds["sample"]->add_flag("--srt-only", srt_only, "Use SRT renders instead of diffusion samples");
  CLI::App* report = app.add_subcommand("report", "Compare metrics.json across run directories");
  report->add_option("runs", report_runs, "Run directories")->required();
  report->add_option("--out", report_out, "Also write the table as JSON to this file");

  CLI11_PARSE(app, argc, argv);

  try {
    if (report->parsed()) {
      const auto rows = collect_report({report_runs.begin(), report_runs.end()});
      std::cout << format_report(rows);
      if (!report_out.empty()) {
        std::ofstream out(report_out);
        out << report_json(rows).dump(2) << '\n';
      }
      return 0;
    }
    const RunConfig config = resolve(flags);
    for (const auto& [name, cmd] : cmds) {
      if (!cmd->parsed()) continue;
      std::string out = flags.out;
      if (out.empty()) out = name == "gen-data" ? config.data_dir : "run";
      const Context ctx = open_run(config, out);
      if (name == "gen-data") gen_data(ctx);
      if (name == "train-srt") train_srt(ctx);
      if (name == "train-diff") train_diff(ctx);
      if (name == "sample") sample(ctx, srt_only);
      if (name == "reconstruct") reconstruct(ctx);
      if (name == "evaluate") evaluate(ctx);
      if (name == "ablate") ablate(ctx);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const MissingArtifact& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
