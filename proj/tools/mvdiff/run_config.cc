// Copyright Contributors to the mvdiff project
// SPDX-License-Identifier: Apache-2.0

#include "run_config.h"

#include <fstream>
#include <sstream>

#include "mvdiff/diffusion/schedule.h"

namespace mvdiff::cli {

using nlohmann::json;

double TrainConfig::lr_at(int step) const {
  return step < static_cast<int>(lr_drop_fraction * steps) ? lr : lr_final;
}

namespace {

json train_json(const TrainConfig& t) {
  return {{"steps", t.steps},
          {"lr", t.lr},
          {"lr_final", t.lr_final},
          {"lr_drop_fraction", t.lr_drop_fraction},
          {"weight_decay", t.weight_decay},
          {"batch_scenes", t.batch_scenes},
          {"input_views", t.input_views},
          {"target_views", t.target_views},
          {"rays_per_target", t.rays_per_target},
          {"log_every", t.log_every}};
}

void train_from(const json& j, TrainConfig& t) {
  j.at("steps").get_to(t.steps);
  j.at("lr").get_to(t.lr);
  j.at("lr_final").get_to(t.lr_final);
  j.at("lr_drop_fraction").get_to(t.lr_drop_fraction);
  j.at("weight_decay").get_to(t.weight_decay);
  j.at("batch_scenes").get_to(t.batch_scenes);
  j.at("input_views").get_to(t.input_views);
  j.at("target_views").get_to(t.target_views);
  j.at("rays_per_target").get_to(t.rays_per_target);
  j.at("log_every").get_to(t.log_every);
}

std::string type_name(const json& j) {
  if (j.is_boolean()) return "boolean";
  if (j.is_number_unsigned()) return "non-negative integer";
  if (j.is_number_integer()) return "integer";
  if (j.is_number()) return "number";
  if (j.is_string()) return "string";
  if (j.is_array()) return "array";
  if (j.is_object()) return "object";
  return "null";
}

bool compatible(const json& expected, const json& got) {
  if (expected.is_number_unsigned()) return got.is_number_unsigned() || (got.is_number_integer() && got.get<std::int64_t>() >= 0);
  if (expected.is_number_integer()) return got.is_number_integer();
  if (expected.is_number()) return got.is_number();
  return expected.type() == got.type();
}

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

// Checks `user` against the shape of the defaults.
void check_shape(const json& defaults, const json& user, const std::string& path) {
  if (!compatible(defaults, user)) {
    throw ConfigError((path.empty() ? "config" : path) + ": expected " + type_name(defaults) + ", got " +
                      type_name(user));
  }
  if (user.is_object()) {
    for (const auto& [key, value] : user.items()) {
      if (!defaults.contains(key)) throw ConfigError(join(path, key) + ": unknown key");
      check_shape(defaults.at(key), value, join(path, key));
    }
  } else if (user.is_array() && !defaults.empty()) {
    for (std::size_t i = 0; i < user.size(); ++i) {
      check_shape(defaults.front(), user[i], path + "[" + std::to_string(i) + "]");
    }
  }
}

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw ConfigError(field + ": " + what);
}

void validate_train(const TrainConfig& t, const std::string& name) {
  require(t.steps >= 1, name + ".steps", "must be >= 1");
  require(t.lr > 0, name + ".lr", "must be positive");
  require(t.lr_final > 0, name + ".lr_final", "must be positive");
  require(t.lr_drop_fraction >= 0 && t.lr_drop_fraction <= 1, name + ".lr_drop_fraction", "must lie in [0, 1]");
  require(t.weight_decay >= 0, name + ".weight_decay", "must be >= 0");
  require(t.batch_scenes >= 1, name + ".batch_scenes", "must be >= 1");
  require(t.input_views >= 1, name + ".input_views", "must be >= 1");
  require(t.target_views >= 1, name + ".target_views", "must be >= 1");
  require(t.rays_per_target >= 1, name + ".rays_per_target", "must be >= 1");
  require(t.log_every >= 1, name + ".log_every", "must be >= 1");
}

}  // namespace

json to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"data_dir", c.data_dir},
          {"dataset", c.dataset},
          {"srt", c.srt},
          {"unet", c.unet},
          {"schedule", {{"steps", c.schedule.steps}, {"beta_start", c.schedule.beta_start}, {"beta_end", c.schedule.beta_end}}},
          {"train_srt", train_json(c.train_srt)},
          {"train_diff", train_json(c.train_diff)},
          {"sampler", {{"steps", c.sampler.steps}, {"eta", c.sampler.eta}, {"candidates", c.sampler.candidates}}},
          {"eval",
           {{"scenes", c.eval.scenes},
            {"input_views", c.eval.input_views},
            {"target_views", c.eval.target_views},
            {"voxel_resolution", c.eval.voxel_resolution},
            {"foreground_tol", c.eval.foreground_tol},
            {"chamfer_samples", c.eval.chamfer_samples}}},
          {"ablate", {{"toggle", c.ablate.toggle}, {"diffusion", c.ablate.diffusion}}}};
}

RunConfig parse_config(const json& user) {
  const RunConfig defaults;
  json doc = to_json(defaults);
  check_shape(doc, user, "");
  doc.merge_patch(user);

  RunConfig c;
  try {
    doc.at("seed").get_to(c.seed);
    doc.at("data_dir").get_to(c.data_dir);
    doc.at("dataset").get_to(c.dataset);
    doc.at("srt").get_to(c.srt);
    doc.at("unet").get_to(c.unet);
    const json& s = doc.at("schedule");
    s.at("steps").get_to(c.schedule.steps);
    s.at("beta_start").get_to(c.schedule.beta_start);
    s.at("beta_end").get_to(c.schedule.beta_end);
    train_from(doc.at("train_srt"), c.train_srt);
    train_from(doc.at("train_diff"), c.train_diff);
    const json& sm = doc.at("sampler");
    sm.at("steps").get_to(c.sampler.steps);
    sm.at("eta").get_to(c.sampler.eta);
    sm.at("candidates").get_to(c.sampler.candidates);
    const json& e = doc.at("eval");
    e.at("scenes").get_to(c.eval.scenes);
    e.at("input_views").get_to(c.eval.input_views);
    e.at("target_views").get_to(c.eval.target_views);
    e.at("voxel_resolution").get_to(c.eval.voxel_resolution);
    e.at("foreground_tol").get_to(c.eval.foreground_tol);
    e.at("chamfer_samples").get_to(c.eval.chamfer_samples);
    doc.at("ablate").at("toggle").get_to(c.ablate.toggle);
    doc.at("ablate").at("diffusion").get_to(c.ablate.diffusion);
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("config: ") + ex.what());
  }
  c.validate();
  return c;
}

void RunConfig::validate() const {
  try {
    srt.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("srt: ") + e.what());
  }
  try {
    unet.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("unet: ") + e.what());
  }
  try {
    diffusion::schedule_linear(schedule.steps, schedule.beta_start, schedule.beta_end);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("schedule: ") + e.what());
  }
  require(unet.context_dim == srt.model_dim, "unet.context_dim", "must equal srt.model_dim");
  require(unet.image_size == srt.image_size, "unet.image_size", "must equal srt.image_size");
  require(dataset.rig.image_size == srt.image_size, "dataset.image_size", "must equal srt.image_size");
  validate_train(train_srt, "train_srt");
  validate_train(train_diff, "train_diff");
  for (const auto* t : {&train_srt, &train_diff}) {
    require(t->input_views + t->target_views <= dataset.train_views, t == &train_srt ? "train_srt.target_views" : "train_diff.target_views",
            "input plus target views exceed dataset.train_views");
  }
  require(sampler.steps >= 1 && sampler.steps <= schedule.steps, "sampler.steps", "must lie in [1, schedule.steps]");
  require(sampler.eta >= 0 && sampler.eta <= 1, "sampler.eta", "must lie in [0, 1]");
  require(sampler.candidates >= 1, "sampler.candidates", "must be >= 1");
  require(eval.scenes >= 1, "eval.scenes", "must be >= 1");
  require(eval.input_views >= 1, "eval.input_views", "must be >= 1");
  require(eval.target_views >= 1, "eval.target_views", "must be >= 1");
  require(eval.input_views + eval.target_views <= scenes::kTestViewCount, "eval.target_views",
          "input plus target views exceed the 16-view test rig");
  require(eval.voxel_resolution >= 8, "eval.voxel_resolution", "must be >= 8");
  require(eval.foreground_tol >= 0, "eval.foreground_tol", "must be >= 0");
  require(eval.chamfer_samples >= 1, "eval.chamfer_samples", "must be >= 1");
  require(ablate.toggle == "epipolar" || ablate.toggle == "multiview", "ablate.toggle",
          "must be \"epipolar\" or \"multiview\"");
}

json read_config_document(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: " + path + " is not valid JSON (" + e.what() + ")");
  }
}

RunConfig load_config(const std::string& path) { return parse_config(read_config_document(path)); }

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set: expected key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &doc;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    json& next = (*node)[parts[i]];
    if (next.is_null()) next = json::object();
    if (!next.is_object()) throw ConfigError(key + ": " + parts[i] + " is not an object");
    node = &next;
  }
  (*node)[parts.back()] = value;
}

std::string dump_config(const RunConfig& config) { return to_json(config).dump(2) + "\n"; }

}  // namespace mvdiff::cli
