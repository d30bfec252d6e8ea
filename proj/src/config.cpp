#include "ptl/config.hpp"

#include <cstdlib>
#include <set>

namespace ptl {

using nlohmann::json;

std::string_view to_string(InitMode mode) { return mode == InitMode::Ptl ? "ptl" : "random"; }

InitMode parse_init_mode(std::string_view text) {
  if (text == "ptl") return InitMode::Ptl;
  if (text == "random") return InitMode::Random;
  throw ConfigError("init_mode must be ptl or random, got '" + std::string(text) + "'");
}

namespace {

const std::set<std::string>& run_keys() {
  static const std::set<std::string> keys{"n_passes",           "init_mode",  "manifest", "output_root", "run_id",
                                          "pass_overrides",     "classifier", "threads",
                                          "restore_validation"};
  return keys;
}

bool is_training_key(const std::string& key) { return train::to_json(train::TrainingConfig{}).contains(key); }

}  // namespace

void RunConfig::validate() const {
  training.validate();
  if (n_passes < 1) throw ConfigError("n_passes must be >= 1");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (!pass_overrides.is_object()) throw ConfigError("pass_overrides must be an object");
  for (const auto& [key, value] : pass_overrides.items()) {
    int pass = 0;
    try {
      std::size_t used = 0;
      pass = std::stoi(key, &used);
      if (used != key.size()) pass = 0;
    } catch (const std::exception&) {
    }
    if (pass < 1 || pass > n_passes) throw ConfigError("pass_overrides key '" + key + "' is not a pass index");
    if (!value.is_object()) throw ConfigError("pass_overrides." + key + " must be an object");
    for (const auto& [name, v] : value.items()) {
      if (!is_training_key(name)) throw ConfigError("pass_overrides." + key + ": unknown key '" + name + "'");
      if (name == "network" || name == "seed") {
        throw ConfigError("pass_overrides." + key + ": '" + name + "' is fixed for the whole run");
      }
    }
    training_for_pass(pass).validate();
  }
}

train::TrainingConfig RunConfig::training_for_pass(int pass_index) const {
  const auto key = std::to_string(pass_index);
  if (!pass_overrides.is_object() || !pass_overrides.contains(key)) return training;
  return train::apply_overrides(training, pass_overrides.at(key));
}

std::string RunConfig::resolved_run_id() const { return run_id.empty() ? "run-" + run_digest(*this) : run_id; }

fs::path RunConfig::run_dir() const {
  fs::path root = output_root;
  if (const char* env = std::getenv("PTL_OUTPUT_ROOT"); env && *env) root = env;
  return root / resolved_run_id();
}

json to_json(const RunConfig& c) {
  json j = train::to_json(c.training);
  j["n_passes"] = c.n_passes;
  j["init_mode"] = to_string(c.init_mode);
  j["manifest"] = c.manifest.generic_string();
  j["output_root"] = c.output_root.generic_string();
  j["run_id"] = c.run_id;
  j["pass_overrides"] = c.pass_overrides;
  j["restore_validation"] = c.restore_validation;
  j["classifier"] = eval::to_json(c.classifier);
  j["threads"] = c.threads;
  return j;
}

RunConfig run_config_from_json(const json& j, RunConfig c) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!run_keys().contains(key) && !is_training_key(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  try {
    c.training = train::training_config_from_json(j, c.training);
    c.n_passes = j.value("n_passes", c.n_passes);
    if (j.contains("init_mode")) c.init_mode = parse_init_mode(j.at("init_mode").get<std::string>());
    if (j.contains("manifest")) c.manifest = j.at("manifest").get<std::string>();
    if (j.contains("output_root")) c.output_root = j.at("output_root").get<std::string>();
    c.run_id = j.value("run_id", c.run_id);
    if (j.contains("pass_overrides")) c.pass_overrides = j.at("pass_overrides");
    c.restore_validation = j.value("restore_validation", c.restore_validation);
    if (j.contains("classifier")) c.classifier = eval::classifier_training_from_json(j.at("classifier"), c.classifier);
    c.threads = j.value("threads", c.threads);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  return c;
}

RunConfig read_run_config(const fs::path& file) {
  json j;
  try {
    j = json::parse(read_text_file(file));
  } catch (const json::parse_error& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

std::string canonical_json(const RunConfig& c) {
  json j = to_json(c);
  j.erase("output_root");
  j.erase("threads");
  j.erase("run_id");
  return j.dump();
}

std::string run_digest(const RunConfig& c) { return short_digest(canonical_json(c)); }

RunConfig desk_scale_preset() {
  RunConfig c;
  auto& t = c.training;
  t.network.image_size = {64, 64};
  t.network.generator.depth = 6;
  t.network.generator.base_channels = 8;
  t.network.discriminator.base_channels = 8;
  t.epochs = 40;
  t.lr_constant_epochs = 20;
  t.lr_decay_epochs = 20;
  t.warmup_exclusion = 10;
  t.batch_size = 1;
  c.classifier.network.input = t.network.image_size;
  c.classifier.epochs = 20;
  return c;
}

}  // namespace ptl
