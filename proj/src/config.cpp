#include "microcl/config.hpp"

#include "microcl/rng.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace microcl {

std::string to_string(Arm arm) { return arm == Arm::ssl ? "ssl" : "supervised"; }

Arm arm_from_string(const std::string& name) {
  if (name == "ssl") return Arm::ssl;
  if (name == "supervised") return Arm::supervised;
  throw std::invalid_argument("unknown arm '" + name + "' (expected ssl or supervised)");
}

StyleConfig desk_style_config() {
  StyleConfig cfg;
  cfg.init = StyleInit::content_copy;
  cfg.lambda_s = 1e6;
  cfg.steps = 80;
  return cfg;
}

void Config::validate() const {
  split.validate();
  style.validate();
  train.validate();
  classifier.validate();
  if (baseline.iterations < 0) throw std::invalid_argument("baseline iterations must be >= 0");
  if (baseline.batch_size < 1) throw std::invalid_argument("baseline batch size must be >= 1");
  if (!(baseline.learning_rate > 0)) throw std::invalid_argument("baseline learning rate must be > 0");
  if (workdir.empty()) throw std::invalid_argument("workdir must not be empty");
}

namespace {

using nlohmann::json;

json train_json(const TrainConfig& t) {
  return {{"sigma", t.sigma},
          {"lambda", t.lambda},
          {"alpha", t.alpha},
          {"batch_size", t.batch_size},
          {"queue_capacity", t.queue_capacity},
          {"iterations", t.iterations},
          {"learning_rate", t.learning_rate},
          {"momentum", t.momentum},
          {"k_percent", t.k_percent},
          {"hidden", t.hidden},
          {"embed_dim", t.embed_dim},
          {"checkpoint_every", t.checkpoint_every},
          {"color",
           {{"hue_degrees", t.color.hue_degrees},
            {"lightness", t.color.lightness},
            {"saturation", t.color.saturation},
            {"filter", to_string(t.color.filter)}}},
          {"flip", t.flip},
          {"backbone", {{"width", t.backbone.width}, {"z_dim", t.backbone.z_dim}}}};
}

json classifier_json(const ClassifierConfig& c) {
  return {{"hidden", c.hidden},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"momentum", c.momentum}};
}

json baseline_json(const BaselineConfig& b) {
  return {{"iterations", b.iterations},
          {"batch_size", b.batch_size},
          {"learning_rate", b.learning_rate},
          {"momentum", b.momentum},
          {"flip", b.flip}};
}

json split_json(const SplitSpec& s) {
  json j = to_json(s);
  j.erase("master_seed");
  return j;
}

// Rejects keys that `reference` (a default-valued dump) does not have.
void check_keys(const json& j, const json& reference, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument("config: '" + where + "' must be an object");
  for (const auto& [key, value] : j.items())
    if (!reference.contains(key))
      throw std::invalid_argument("config: unknown key '" + (where.empty() ? key : where + "." + key) + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

json to_json(const Config& cfg) {
  json style = to_json(cfg.style);
  return {{"split", split_json(cfg.split)},
          {"style", style},
          {"train", train_json(cfg.train)},
          {"classifier", classifier_json(cfg.classifier)},
          {"baseline", baseline_json(cfg.baseline)},
          {"paths", {{"workdir", cfg.workdir.generic_string()}}},
          {"seed", cfg.seed},
          {"arm", to_string(cfg.arm)},
          {"color_dropped_test", cfg.color_dropped_test}};
}

Config config_from_json(const json& j) {
  const Config defaults;
  const json ref = to_json(defaults);
  check_keys(j, ref, "");
  Config cfg;
  if (j.contains("split")) {
    check_keys(j["split"], ref["split"], "split");
    cfg.split = split_spec_from_json(j["split"]);
  }
  if (j.contains("style")) {
    check_keys(j["style"], ref["style"], "style");
    // Fields left out keep the desk values rather than the struct defaults.
    json merged = ref["style"];
    merged.update(j["style"]);
    cfg.style = style_config_from_json(merged);
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    check_keys(t, ref["train"], "train");
    auto& c = cfg.train;
    read(t, "sigma", c.sigma);
    read(t, "lambda", c.lambda);
    read(t, "alpha", c.alpha);
    read(t, "batch_size", c.batch_size);
    read(t, "queue_capacity", c.queue_capacity);
    read(t, "iterations", c.iterations);
    read(t, "learning_rate", c.learning_rate);
    read(t, "momentum", c.momentum);
    read(t, "k_percent", c.k_percent);
    read(t, "hidden", c.hidden);
    read(t, "embed_dim", c.embed_dim);
    read(t, "checkpoint_every", c.checkpoint_every);
    read(t, "flip", c.flip);
    if (t.contains("color")) {
      check_keys(t["color"], ref["train"]["color"], "train.color");
      read(t["color"], "hue_degrees", c.color.hue_degrees);
      read(t["color"], "lightness", c.color.lightness);
      read(t["color"], "saturation", c.color.saturation);
      if (t["color"].contains("filter")) c.color.filter = filter_kind_from_string(t["color"]["filter"].get<std::string>());
    }
    if (t.contains("backbone")) {
      check_keys(t["backbone"], ref["train"]["backbone"], "train.backbone");
      read(t["backbone"], "width", c.backbone.width);
      read(t["backbone"], "z_dim", c.backbone.z_dim);
    }
  }
  if (j.contains("classifier")) {
    const json& c = j["classifier"];
    check_keys(c, ref["classifier"], "classifier");
    read(c, "hidden", cfg.classifier.hidden);
    read(c, "epochs", cfg.classifier.epochs);
    read(c, "batch_size", cfg.classifier.batch_size);
    read(c, "learning_rate", cfg.classifier.learning_rate);
    read(c, "momentum", cfg.classifier.momentum);
  }
  if (j.contains("baseline")) {
    const json& b = j["baseline"];
    check_keys(b, ref["baseline"], "baseline");
    read(b, "iterations", cfg.baseline.iterations);
    read(b, "batch_size", cfg.baseline.batch_size);
    read(b, "learning_rate", cfg.baseline.learning_rate);
    read(b, "momentum", cfg.baseline.momentum);
    read(b, "flip", cfg.baseline.flip);
  }
  if (j.contains("paths")) {
    check_keys(j["paths"], ref["paths"], "paths");
    if (j["paths"].contains("workdir")) cfg.workdir = j["paths"]["workdir"].get<std::string>();
  }
  read(j, "seed", cfg.seed);
  if (j.contains("arm")) cfg.arm = arm_from_string(j["arm"].get<std::string>());
  read(j, "color_dropped_test", cfg.color_dropped_test);
  cfg.split.master_seed = cfg.seed;
  cfg.validate();
  return cfg;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

std::string canonical_string(const Config& cfg) { return to_json(cfg).dump(); }

std::uint64_t config_hash(const Config& cfg) {
  json j = to_json(cfg);
  j.erase("paths");
  return fnv1a64(j.dump());
}

std::string hash_hex(std::uint64_t hash) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

std::uint64_t training_hash(const Config& cfg) {
  json j = {{"split", split_json(cfg.split)}, {"style", to_json(cfg.style)}, {"seed", cfg.seed},
            {"arm", to_string(cfg.arm)}};
  if (cfg.arm == Arm::ssl) {
    j["train"] = train_json(cfg.train);
    j["train"].erase("iterations");
    j["train"].erase("checkpoint_every");
  } else {
    j["baseline"] = baseline_json(cfg.baseline);
    j["baseline"].erase("iterations");
    j["classifier_hidden"] = cfg.classifier.hidden;
    j["backbone"] = train_json(cfg.train)["backbone"];
  }
  return fnv1a64(j.dump());
}

}  // namespace microcl
