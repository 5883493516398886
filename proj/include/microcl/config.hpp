#pragma once

#include "microcl/classifier.hpp"
#include "microcl/contrastive.hpp"
#include "microcl/data_synth.hpp"
#include "microcl/style.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>

namespace microcl {

enum class Arm { ssl, supervised };
std::string to_string(Arm arm);
Arm arm_from_string(const std::string& name);

/// Style settings the desk pipeline uses: content-copy start and a style
/// weight large enough to move the small CNN's Gram statistics.
StyleConfig desk_style_config();

/// One experiment. `seed` is the master seed for data, stylization,
/// training and the classifier; split.master_seed always mirrors it.
struct Config {
  SplitSpec split{};
  StyleConfig style = desk_style_config();
  TrainConfig train{};
  ClassifierConfig classifier{};
  BaselineConfig baseline{};
  std::filesystem::path workdir = "runs";
  std::uint64_t seed = 0;
  Arm arm = Arm::ssl;
  /// Score on the colour-dropped copy of the micro test split.
  bool color_dropped_test = true;

  void validate() const;
  friend bool operator==(const Config&, const Config&) = default;
};

/// Sorted-key JSON; dump() of this is the canonical form.
nlohmann::json to_json(const Config& cfg);

/// Missing keys keep their defaults; unknown keys are an error.
Config config_from_json(const nlohmann::json& j);
Config load_config(const std::filesystem::path& path);

std::string canonical_string(const Config& cfg);
/// Hash of the canonical form without `paths`: where a run lives does not
/// change what it computes.
std::uint64_t config_hash(const Config& cfg);
std::string hash_hex(std::uint64_t hash);

/// Hash of only what determines the trained extractor for `cfg.arm`;
/// iteration counts and evaluation settings are left out so a resumed run
/// may extend training.
std::uint64_t training_hash(const Config& cfg);

}  // namespace microcl
