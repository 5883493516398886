#pragma once

#include "microcl/image.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace microcl {

/// Shape families shared by both domains: ring (annulus), banana
/// (crescent), double pear (two lobes), apple (disc with a notch).
enum class ShapeClass : int { ring = 0, crescent = 1, double_lobe = 2, notched_disc = 3 };

std::string to_string(ShapeClass cls);

enum class Domain { macro, micro, adapted };

std::string to_string(Domain domain);
Domain domain_from_string(const std::string& name);

struct Sample {
  Image image;
  std::optional<int> label;
  Domain domain = Domain::micro;
  std::uint64_t seed = 0;
};

/// Per-class sample counts. Full scale: 500 macro, 50 labeled micro,
/// ~5000 unlabeled micro, 1000 test per class.
struct SplitSpec {
  int macro_per_class = 50;
  int micro_labeled_per_class = 50;
  int micro_unlabeled_per_class = 500;
  int micro_test_per_class = 100;
  int image_size = 64;
  std::uint64_t master_seed = 0;

  void validate() const;
  friend bool operator==(const SplitSpec&, const SplitSpec&) = default;
};

enum class Split : std::uint64_t { macro = 1, micro_labeled = 2, micro_unlabeled = 3, test = 4 };

std::string to_string(Split split);

/// Seed of the `index`-th sample of `cls` in `split`. Seeds are distinct
/// across (split, class, index) for a fixed master seed.
std::uint64_t sample_seed(std::uint64_t master_seed, Split split, int cls, int index);

/// Anti-aliased coverage mask (1, size, size) of the sample's object; the
/// same geometry generate_sample draws.
TensorF shape_mask(int cls, Domain domain, int size, std::uint64_t seed);

/// Render one sample; a pure function of its arguments. Macro samples are a
/// clean dark shape on a light near-uniform background; micro samples get a
/// stained background of random hue, blur, contrast jitter and speckle.
Sample generate_sample(int cls, Domain domain, int size, std::uint64_t seed);

struct DatasetBundle {
  SplitSpec spec;
  std::vector<Sample> macro;            // X_S, labeled
  std::vector<Sample> micro_labeled;    // X_T
  std::vector<Sample> micro_unlabeled;  // X_U
  std::vector<Sample> test;             // held-out micro
  std::vector<Sample> test_colordropped;
};

DatasetBundle make_splits(const SplitSpec& spec);

/// Writes every split as 8-bit PNGs under `dir/<split>/` plus `dir/manifest.json`.
void write_dataset(const DatasetBundle& data, const std::filesystem::path& dir);

/// Reads back what write_dataset produced.
DatasetBundle read_dataset(const std::filesystem::path& dir);

nlohmann::json manifest_json(const DatasetBundle& data);

nlohmann::json to_json(const SplitSpec& spec);
SplitSpec split_spec_from_json(const nlohmann::json& j);

}  // namespace microcl
