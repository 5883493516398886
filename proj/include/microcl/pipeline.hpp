#pragma once

#include "microcl/checkpoint.hpp"
#include "microcl/config.hpp"
#include "microcl/metrics.hpp"

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace microcl {

/// <workdir>/seed-<seed>/ holding data/, cache/adapted/ and one directory
/// per arm (ssl/, supervised/).
struct RunPaths {
  std::filesystem::path root;

  explicit RunPaths(const Config& cfg);
  std::filesystem::path data() const { return root / "data"; }
  std::filesystem::path adapted() const { return root / "cache" / "adapted"; }
  std::filesystem::path arm(Arm a) const { return root / to_string(a); }
};

/// Marker file `<dir>/.lock`, created exclusively and removed on
/// destruction. A second holder gets an error naming the file.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

/// Generates the splits into data/. Refuses a non-empty data/ unless `force`.
DatasetBundle cmd_synth(const Config& cfg, bool force, std::ostream& log);

/// Adapted macro set, served from cache/adapted/ when present.
std::vector<Sample> cmd_stylize(const Config& cfg, std::ostream& log);

struct TrainOptions {
  bool force = false;
  bool resume = false;
};

/// Trains cfg.arm and writes <arm>/checkpoint.bin and <arm>/losses.csv.
/// An existing checkpoint is an error unless `force` (start over) or
/// `resume` (continue from its iteration).
void cmd_train(const Config& cfg, const TrainOptions& opt, std::ostream& log);

/// Scores cfg.arm on the test split; writes <arm>/metrics.json and
/// <arm>/roc.csv and returns the metrics.
MetricsReport cmd_eval(const Config& cfg, std::ostream& log);

/// One row per run (arm directory holding metrics.json, or a seed directory
/// holding arm directories) plus a median row per arm with >= 3 runs.
void cmd_report(const std::vector<std::filesystem::path>& runs, const std::filesystem::path& out, std::ostream& log);

/// synth (when data/ is absent), stylize, train (from scratch), eval.
MetricsReport run_pipeline(const Config& cfg, std::ostream& log);

/// Dataset on disk for `cfg`; errors if absent or made with another split.
DatasetBundle load_dataset(const Config& cfg);

}  // namespace microcl
