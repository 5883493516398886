#include "microcl/pipeline.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  int seeds = 1;
  std::optional<std::string> arm;
  std::optional<std::string> workdir;
  bool force = false;
  bool resume = false;
  std::string out;
  std::vector<std::string> runs;
};

microcl::Config resolve(const Options& o) {
  microcl::Config cfg = o.config_path.empty() ? microcl::Config{} : microcl::load_config(o.config_path);
  if (o.seed) cfg.seed = *o.seed;
  if (o.arm) cfg.arm = microcl::arm_from_string(*o.arm);
  if (o.workdir) cfg.workdir = *o.workdir;
  cfg.split.master_seed = cfg.seed;
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config_path, "JSON config file; flags override its values")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--seeds", o.seeds, "run seeds seed, seed+1, ... seed+N-1")->check(CLI::PositiveNumber);
  cmd->add_option("--arm", o.arm, "ssl or supervised")->check(CLI::IsMember({"ssl", "supervised"}));
  cmd->add_option("--workdir", o.workdir, "root of the run directories");
  cmd->add_flag("--force", o.force, "overwrite existing outputs");
}

template <typename F>
void for_each_seed(const Options& o, F&& f) {
  const microcl::Config base = resolve(o);
  for (int i = 0; i < o.seeds; ++i) {
    microcl::Config cfg = base;
    cfg.seed = base.seed + static_cast<std::uint64_t>(i);
    cfg.split.master_seed = cfg.seed;
    f(cfg);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"microcl: contrastive semi-supervised classification at desk scale"};
  app.require_subcommand(1);
  Options o;

  auto* synth = app.add_subcommand("synth", "generate the synthetic splits into <workdir>/seed-<s>/data");
  add_common(synth, o);
  auto* stylize = app.add_subcommand("stylize", "style-adapt the macro split (cached)");
  add_common(stylize, o);
  auto* train = app.add_subcommand("train", "train the chosen arm; writes checkpoint.bin and losses.csv");
  add_common(train, o);
  train->add_flag("--resume", o.resume, "continue from the arm's checkpoint");
  auto* eval = app.add_subcommand("eval", "score the chosen arm; writes metrics.json and roc.csv");
  add_common(eval, o);
  auto* run = app.add_subcommand("run", "synth (if needed), stylize, train and eval in one go");
  add_common(run, o);
  auto* report = app.add_subcommand("report", "comparison table over run directories");
  report->add_option("runs", o.runs, "arm or seed directories (default: every seed directory under the workdir)");
  report->add_option("--config", o.config_path, "config supplying the workdir")->check(CLI::ExistingFile);
  report->add_option("--workdir", o.workdir, "root of the run directories");
  report->add_option("--out", o.out, "output CSV (default <workdir>/report.csv)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      for_each_seed(o, [&](const microcl::Config& cfg) { microcl::cmd_synth(cfg, o.force, std::cout); });
    } else if (stylize->parsed()) {
      for_each_seed(o, [&](const microcl::Config& cfg) { microcl::cmd_stylize(cfg, std::cout); });
    } else if (train->parsed()) {
      if (o.force && o.resume) throw std::invalid_argument("--force and --resume are mutually exclusive");
      for_each_seed(o, [&](const microcl::Config& cfg) {
        microcl::cmd_train(cfg, {.force = o.force, .resume = o.resume}, std::cout);
      });
    } else if (eval->parsed()) {
      for_each_seed(o, [&](const microcl::Config& cfg) { microcl::cmd_eval(cfg, std::cout); });
    } else if (run->parsed()) {
      for_each_seed(o, [&](const microcl::Config& cfg) { microcl::run_pipeline(cfg, std::cout); });
    } else if (report->parsed()) {
      const microcl::Config cfg = resolve(o);
      std::vector<std::filesystem::path> runs(o.runs.begin(), o.runs.end());
      if (runs.empty()) {
        if (!std::filesystem::is_directory(cfg.workdir))
          throw std::runtime_error("run directory not found: " + cfg.workdir.string());
        for (const auto& entry : std::filesystem::directory_iterator(cfg.workdir))
          if (entry.is_directory() && entry.path().filename().string().starts_with("seed-")) runs.push_back(entry.path());
        std::sort(runs.begin(), runs.end());
        if (runs.empty()) throw std::runtime_error("no seed-* run directories under " + cfg.workdir.string());
      }
      microcl::cmd_report(runs, o.out.empty() ? cfg.workdir / "report.csv" : std::filesystem::path(o.out), std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "microcl: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
