#include "microcl/pipeline.hpp"

#include "microcl/classifier.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>

#include <unistd.h>

namespace microcl {

namespace fs = std::filesystem;

RunPaths::RunPaths(const Config& cfg) : root(cfg.workdir / ("seed-" + std::to_string(cfg.seed))) {}

RunLock::RunLock(const fs::path& dir) : path_(dir / ".lock") {
  std::FILE* f = std::fopen(path_.c_str(), "wx");
  if (!f) {
    if (errno == EEXIST)
      throw std::runtime_error("run directory " + dir.string() + " is locked by another command (" + path_.string() +
                               " exists; remove it if no other microcl process is running)");
    throw std::runtime_error("cannot create lock file " + path_.string() + ": " + std::strerror(errno));
  }
  std::fprintf(f, "%ld\n", static_cast<long>(::getpid()));
  std::fclose(f);
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

fs::path prepare_root(const Config& cfg) {
  cfg.validate();
  const RunPaths paths(cfg);
  std::error_code ec;
  fs::create_directories(paths.root, ec);
  if (ec) throw std::runtime_error("cannot create run directory " + paths.root.string() + ": " + ec.message());
  return paths.root;
}

SplitSpec effective_split(const Config& cfg) {
  SplitSpec s = cfg.split;
  s.master_seed = cfg.seed;
  return s;
}

DatasetBundle synth_impl(const Config& cfg, bool force, std::ostream& log) {
  const RunPaths paths(cfg);
  if (fs::exists(paths.data()) && !fs::is_empty(paths.data())) {
    if (!force)
      throw std::runtime_error("output directory " + paths.data().string() +
                               " already exists and is not empty (use --force to overwrite)");
    fs::remove_all(paths.data());
  }
  auto data = make_splits(effective_split(cfg));
  write_dataset(data, paths.data());
  log << "synth: " << data.macro.size() << " macro, " << data.micro_labeled.size() << " labeled micro, "
      << data.micro_unlabeled.size() << " unlabeled micro, " << data.test.size() << " test -> " << paths.data().string()
      << '\n';
  return data;
}

std::vector<Sample> stylize_impl(const Config& cfg, const DatasetBundle& data, std::ostream& log) {
  if (data.macro.empty()) return {};
  StylizeReport report;
  auto adapted = stylize_dataset(data.macro, data.micro_labeled, cfg.style, cfg.seed, RunPaths(cfg).adapted(), &report);
  log << "stylize: " << report.computed << " computed, " << report.cached << " cached\n";
  return adapted;
}

std::vector<Sample> concat(std::span<const Sample> a, std::span<const Sample> b) {
  std::vector<Sample> out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

// Rows of an existing losses.csv (without header) up to `last_iteration`.
std::vector<std::string> previous_loss_rows(const fs::path& path, std::int64_t last_iteration) {
  std::vector<std::string> rows;
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (std::stoll(line.substr(0, line.find(','))) > last_iteration) break;
    rows.push_back(line);
  }
  return rows;
}

void train_ssl(const Config& cfg, const TrainOptions& opt, const DatasetBundle& data,
               const std::vector<Sample>& adapted, std::ostream& log) {
  const fs::path dir = RunPaths(cfg).arm(Arm::ssl);
  const fs::path ck_path = dir / "checkpoint.bin";
  const fs::path loss_path = dir / "losses.csv";
  const std::uint64_t hash = training_hash(cfg);
  const auto model = make_contrastive_model(cfg.train);
  TrainerState state;
  std::vector<std::string> rows;
  if (opt.resume) {
    if (!fs::exists(ck_path)) throw std::runtime_error("nothing to resume: " + ck_path.string() + " does not exist");
    const auto ck = load_checkpoint(ck_path);
    if (ck.config_hash != training_hash(cfg))
      throw std::runtime_error(ck_path.string() + " was written under a different configuration; use --force to retrain");
    state = trainer_from_checkpoint(ck);
    rows = previous_loss_rows(loss_path, ck.iteration);
    log << "train: resuming ssl at iteration " << ck.iteration << '\n';
  } else {
    state = init_trainer(model, cfg.train, cfg.seed);
  }
  const TrainData td{data.micro_labeled, adapted, data.micro_unlabeled};
  auto hook = [&](const TrainerState& s, const std::vector<LossRecord>& records) {
    save_checkpoint(ck_path, checkpoint_from_trainer(model, s, hash));
    std::string csv = "iter,J_S,J_U,L_e\n";
    for (const auto& r : rows) csv += r + '\n';
    for (const auto& r : records)
      csv += std::to_string(r.iteration) + ',' + num(r.js) + ',' + num(r.ju) + ',' + num(r.le) + '\n';
    write_text(loss_path, csv);
  };
  const auto records = train_extractor(model, td, cfg.train, state, hook);
  if (records.empty() && !fs::exists(ck_path)) hook(state, records);
  log << "train: ssl at iteration " << state.iteration;
  if (!records.empty()) log << ", last L_e " << num(records.back().le);
  log << " -> " << ck_path.string() << '\n';
}

void train_supervised(const Config& cfg, const DatasetBundle& data, const std::vector<Sample>& adapted,
                      std::ostream& log) {
  const fs::path dir = RunPaths(cfg).arm(Arm::supervised);
  const auto labeled = concat(data.micro_labeled, adapted);
  std::vector<double> losses;
  const auto model = supervised_baseline(cfg.train.backbone, cfg.classifier, cfg.baseline, labeled, cfg.seed, &losses);
  Checkpoint ck;
  ck.config_hash = training_hash(cfg);
  ck.iteration = cfg.baseline.iterations;
  ck.nets = {{"extractor", model.extractor}, {"classifier", model.classifier}};
  ck.params = model.params;
  ck.optimizer.learning_rate = cfg.baseline.learning_rate;
  ck.optimizer.momentum = cfg.baseline.momentum;
  save_checkpoint(dir / "checkpoint.bin", ck);
  std::string csv = "iter,CE\n";
  for (std::size_t i = 0; i < losses.size(); ++i) csv += std::to_string(i + 1) + ',' + num(losses[i]) + '\n';
  write_text(dir / "losses.csv", csv);
  log << "train: supervised baseline, " << losses.size() << " iterations";
  if (!losses.empty()) log << ", last CE " << num(losses.back());
  log << " -> " << (dir / "checkpoint.bin").string() << '\n';
}

void train_impl(const Config& cfg, const TrainOptions& opt, std::ostream& log) {
  const fs::path dir = RunPaths(cfg).arm(cfg.arm);
  const fs::path ck_path = dir / "checkpoint.bin";
  if (opt.resume && cfg.arm != Arm::ssl) throw std::runtime_error("--resume applies to the ssl arm only");
  if (fs::exists(ck_path) && !opt.force && !opt.resume)
    throw std::runtime_error(ck_path.string() + " already exists (use --force to retrain or --resume to continue)");
  if (!opt.resume) {
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
  const auto data = load_dataset(cfg);
  const auto adapted = stylize_impl(cfg, data, log);
  if (cfg.arm == Arm::ssl) train_ssl(cfg, opt, data, adapted, log);
  else train_supervised(cfg, data, adapted, log);
}

MetricsReport eval_impl(const Config& cfg, std::ostream& log) {
  const fs::path dir = RunPaths(cfg).arm(cfg.arm);
  const fs::path ck_path = dir / "checkpoint.bin";
  if (!fs::exists(ck_path))
    throw std::runtime_error("no checkpoint at " + ck_path.string() + "; run `microcl train --arm " +
                             to_string(cfg.arm) + "` first");
  const auto ck = load_checkpoint(ck_path);
  const auto data = load_dataset(cfg);
  ClassifierModel model;
  if (cfg.arm == Arm::ssl) {
    const auto adapted = stylize_impl(cfg, data, log);
    const auto labeled = concat(data.micro_labeled, adapted);
    model = fit_frozen(ck.net("extractor"), ck.params, labeled, cfg.classifier, cfg.seed);
    Checkpoint cls;
    cls.config_hash = ck.config_hash;
    cls.iteration = ck.iteration;
    cls.nets = {{"extractor", model.extractor}, {"classifier", model.classifier}};
    cls.params = model.params;
    cls.optimizer.learning_rate = cfg.classifier.learning_rate;
    cls.optimizer.momentum = cfg.classifier.momentum;
    save_checkpoint(dir / "classifier.bin", cls);
  } else {
    model = {ck.net("extractor"), ck.net("classifier"), ck.params};
  }
  const auto& test = cfg.color_dropped_test ? data.test_colordropped : data.test;
  const auto ev = evaluate(model, test);
  nlohmann::ordered_json out = {{"arm", to_string(cfg.arm)},
                                {"seed", cfg.seed},
                                {"config_hash", hash_hex(config_hash(cfg))},
                                {"training_hash", hash_hex(ck.config_hash)},
                                {"checkpoint_iteration", ck.iteration},
                                {"test_split", cfg.color_dropped_test ? "test_colordropped" : "test"},
                                {"metrics", to_json(ev.report)}};
  write_text(dir / "metrics.json", out.dump(2) + '\n');
  write_text(dir / "roc.csv", roc_csv(ev.report));
  log << "eval: " << to_string(cfg.arm) << " overall accuracy " << num(ev.report.overall_accuracy) << " on "
      << test.size() << " samples -> " << (dir / "metrics.json").string() << '\n';
  for (const auto& w : ev.report.warnings) log << "eval: warning: " << w << '\n';
  return ev.report;
}

}  // namespace

DatasetBundle load_dataset(const Config& cfg) {
  const RunPaths paths(cfg);
  if (!fs::exists(paths.data() / "manifest.json"))
    throw std::runtime_error("no dataset in " + paths.data().string() + "; run `microcl synth` first");
  auto data = read_dataset(paths.data());
  if (!(data.spec == effective_split(cfg)))
    throw std::runtime_error("dataset in " + paths.data().string() +
                             " was generated with a different split or seed; rerun `microcl synth --force`");
  return data;
}

DatasetBundle cmd_synth(const Config& cfg, bool force, std::ostream& log) {
  const auto root = prepare_root(cfg);
  RunLock lock(root);
  return synth_impl(cfg, force, log);
}

std::vector<Sample> cmd_stylize(const Config& cfg, std::ostream& log) {
  const auto root = prepare_root(cfg);
  RunLock lock(root);
  return stylize_impl(cfg, load_dataset(cfg), log);
}

void cmd_train(const Config& cfg, const TrainOptions& opt, std::ostream& log) {
  const auto root = prepare_root(cfg);
  RunLock lock(root);
  train_impl(cfg, opt, log);
}

MetricsReport cmd_eval(const Config& cfg, std::ostream& log) {
  const auto root = prepare_root(cfg);
  RunLock lock(root);
  return eval_impl(cfg, log);
}

MetricsReport run_pipeline(const Config& cfg, std::ostream& log) {
  const auto root = prepare_root(cfg);
  RunLock lock(root);
  if (!fs::exists(RunPaths(cfg).data() / "manifest.json")) synth_impl(cfg, false, log);
  train_impl(cfg, {.force = true, .resume = false}, log);
  return eval_impl(cfg, log);
}

namespace {

struct ReportRow {
  std::string run;
  std::string arm;
  std::string seed;
  std::vector<std::optional<double>> values;  // accuracy, AC, SE, SP, F1, JA, AUC
};

constexpr const char* kReportColumns[] = {"accuracy", "AC", "SE", "SP", "F1", "JA", "AUC"};

std::optional<double> opt_number(const nlohmann::json& j) {
  if (j.is_number()) return j.get<double>();
  return std::nullopt;
}

ReportRow read_row(const fs::path& metrics_path, const std::string& run) {
  std::ifstream in(metrics_path);
  if (!in) throw std::runtime_error("cannot read " + metrics_path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(metrics_path.string() + " is not valid JSON: " + e.what());
  }
  const auto& m = j.at("metrics");
  const auto& macro = m.at("macro");
  ReportRow row{run, j.at("arm").get<std::string>(), std::to_string(j.at("seed").get<std::uint64_t>()), {}};
  row.values.push_back(opt_number(m.at("overall_accuracy")));
  for (const char* k : {"AC", "SE", "SP", "F1", "JA"}) row.values.push_back(opt_number(macro.at(k)));
  row.values.push_back(opt_number(m.at("overall_auc")));
  return row;
}

std::optional<double> median(std::vector<double> v) {
  if (v.empty()) return std::nullopt;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

std::string cell(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

}  // namespace

void cmd_report(const std::vector<fs::path>& runs, const fs::path& out, std::ostream& log) {
  if (runs.empty()) throw std::invalid_argument("report needs at least one run directory");
  std::vector<std::string> missing;
  for (const auto& r : runs)
    if (!fs::is_directory(r)) missing.push_back(r.string());
  if (!missing.empty()) {
    std::string msg = "run directory not found:";
    for (const auto& m : missing) msg += " " + m;
    throw std::runtime_error(msg);
  }
  std::vector<ReportRow> rows;
  for (const auto& r : runs) {
    if (fs::exists(r / "metrics.json")) {
      rows.push_back(read_row(r / "metrics.json", r.generic_string()));
      continue;
    }
    bool found = false;
    for (Arm a : {Arm::ssl, Arm::supervised})
      if (fs::exists(r / to_string(a) / "metrics.json")) {
        rows.push_back(read_row(r / to_string(a) / "metrics.json", (r / to_string(a)).generic_string()));
        found = true;
      }
    if (!found) throw std::runtime_error("no metrics.json in " + r.string() + " or its arm directories");
  }
  std::vector<std::string> arms;
  for (const auto& row : rows)
    if (std::find(arms.begin(), arms.end(), row.arm) == arms.end()) arms.push_back(row.arm);
  std::vector<ReportRow> medians;
  for (const auto& arm : arms) {
    std::vector<const ReportRow*> group;
    for (const auto& row : rows)
      if (row.arm == arm) group.push_back(&row);
    if (group.size() < 3) continue;
    ReportRow m{"median", arm, "", {}};
    for (std::size_t c = 0; c < std::size(kReportColumns); ++c) {
      std::vector<double> v;
      for (const auto* row : group)
        if (row->values[c]) v.push_back(*row->values[c]);
      m.values.push_back(median(v));
    }
    medians.push_back(std::move(m));
  }
  rows.insert(rows.end(), medians.begin(), medians.end());

  std::string csv = "run,arm,seed";
  for (const char* c : kReportColumns) csv += std::string(",") + c;
  csv += '\n';
  for (const auto& row : rows) {
    csv += row.run + ',' + row.arm + ',' + row.seed;
    for (const auto& v : row.values) csv += ',' + cell(v);
    csv += '\n';
  }
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_text(out, csv);
  log << csv;
}

}  // namespace microcl
