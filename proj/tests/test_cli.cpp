#include "doctest.h"

#include "microcl/pipeline.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <unistd.h>

using namespace microcl;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("microcl_cli_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Config tiny(const fs::path& workdir) {
  Config cfg;
  cfg.split = {2, 2, 4, 3, 32, 0};
  cfg.style.steps = 2;
  cfg.style.warmup_iterations = 1;
  cfg.style.backbone = {4, 8};
  cfg.train.iterations = 4;
  cfg.train.checkpoint_every = 2;
  cfg.train.batch_size = 8;
  cfg.train.queue_capacity = 16;
  cfg.train.hidden = 8;
  cfg.train.embed_dim = 4;
  cfg.train.backbone = {4, 8};
  cfg.classifier.hidden = 8;
  cfg.classifier.epochs = 2;
  cfg.baseline.iterations = 3;
  cfg.workdir = workdir;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(MICROCL_BIN) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config: JSON round trip, canonical hash, unknown keys") {
  Config cfg;
  cfg.seed = 7;
  cfg.split.master_seed = 7;
  cfg.arm = Arm::supervised;
  cfg.train.alpha = 0.9;
  cfg.style.style_weights = {1, 2, 3, 4};
  const Config back = config_from_json(nlohmann::json::parse(canonical_string(cfg)));
  CHECK(back == cfg);
  CHECK(config_hash(back) == config_hash(cfg));

  // Key order in the file does not matter.
  const auto a = nlohmann::json::parse(R"({"seed": 3, "arm": "ssl", "train": {"lambda": 0.5, "sigma": 0.1}})");
  const auto b = nlohmann::json::parse(R"({"train": {"sigma": 0.1, "lambda": 0.5}, "arm": "ssl", "seed": 3})");
  CHECK(config_hash(config_from_json(a)) == config_hash(config_from_json(b)));

  Config moved = cfg;
  moved.workdir = "/elsewhere";
  CHECK(config_hash(moved) == config_hash(cfg));
  Config other = cfg;
  other.train.sigma = 0.09;
  CHECK(config_hash(other) != config_hash(cfg));

  CHECK_THROWS_WITH(config_from_json(nlohmann::json::parse(R"({"train": {"sigam": 1}})")),
                    doctest::Contains("train.sigam"));
  CHECK_THROWS(config_from_json(nlohmann::json::parse(R"({"arm": "both"})")));
  CHECK_THROWS(config_from_json(nlohmann::json::parse(R"({"train": {"alpha": 2}})")));
}

TEST_CASE("config: training hash ignores iteration counts and evaluation settings") {
  Config cfg;
  Config more = cfg;
  more.train.iterations += 100;
  more.classifier.epochs += 5;
  more.color_dropped_test = false;
  CHECK(training_hash(more) == training_hash(cfg));
  more.train.learning_rate *= 2;
  CHECK(training_hash(more) != training_hash(cfg));
}

TEST_CASE("checkpoint: save-load-save is byte-identical and forward outputs match bitwise") {
  const auto dir = scratch("ck");
  TrainConfig tc;
  tc.backbone = {4, 8};
  tc.hidden = 8;
  tc.embed_dim = 4;
  tc.batch_size = 8;
  tc.queue_capacity = 16;
  const auto model = make_contrastive_model(tc);
  auto state = init_trainer(model, tc, 9);
  // Partly filled queue and a used RNG.
  MatrixR<float> rows = MatrixR<float>::Random(5, 4);
  state.queue.enqueue(rows);
  state.rng.next();
  state.iteration = 17;
  for (auto& [name, p] : state.optimizer.velocity) p.weight.vec().setConstant(0.25f);

  const auto ck = checkpoint_from_trainer(model, state, 0x1234);
  save_checkpoint(dir / "a.bin", ck);
  const auto loaded = load_checkpoint(dir / "a.bin");
  CHECK(loaded == ck);
  save_checkpoint(dir / "b.bin", loaded);
  CHECK(slurp(dir / "a.bin") == slurp(dir / "b.bin"));
  CHECK(slurp(dir / "a.bin").substr(0, 8) == "MCLCK001");

  const auto restored = trainer_from_checkpoint(loaded);
  CHECK(restored == state);
  TensorF x({2, 3, 32, 32});
  Rng r(1);
  for (auto& v : x.values()) v = static_cast<float>(r.uniform());
  const auto before = embed(model, state.theta, x, false);
  const auto after = embed(model, restored.theta, x, false);
  CHECK(before.v == after.v);
  CHECK(before.z == after.z);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint: bad magic, unknown version, truncation and trailing bytes are rejected") {
  Checkpoint ck;
  ck.nets = {{"head", projection_head_spec(4, 6, 20, 3)}};
  ck.params = init_params(ck.nets[0].second, 1);
  const std::string good = serialize_checkpoint(ck);
  CHECK(deserialize_checkpoint(good) == ck);

  std::string bad = good;
  bad[0] = 'X';
  CHECK_THROWS_WITH(deserialize_checkpoint(bad), doctest::Contains("magic"));
  bad = good;
  bad[8] = 2;
  CHECK_THROWS_WITH(deserialize_checkpoint(bad), doctest::Contains("version 2"));
  CHECK_THROWS_WITH(deserialize_checkpoint(good.substr(0, good.size() - 3)), doctest::Contains("truncated"));
  CHECK_THROWS_WITH(deserialize_checkpoint(good + "x"), doctest::Contains("trailing"));
  CHECK_THROWS(deserialize_checkpoint(""));
}

TEST_CASE("synth: manifest counts, same seed gives identical manifests, refuses non-empty output") {
  const auto dir = scratch("synth");
  Config cfg = tiny(dir / "a");
  std::ostringstream log;
  cmd_synth(cfg, false, log);
  const auto manifest = nlohmann::json::parse(slurp(RunPaths(cfg).data() / "manifest.json"));
  std::map<std::string, int> counts;
  for (const auto& s : manifest["samples"]) ++counts[s["split"].get<std::string>()];
  CHECK(counts["macro"] == 4 * 2);
  CHECK(counts["micro_labeled"] == 4 * 2);
  CHECK(counts["micro_unlabeled"] == 4 * 4);
  CHECK(counts["test"] == 4 * 3);
  CHECK(counts["test_colordropped"] == 4 * 3);

  Config again = tiny(dir / "b");
  cmd_synth(again, false, log);
  CHECK(slurp(RunPaths(cfg).data() / "manifest.json") == slurp(RunPaths(again).data() / "manifest.json"));

  CHECK_THROWS_WITH(cmd_synth(cfg, false, log), doctest::Contains("--force"));
  CHECK_NOTHROW(cmd_synth(cfg, true, log));
  fs::remove_all(dir);
}

TEST_CASE("stylize: one adapted PNG per macro sample, cache hit, class without labels") {
  const auto dir = scratch("stylize");
  Config cfg = tiny(dir);
  std::ostringstream log;
  cmd_synth(cfg, false, log);
  const auto adapted = cmd_stylize(cfg, log);
  CHECK(adapted.size() == 8);
  int pngs = 0;
  for (const auto& e : fs::directory_iterator(RunPaths(cfg).adapted())) pngs += e.path().extension() == ".png";
  CHECK(pngs == 8);
  std::ostringstream second;
  const auto cached = cmd_stylize(cfg, second);
  CHECK(second.str().find("0 computed, 8 cached") != std::string::npos);
  for (std::size_t i = 0; i < adapted.size(); ++i) CHECK(cached[i].image == adapted[i].image);

  Config nolabels = tiny(dir / "nolabels");
  nolabels.split.micro_labeled_per_class = 0;
  cmd_synth(nolabels, false, log);
  CHECK_THROWS_WITH(cmd_stylize(nolabels, log), doctest::Contains("class 0 (ring)"));
  fs::remove_all(dir);
}

TEST_CASE("train: finite losses, resume continues the count and matches an uninterrupted run") {
  const auto dir = scratch("train");
  std::ostringstream log;
  Config straight = tiny(dir / "straight");
  straight.train.iterations = 6;
  cmd_synth(straight, false, log);
  cmd_train(straight, {}, log);

  Config part = tiny(dir / "resumed");
  part.train.iterations = 3;
  cmd_synth(part, false, log);
  cmd_train(part, {}, log);
  CHECK(load_checkpoint(RunPaths(part).arm(Arm::ssl) / "checkpoint.bin").iteration == 3);
  CHECK_THROWS_WITH(cmd_train(part, {}, log), doctest::Contains("already exists"));
  part.train.iterations = 6;
  cmd_train(part, {.force = false, .resume = true}, log);

  const auto a = RunPaths(straight).arm(Arm::ssl), b = RunPaths(part).arm(Arm::ssl);
  CHECK(load_checkpoint(b / "checkpoint.bin").iteration == 6);
  CHECK(slurp(a / "checkpoint.bin") == slurp(b / "checkpoint.bin"));
  CHECK(slurp(a / "losses.csv") == slurp(b / "losses.csv"));

  const auto rows = lines(slurp(b / "losses.csv"));
  REQUIRE(rows.size() == 7);
  CHECK(rows[0] == "iter,J_S,J_U,L_e");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(rows[i].starts_with(std::to_string(i) + ","));
    std::istringstream cells(rows[i]);
    std::string c;
    std::getline(cells, c, ',');
    while (std::getline(cells, c, ',')) CHECK(std::isfinite(std::stod(c)));
  }

  Config changed = part;
  changed.train.sigma = 0.2;
  CHECK_THROWS_WITH(cmd_train(changed, {.force = false, .resume = true}, log), doctest::Contains("different configuration"));

  std::string bytes = slurp(b / "checkpoint.bin");
  bytes[3] = '?';
  std::ofstream(b / "checkpoint.bin", std::ios::binary) << bytes;
  CHECK_THROWS_WITH(cmd_train(part, {.force = false, .resume = true}, log), doctest::Contains("bad magic"));
  CHECK_THROWS_WITH(cmd_eval(part, log), doctest::Contains("bad magic"));
  fs::remove_all(dir);
}

TEST_CASE("eval: metrics JSON fields, colour-dropped test by default, supervised arm end to end") {
  const auto dir = scratch("eval");
  std::ostringstream log;
  Config cfg = tiny(dir);
  cmd_synth(cfg, false, log);
  CHECK_THROWS_WITH(cmd_eval(cfg, log), doctest::Contains("microcl train"));
  cmd_train(cfg, {}, log);
  const auto report = cmd_eval(cfg, log);
  CHECK(report.samples == 12);
  const auto j = nlohmann::json::parse(slurp(RunPaths(cfg).arm(Arm::ssl) / "metrics.json"));
  CHECK(j["test_split"] == "test_colordropped");
  CHECK(j["arm"] == "ssl");
  for (const char* k : {"samples", "overall_accuracy", "macro", "overall_auc", "per_class", "warnings"})
    CHECK(j["metrics"].contains(k));
  for (const char* k : {"AC", "SE", "SP", "F1", "JA"}) CHECK(j["metrics"]["macro"].contains(k));
  REQUIRE(j["metrics"]["per_class"].size() == 4);
  for (const char* k : {"TP", "FP", "TN", "FN", "AC", "SE", "SP", "F1", "JA", "AUC"})
    CHECK(j["metrics"]["per_class"][0].contains(k));
  CHECK(lines(slurp(RunPaths(cfg).arm(Arm::ssl) / "roc.csv"))[0] == "class,fpr,tpr,threshold");

  cfg.arm = Arm::supervised;
  cmd_train(cfg, {}, log);
  cmd_eval(cfg, log);
  const auto s = nlohmann::json::parse(slurp(RunPaths(cfg).arm(Arm::supervised) / "metrics.json"));
  CHECK(s["arm"] == "supervised");
  CHECK(s["metrics"]["samples"] == 12);
  CHECK(lines(slurp(RunPaths(cfg).arm(Arm::supervised) / "losses.csv"))[0] == "iter,CE");
  fs::remove_all(dir);
}

TEST_CASE("report: rows per run, median row for three seeds, missing directory") {
  const auto dir = scratch("report");
  // Hand-written metrics files; the median is checked against a sorted pick.
  const double acc[] = {0.5, 0.9, 0.7};
  std::vector<fs::path> runs;
  for (int s = 0; s < 3; ++s) {
    const auto arm_dir = dir / ("seed-" + std::to_string(s)) / "ssl";
    fs::create_directories(arm_dir);
    nlohmann::json j = {{"arm", "ssl"},
                        {"seed", s},
                        {"metrics",
                         {{"overall_accuracy", acc[s]},
                          {"overall_auc", nullptr},
                          {"macro", {{"AC", acc[s]}, {"SE", 0.1 * s}, {"SP", 1.0}, {"F1", 0.2}, {"JA", 0.3}}}}}};
    std::ofstream(arm_dir / "metrics.json") << j.dump();
    runs.push_back(dir / ("seed-" + std::to_string(s)));
  }
  std::ostringstream log;
  cmd_report({runs[0], runs[1]}, dir / "two.csv", log);
  auto rows = lines(slurp(dir / "two.csv"));
  REQUIRE(rows.size() == 3);
  CHECK(rows[0] == "run,arm,seed,accuracy,AC,SE,SP,F1,JA,AUC");

  cmd_report(runs, dir / "three.csv", log);
  rows = lines(slurp(dir / "three.csv"));
  REQUIRE(rows.size() == 5);
  CHECK(rows[4] == "median,ssl,,0.700000,0.700000,0.100000,1.000000,0.200000,0.300000,");

  const std::string nope = (dir / "nope").string();
  CHECK_THROWS_WITH(cmd_report({runs[0], dir / "nope"}, dir / "x.csv", log), doctest::Contains(nope.c_str()));
  fs::remove_all(dir);
}

TEST_CASE("lock: a second holder of a run directory is refused") {
  const auto dir = scratch("lock");
  {
    RunLock first(dir);
    CHECK_THROWS_WITH(RunLock{dir}, doctest::Contains("locked"));
  }
  CHECK_NOTHROW(RunLock{dir});
  CHECK_FALSE(fs::exists(dir / ".lock"));
  fs::remove_all(dir);
}

TEST_CASE("cli: exit codes") {
  const auto dir = scratch("exe");
  CHECK(run_cli("") != 0);
  CHECK(run_cli("synth --workdir ''") == 1);
  CHECK(run_cli("synth --config " + (dir / "missing.json").string()) != 0);
  CHECK(run_cli("report " + (dir / "absent").string()) == 1);
  CHECK(run_cli("train --arm both") != 0);
  fs::remove_all(dir);
}
