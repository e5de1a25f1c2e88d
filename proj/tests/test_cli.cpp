#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "quiet/commands.hpp"
#include "quiet/config.hpp"
#include "quiet/model.hpp"
#include "test_util.hpp"

using namespace quiet;
using namespace quiet::cli;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

RunConfig micro_run_config(const fs::path& out) {
  RunConfig cfg = RunConfig::defaults();
  cfg.set("data.text_dim", std::int64_t{6});
  cfg.set("data.video_dim", std::int64_t{5});
  cfg.set("data.audio_dim", std::int64_t{4});
  cfg.set("model.embedding_dim", std::int64_t{4});
  cfg.set("model.gru_cells", std::int64_t{4});
  cfg.set("model.measurement_count", std::int64_t{4});
  cfg.set("train.batch_size", std::int64_t{8});
  cfg.set("train.epochs", std::int64_t{3});
  cfg.set("train.learning_rate", 0.5);
  cfg.set("paths.out", out.string());
  return cfg;
}

// Generates a micro dataset under dir and points cfg's data paths at it.
void stage_micro_data(RunConfig& cfg, const fs::path& dir, std::int64_t n = 24) {
  RunConfig gen = cfg;
  gen.set("paths.out", dir.string());
  gen.set("generate.n", n);
  gen.set("generate.split", std::string("0.6,0.2,0.2"));
  REQUIRE(cmd_generate(gen) == 0);
  cfg.set("paths.train", (dir / "data.train.jsonl").string());
  cfg.set("paths.dev", (dir / "data.dev.jsonl").string());
  cfg.set("paths.test", (dir / "data.test.jsonl").string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  REQUIRE(in);
  json j;
  in >> j;
  return j;
}

}  // namespace

TEST_CASE("generate writes a dataset whose manifest survives a recount") {
  const auto dir = testutil::scratch_dir("cli_generate");
  RunConfig cfg = micro_run_config(dir / "out");
  cfg.set("generate.n", std::int64_t{40});
  CHECK(cmd_generate(cfg) == 0);

  const data::Dataset ds = data::load_dataset((dir / "out" / "data.jsonl").string());
  CHECK(ds.samples.size() == 40);
  const auto recount = data::count_labels(ds);
  CHECK(recount.sarcasm == ds.manifest.marginals.sarcasm);
  CHECK(recount.sentiment == ds.manifest.marginals.sentiment);
  CHECK(recount.emotion == ds.manifest.marginals.emotion);
}

TEST_CASE("generate is byte-deterministic in its seed") {
  const auto dir = testutil::scratch_dir("cli_generate_det");
  RunConfig a = micro_run_config(dir / "a");
  RunConfig b = micro_run_config(dir / "b");
  for (RunConfig* c : {&a, &b}) {
    c->set("generate.n", std::int64_t{25});
    REQUIRE(cmd_generate(*c) == 0);
  }
  CHECK(testutil::read_file(dir / "a" / "data.jsonl") ==
        testutil::read_file(dir / "b" / "data.jsonl"));
}

TEST_CASE("train writes history, checkpoint and resolved config") {
  const auto dir = testutil::scratch_dir("cli_train");
  RunConfig cfg = micro_run_config(dir / "run");
  stage_micro_data(cfg, dir / "data");
  REQUIRE(cmd_train(cfg) == 0);

  CHECK(fs::exists(dir / "run" / "checkpoint.json"));
  CHECK(fs::exists(dir / "run" / "resolved-config.json"));
  const json history = read_json(dir / "run" / "history.json");
  CHECK(history.at("epochs").size() >= 1);
  CHECK(history.contains("epoch0"));
}

TEST_CASE("train with zero learning rate keeps the loss fixed") {
  const auto dir = testutil::scratch_dir("cli_train_lr0");
  RunConfig cfg = micro_run_config(dir / "run");
  cfg.set("train.learning_rate", 0.0);
  stage_micro_data(cfg, dir / "data");
  REQUIRE(cmd_train(cfg) == 0);
  const json history = read_json(dir / "run" / "history.json");
  const double epoch0 = history.at("epoch0").at("train_loss").get<double>();
  const double final_loss = history.at("epochs").back().at("train_loss").get<double>();
  CHECK(epoch0 == final_loss);
}

TEST_CASE("identical resolved configs reproduce byte-identical history") {
  const auto dir = testutil::scratch_dir("cli_train_det");
  RunConfig a = micro_run_config(dir / "a");
  stage_micro_data(a, dir / "data");
  RunConfig b = a;
  b.set("paths.out", (dir / "b").string());
  REQUIRE(cmd_train(a) == 0);
  REQUIRE(cmd_train(b) == 0);
  CHECK(testutil::read_file(dir / "a" / "history.json") ==
        testutil::read_file(dir / "b" / "history.json"));
}

TEST_CASE("eval of a written checkpoint reproduces the recorded dev metrics") {
  const auto dir = testutil::scratch_dir("cli_roundtrip");
  RunConfig cfg = micro_run_config(dir / "run");
  stage_micro_data(cfg, dir / "data");
  REQUIRE(cmd_train(cfg) == 0);

  RunConfig eval_cfg = cfg;
  eval_cfg.set("paths.test", cfg.get_string("paths.dev"));
  eval_cfg.set("paths.checkpoint", (dir / "run" / "checkpoint.json").string());
  eval_cfg.set("paths.out", (dir / "eval").string());
  REQUIRE(cmd_eval(eval_cfg) == 0);

  const json history = read_json(dir / "run" / "history.json");
  const json metrics = read_json(dir / "eval" / "metrics.json");
  CHECK(metrics.at("loss") == history.at("final_dev").at("loss"));
  CHECK(metrics.at("metrics") == history.at("final_dev").at("metrics"));
}

TEST_CASE("eval respects the task mask") {
  const auto dir = testutil::scratch_dir("cli_mask");
  RunConfig cfg = micro_run_config(dir / "run");
  cfg.set("tasks", std::string("sar"));
  stage_micro_data(cfg, dir / "data");
  REQUIRE(cmd_train(cfg) == 0);

  RunConfig eval_cfg = cfg;
  eval_cfg.set("paths.checkpoint", (dir / "run" / "checkpoint.json").string());
  eval_cfg.set("paths.out", (dir / "eval").string());
  REQUIRE(cmd_eval(eval_cfg) == 0);
  const json metrics = read_json(dir / "eval" / "metrics.json").at("metrics");
  CHECK(metrics.contains("sar"));
  CHECK_FALSE(metrics.contains("sen"));
  CHECK_FALSE(metrics.contains("emo"));
}

TEST_CASE("eval is deterministic across repeats") {
  const auto dir = testutil::scratch_dir("cli_eval_det");
  RunConfig cfg = micro_run_config(dir / "run");
  stage_micro_data(cfg, dir / "data");
  REQUIRE(cmd_train(cfg) == 0);
  RunConfig eval_cfg = cfg;
  eval_cfg.set("paths.checkpoint", (dir / "run" / "checkpoint.json").string());
  eval_cfg.set("paths.out", (dir / "e1").string());
  REQUIRE(cmd_eval(eval_cfg) == 0);
  eval_cfg.set("paths.out", (dir / "e2").string());
  REQUIRE(cmd_eval(eval_cfg) == 0);
  CHECK(testutil::read_file(dir / "e1" / "metrics.json") ==
        testutil::read_file(dir / "e2" / "metrics.json"));
}

TEST_CASE("gradcheck passes clean and fails under sabotage") {
  const auto dir = testutil::scratch_dir("cli_gradcheck");
  RunConfig cfg = RunConfig::defaults();
  cfg.set("paths.out", (dir / "gc").string());
  CHECK(cmd_gradcheck(cfg) == 0);

  // Every active tensor shows up in the report.
  const json report = read_json(dir / "gc" / "gradcheck.json");
  model::ModelParams probe = model::ModelParams::init(
      [&] {
        model::Config mc = cfg.model_config();
        mc.text_dim = 6;
        mc.video_dim = 5;
        mc.audio_dim = 4;
        mc.embedding_dim = 4;
        mc.gru_cells = 4;
        mc.measurement_count = 4;
        return mc;
      }(),
      1);
  for (const auto& nt : probe.active_tensors()) {
    CHECK(report.at("per_tensor").contains(nt.name));
  }

  RunConfig bad = cfg;
  bad.set("gradcheck.sabotage", true);
  bad.set("paths.out", (dir / "gc_bad").string());
  CHECK(cmd_gradcheck(bad) == 1);
}

TEST_CASE("analyze honors the pair count and zeroes self pairs") {
  const auto dir = testutil::scratch_dir("cli_analyze");
  model::Config mc;
  mc.text_dim = 6;
  mc.video_dim = 5;
  mc.audio_dim = 4;
  mc.embedding_dim = 4;
  mc.gru_cells = 4;
  mc.measurement_count = 8;
  model::ModelParams params = model::ModelParams::init(mc, 3);
  fs::create_directories(dir / "run");
  model::save_checkpoint(params, (dir / "run" / "checkpoint.json").string());

  RunConfig cfg = RunConfig::defaults();
  cfg.set("paths.checkpoint", (dir / "run" / "checkpoint.json").string());
  cfg.set("paths.out", (dir / "analysis").string());
  cfg.set("analyze.pair_count", std::int64_t{120});
  REQUIRE(cmd_analyze(cfg) == 0);

  const json analysis = read_json(dir / "analysis" / "analysis.json");
  CHECK(analysis.at("sar_sen").at("pairs").size() == 120);
  CHECK(analysis.at("sar_sen").at("nonzero_fraction").get<double>() >= 0.99);
  CHECK(analysis.at("self_sar_indexwise").at("mean_commutator_norm").get<double>() == 0.0);
}

TEST_CASE("sweep emits one row per context limit") {
  const auto dir = testutil::scratch_dir("cli_sweep");
  RunConfig cfg = micro_run_config(dir / "run");
  cfg.set("train.epochs", std::int64_t{1});
  cfg.set("sweep.context", true);
  cfg.set("sweep.grid", false);
  stage_micro_data(cfg, dir / "data");
  REQUIRE(cmd_sweep(cfg) == 0);
  const json matrix = read_json(dir / "run" / "matrix.json");
  REQUIRE(matrix.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(matrix[i].at("context_limit").get<std::size_t>() == i);
    CHECK(matrix[i].contains("seed"));
  }
}

TEST_CASE("config resolution: overrides win and unknown keys fail") {
  const auto dir = testutil::scratch_dir("cli_config");
  const fs::path file = dir / "cfg.json";
  std::ofstream(file) << R"({"train.learning_rate": 0.25, "train.epochs": 9})";

  RunConfig cfg = RunConfig::defaults();
  cfg.apply_file(file.string());
  CHECK(cfg.get_double("train.learning_rate") == 0.25);
  cfg.apply_override("train.learning_rate=0.125");
  CHECK(cfg.get_double("train.learning_rate") == 0.125);
  CHECK(cfg.get_int("train.epochs") == 9);

  CHECK_THROWS_AS(cfg.apply_override("train.leaning_rate=0.5"), ConfigError);
  CHECK_THROWS_AS(cfg.apply_override("train.epochs=few"), ConfigError);
  std::ofstream(dir / "bad.json") << R"({"no.such.key": 1})";
  CHECK_THROWS_AS(cfg.apply_file((dir / "bad.json").string()), ConfigError);
}

TEST_CASE("resolved config is a fixed point of resolution") {
  const auto dir = testutil::scratch_dir("cli_closure");
  RunConfig cfg = micro_run_config(dir / "run");
  cfg.set("train.weight_sar", 0.5);
  cfg.write_resolved((dir / "resolved.json").string());

  RunConfig again = RunConfig::defaults();
  again.apply_file((dir / "resolved.json").string());
  CHECK(again.resolved_json() == cfg.resolved_json());
}

TEST_CASE("re-feeding the resolved config reproduces the run") {
  const auto dir = testutil::scratch_dir("cli_closure_run");
  RunConfig cfg = micro_run_config(dir / "a");
  stage_micro_data(cfg, dir / "data");
  REQUIRE(cmd_train(cfg) == 0);

  RunConfig again = RunConfig::defaults();
  again.apply_file((dir / "a" / "resolved-config.json").string());
  again.set("paths.out", (dir / "b").string());
  REQUIRE(cmd_train(again) == 0);
  CHECK(testutil::read_file(dir / "a" / "history.json") ==
        testutil::read_file(dir / "b" / "history.json"));
}

TEST_CASE("mismatched dataset dimensions exit with the usage code") {
  const auto dir = testutil::scratch_dir("cli_mismatch");
  RunConfig cfg = micro_run_config(dir / "run");
  stage_micro_data(cfg, dir / "data");
  cfg.set("data.text_dim", std::int64_t{7});  // dataset was generated with 6
  CHECK(run_command("train", cfg) == 2);
}

TEST_CASE("run_command maps unknown commands and config errors to code 2") {
  RunConfig cfg = RunConfig::defaults();
  CHECK(run_command("polish", cfg) == 2);
  RunConfig bad = RunConfig::defaults();
  bad.set("tasks", std::string("sar,unknown"));
  CHECK(run_command("train", bad) == 2);
}
