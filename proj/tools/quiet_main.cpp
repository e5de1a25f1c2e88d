// Command-line front end: generate | train | eval | gradcheck | analyze |
// sweep over a resolved configuration.
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "quiet/commands.hpp"
#include "quiet/config.hpp"

int main(int argc, char** argv) {
  CLI::App app{"quantum-probability multi-task classifier for multi-modal dialogue features"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::int64_t seed = -1;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "JSON config file of flat dotted keys")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "overrides train.seed");
  app.add_option("--out", out_dir, "overrides paths.out");
  app.add_option("--set", overrides, "key=value override, repeatable");

  struct Sugar {
    std::string train, dev, test, checkpoint, split;
    std::int64_t n = -1;
    std::int64_t pairs = -1;
    bool grid = false;
    bool context = false;
  } sugar;

  CLI::App* generate = app.add_subcommand("generate", "write a synthetic dataset");
  generate->add_option("--n", sugar.n, "number of dialogues");
  generate->add_option("--split", sugar.split, "train/dev/test fractions, e.g. 0.8,0.1,0.1");

  CLI::App* train = app.add_subcommand("train", "fit a model and write a checkpoint");
  train->add_option("--train", sugar.train, "training JSONL");
  train->add_option("--dev", sugar.dev, "dev JSONL");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--test", sugar.test, "evaluation JSONL");
  eval->add_option("--checkpoint", sugar.checkpoint, "checkpoint path");

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
  (void)gradcheck;

  CLI::App* analyze = app.add_subcommand("analyze", "measurement-bank incompatibility report");
  analyze->add_option("--checkpoint", sugar.checkpoint, "checkpoint path");
  analyze->add_option("--pairs", sugar.pairs, "operator pairs to sample");

  CLI::App* sweep = app.add_subcommand("sweep", "task/modality grid and context sweep");
  sweep->add_option("--train", sugar.train, "training JSONL");
  sweep->add_option("--dev", sugar.dev, "dev JSONL");
  sweep->add_option("--test", sugar.test, "test JSONL");
  sweep->add_flag("--grid", sugar.grid, "enable the task x modality grid");
  sweep->add_flag("--context-sweep", sugar.context, "enable the context-limit sweep");

  for (CLI::App* sub : app.get_subcommands({})) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    quiet::cli::RunConfig cfg = quiet::cli::RunConfig::defaults();
    if (!config_path.empty()) cfg.apply_file(config_path);
    if (seed >= 0) cfg.set("train.seed", seed);
    if (!out_dir.empty()) cfg.set("paths.out", out_dir);
    if (!sugar.train.empty()) cfg.set("paths.train", sugar.train);
    if (!sugar.dev.empty()) cfg.set("paths.dev", sugar.dev);
    if (!sugar.test.empty()) cfg.set("paths.test", sugar.test);
    if (!sugar.checkpoint.empty()) cfg.set("paths.checkpoint", sugar.checkpoint);
    if (!sugar.split.empty()) cfg.set("generate.split", sugar.split);
    if (sugar.n >= 0) cfg.set("generate.n", sugar.n);
    if (sugar.pairs >= 0) cfg.set("analyze.pair_count", sugar.pairs);
    if (sugar.grid) cfg.set("sweep.grid", true);
    if (sugar.context) cfg.set("sweep.context", true);
    for (const std::string& assignment : overrides) cfg.apply_override(assignment);

    const std::string name = app.get_subcommands().front()->get_name();
    return quiet::cli::run_command(name, cfg);
  } catch (const quiet::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
