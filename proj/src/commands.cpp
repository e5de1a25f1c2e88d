#include "quiet/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"

#include "quiet/layers.hpp"
#include "quiet/model.hpp"
#include "quiet/tape.hpp"

namespace quiet::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

void ensure_out_dir(const RunConfig& cfg) {
  fs::create_directories(cfg.get_string("paths.out"));
}

void write_json(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed for " + path);
}

json metrics_to_json(const model::Metrics& metrics) {
  json j;
  for (int s = 0; s < 3; ++s) {
    if (!metrics.present[s]) continue;
    const auto& tm = metrics.per_task[s];
    j[layers::task_name(static_cast<layers::Task>(s))] = {{"precision", tm.precision},
                                                          {"recall", tm.recall},
                                                          {"micro_f1", tm.micro_f1},
                                                          {"confusion", tm.confusion}};
  }
  return j;
}

json history_to_json(const model::History& h) {
  json j;
  j["epoch0"] = {{"train_loss", h.epoch0_train_loss},
                 {"dev_loss", h.epoch0_dev_loss},
                 {"dev_f1", h.epoch0_dev_f1}};
  json epochs = json::array();
  for (const auto& e : h.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"learning_rate", e.learning_rate},
                      {"train_loss", e.train_loss},
                      {"dev_loss", e.dev_loss},
                      {"dev_f1", e.dev_f1},
                      {"improved", e.improved}});
  }
  j["epochs"] = std::move(epochs);
  j["best_epoch"] = h.best_epoch;
  j["best_dev_loss"] = h.best_dev_loss;
  j["stopped_epoch"] = h.stopped_epoch;
  return j;
}

json incompatibility_to_json(const layers::IncompatibilityReport& report) {
  json pairs = json::array();
  for (const auto& p : report.pairs) {
    pairs.push_back({{"a_index", p.a_index},
                     {"b_index", p.b_index},
                     {"commutator_norm", p.commutator_norm},
                     {"relative_entropy", p.relative_entropy}});
  }
  return {{"pairs", std::move(pairs)},
          {"mean_commutator_norm", report.mean_commutator_norm},
          {"mean_relative_entropy", report.mean_relative_entropy},
          {"nonzero_fraction", report.nonzero_fraction}};
}

void print_marginals(const data::Dataset& ds) {
  const auto& m = ds.manifest.marginals;
  const double n = static_cast<double>(ds.samples.size());
  std::printf("samples: %zu\n", ds.samples.size());
  std::printf("sarcasm:   0=%zu (%.3f)  1=%zu (%.3f)\n", m.sarcasm[0], m.sarcasm[0] / n,
              m.sarcasm[1], m.sarcasm[1] / n);
  std::printf("sentiment: 0=%zu (%.3f)  1=%zu (%.3f)  2=%zu (%.3f)\n", m.sentiment[0],
              m.sentiment[0] / n, m.sentiment[1], m.sentiment[1] / n, m.sentiment[2],
              m.sentiment[2] / n);
  std::printf("emotion:  ");
  for (std::size_t c = 0; c < m.emotion.size(); ++c) {
    std::printf(" %zu=%zu", c, m.emotion[c]);
  }
  std::printf("\n");
  std::printf("oracle accuracy: sarcasm=%.4f sentiment=%.4f emotion=%.4f\n",
              ds.manifest.oracle.sarcasm, ds.manifest.oracle.sentiment,
              ds.manifest.oracle.emotion);
}

data::Dataset load_required(const RunConfig& cfg, const std::string& key) {
  const std::string& path = cfg.get_string(key);
  if (path.empty()) throw ConfigError(key + " is required for this command");
  return data::load_dataset(path);
}

}  // namespace

int cmd_generate(const RunConfig& cfg) {
  ensure_out_dir(cfg);
  const auto n = static_cast<std::size_t>(cfg.get_int("generate.n"));
  const auto seed = static_cast<std::uint64_t>(cfg.get_int("train.seed"));
  const auto limit = static_cast<std::size_t>(cfg.get_int("train.context_limit"));
  data::Dataset ds =
      data::generate_synthetic(n, cfg.data_dims(), limit, seed, cfg.generator_recipe());
  const std::string path = cfg.out_path("data.jsonl");
  data::save_dataset(ds, path);
  std::printf("wrote %s\n", path.c_str());
  print_marginals(ds);

  const std::string& split_csv = cfg.get_string("generate.split");
  if (!split_csv.empty()) {
    std::vector<double> fractions;
    std::stringstream ss(split_csv);
    std::string item;
    try {
      while (std::getline(ss, item, ',')) fractions.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("generate.split: '" + split_csv + "' is not a comma-separated list");
    }
    if (fractions.size() != 3) {
      throw ConfigError("generate.split must name three fractions, e.g. 0.8,0.1,0.1");
    }
    const auto parts = data::split_by_dialogue(ds, fractions, seed);
    const char* names[3] = {"data.train.jsonl", "data.dev.jsonl", "data.test.jsonl"};
    for (int i = 0; i < 3; ++i) {
      data::save_dataset(parts[i], cfg.out_path(names[i]));
      std::printf("wrote %s (%zu dialogues)\n", cfg.out_path(names[i]).c_str(),
                  parts[i].samples.size());
    }
  }
  cfg.write_resolved(cfg.out_path("resolved-config.json"));
  return 0;
}

int cmd_train(const RunConfig& cfg) {
  ensure_out_dir(cfg);
  const data::Dataset train_set = load_required(cfg, "paths.train");
  const data::Dataset dev_set = load_required(cfg, "paths.dev");

  const model::Config mc = cfg.model_config();
  model::ModelParams params = model::ModelParams::init(mc, mc.seed);
  model::FitResult result = model::fit(train_set, dev_set, std::move(params));

  model::save_checkpoint(result.params, cfg.out_path("checkpoint.json"));

  for (layers::Task s : result.params.cfg.active_tasks()) {
    if (result.params.banks[static_cast<int>(s)].has_zero_row()) {
      std::fprintf(stderr, "warning: %s bank has an all-zero row (clamped normalization)\n",
                   layers::task_name(s));
    }
  }

  const model::EvalPass final_dev = model::eval_pass(dev_set, result.params);
  json history = history_to_json(result.history);
  history["final_dev"] = {{"loss", final_dev.joint_loss},
                          {"metrics", metrics_to_json(final_dev.metrics)}};
  write_json(history, cfg.out_path("history.json"));
  cfg.write_resolved(cfg.out_path("resolved-config.json"));

  std::printf("epochs run: %zu (best %zu)\n", result.history.stopped_epoch,
              result.history.best_epoch);
  std::printf("train loss: %.6f -> %.6f\n", result.history.epoch0_train_loss,
              result.history.epochs.empty() ? result.history.epoch0_train_loss
                                            : result.history.epochs.back().train_loss);
  std::printf("dev loss:   %.6f -> %.6f\n", result.history.epoch0_dev_loss,
              result.history.best_dev_loss);
  return 0;
}

int cmd_eval(const RunConfig& cfg) {
  ensure_out_dir(cfg);
  std::string checkpoint = cfg.get_string("paths.checkpoint");
  if (checkpoint.empty()) checkpoint = cfg.out_path("checkpoint.json");
  model::ModelParams params = model::load_checkpoint(checkpoint);

  const data::Dataset dataset = load_required(cfg, "paths.test");
  for (layers::Modality m : params.cfg.active_modalities()) {
    std::size_t have = 0;
    switch (m) {
      case layers::Modality::text: have = dataset.manifest.text_dim; break;
      case layers::Modality::video: have = dataset.manifest.video_dim; break;
      default: have = dataset.manifest.audio_dim; break;
    }
    if (have != params.cfg.modality_dim(m)) {
      throw ConfigError("checkpoint expects " + std::string(layers::modality_name(m)) +
                        " dimension " + std::to_string(params.cfg.modality_dim(m)) +
                        ", dataset has " + std::to_string(have));
    }
  }

  const model::EvalPass pass = model::eval_pass(dataset, params);
  json j;
  j["loss"] = pass.joint_loss;
  j["metrics"] = metrics_to_json(pass.metrics);
  write_json(j, cfg.out_path("metrics.json"));
  cfg.write_resolved(cfg.out_path("resolved-config.json"));

  for (int s = 0; s < 3; ++s) {
    if (!pass.metrics.present[s]) continue;
    const auto& tm = pass.metrics.per_task[s];
    std::printf("%s: P=%.4f R=%.4f miF1=%.4f\n", layers::task_name(static_cast<layers::Task>(s)),
                tm.precision, tm.recall, tm.micro_f1);
  }
  return 0;
}

int cmd_gradcheck(const RunConfig& cfg) {
  ensure_out_dir(cfg);
  model::Config mc = cfg.model_config();
  std::size_t batch = 2;
  if (cfg.get_bool("gradcheck.use_micro")) {
    mc.text_dim = 6;
    mc.video_dim = 5;
    mc.audio_dim = 4;
    mc.embedding_dim = 4;
    mc.gru_cells = 4;
    mc.measurement_count = 4;
  } else {
    batch = std::min<std::size_t>(mc.batch_size, 2);
  }

  data::Dims dims{mc.text_dim, mc.video_dim, mc.audio_dim};
  const data::Dataset micro =
      data::generate_synthetic(batch, dims, mc.context_limit, mc.seed, cfg.generator_recipe());

  model::ModelParams params = model::ModelParams::init(mc, mc.seed);
  const bool sabotage = cfg.get_bool("gradcheck.sabotage");
  if (sabotage) diff::Tape::set_backward_sabotage(true);
  diff::GradCheckReport report;
  try {
    report = model::gradient_check(micro.samples, params);
  } catch (...) {
    diff::Tape::set_backward_sabotage(false);
    throw;
  }
  diff::Tape::set_backward_sabotage(false);

  json per_tensor;
  for (const auto& e : report.per_tensor) {
    std::printf("%-28s max rel err %.3e  (%zu coords)\n", e.name.c_str(), e.max_rel_error,
                e.checked_coordinates);
    per_tensor[e.name] = {{"max_rel_error", e.max_rel_error},
                          {"checked_coordinates", e.checked_coordinates}};
  }
  std::printf("overall max rel err %.3e\n", report.max_rel_error);
  write_json({{"max_rel_error", report.max_rel_error}, {"per_tensor", per_tensor}},
             cfg.out_path("gradcheck.json"));
  cfg.write_resolved(cfg.out_path("resolved-config.json"));
  return report.max_rel_error < 1e-4 ? 0 : 1;
}

int cmd_analyze(const RunConfig& cfg) {
  ensure_out_dir(cfg);
  std::string checkpoint = cfg.get_string("paths.checkpoint");
  if (checkpoint.empty()) checkpoint = cfg.out_path("checkpoint.json");
  model::ModelParams params = model::load_checkpoint(checkpoint);

  const auto pair_count = static_cast<std::size_t>(cfg.get_int("analyze.pair_count"));
  const auto seed = static_cast<std::uint64_t>(cfg.get_int("train.seed"));

  struct Pairing {
    const char* name;
    layers::Task a, b;
  };
  const Pairing pairings[3] = {{"sar_sen", layers::Task::sar, layers::Task::sen},
                               {"sen_emo", layers::Task::sen, layers::Task::emo},
                               {"sar_emo", layers::Task::sar, layers::Task::emo}};

  json j;
  j["pair_count"] = pair_count;
  for (const auto& p : pairings) {
    const auto report =
        layers::incompatibility_report(params.banks[static_cast<int>(p.a)],
                                       params.banks[static_cast<int>(p.b)], pair_count, seed);
    j[p.name] = incompatibility_to_json(report);
    std::printf("%s: mean commutator norm %.4f, mean relative entropy %.4f, nonzero %.4f\n",
                p.name, report.mean_commutator_norm, report.mean_relative_entropy,
                report.nonzero_fraction);
  }
  // Index-wise self pairing is the zero baseline.
  const auto self_report = layers::incompatibility_report(
      params.banks[0], params.banks[0], std::min<std::size_t>(pair_count, params.banks[0].count()),
      seed, layers::Pairing::indexwise);
  j["self_sar_indexwise"] = incompatibility_to_json(self_report);
  std::printf("self_sar_indexwise: mean commutator norm %.3e\n",
              self_report.mean_commutator_norm);

  write_json(j, cfg.out_path("analysis.json"));
  cfg.write_resolved(cfg.out_path("resolved-config.json"));
  return 0;
}

int cmd_sweep(const RunConfig& cfg) {
  ensure_out_dir(cfg);
  const data::Dataset train_set = load_required(cfg, "paths.train");
  const data::Dataset dev_set = load_required(cfg, "paths.dev");
  const data::Dataset test_set = load_required(cfg, "paths.test");

  const bool grid = cfg.get_bool("sweep.grid");
  const bool context = cfg.get_bool("sweep.context");
  if (!grid && !context) {
    throw ConfigError("sweep: enable sweep.grid and/or sweep.context");
  }

  const model::Config base = cfg.model_config();
  const auto rows = model::run_matrix(base, train_set, dev_set, test_set, grid, context);

  json out = json::array();
  for (const auto& row : rows) {
    json r;
    std::string tasks, modalities;
    for (auto t : row.tasks) {
      if (!tasks.empty()) tasks += ",";
      tasks += layers::task_name(t);
    }
    for (auto m : row.modalities) {
      if (!modalities.empty()) modalities += ",";
      modalities += layers::modality_name(m);
    }
    r["tasks"] = tasks;
    r["modalities"] = modalities;
    r["context_limit"] = row.context_limit;
    r["seed"] = row.seed;
    r["dev_loss"] = row.final_dev_loss;
    r["metrics"] = metrics_to_json(row.metrics);
    out.push_back(std::move(r));
    std::printf("[%s | %s | ctx %zu] dev loss %.4f\n", tasks.c_str(), modalities.c_str(),
                row.context_limit, row.final_dev_loss);
  }
  write_json(out, cfg.out_path("matrix.json"));
  cfg.write_resolved(cfg.out_path("resolved-config.json"));
  return 0;
}

int run_command(const std::string& name, const RunConfig& cfg) {
  try {
    if (name == "generate") return cmd_generate(cfg);
    if (name == "train") return cmd_train(cfg);
    if (name == "eval") return cmd_eval(cfg);
    if (name == "gradcheck") return cmd_gradcheck(cfg);
    if (name == "analyze") return cmd_analyze(cfg);
    if (name == "sweep") return cmd_sweep(cfg);
    std::cerr << "unknown command: " << name << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace quiet::cli
