#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>

#include "quiet/model.hpp"
#include "test_util.hpp"

using namespace quiet;
using namespace quiet::model;
using layers::Modality;
using layers::Task;

namespace {

Config micro_config() {
  Config cfg;
  cfg.text_dim = 6;
  cfg.video_dim = 5;
  cfg.audio_dim = 4;
  cfg.embedding_dim = 4;
  cfg.gru_cells = 4;
  cfg.measurement_count = 4;
  cfg.batch_size = 2;
  cfg.seed = 17;
  return cfg;
}

data::Dataset micro_dataset(std::size_t n, std::uint64_t seed) {
  return data::generate_synthetic(n, data::Dims{6, 5, 4}, 3, seed);
}

bool same_values(ModelParams& a, ModelParams& b) {
  auto ta = a.named_tensors();
  auto tb = b.named_tensors();
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (ta[i].tensor->values != tb[i].tensor->values) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("forward produces softmax-normalizable logits per task") {
  const data::Dataset ds = micro_dataset(3, 101);
  ModelParams params = ModelParams::init(micro_config(), 5);
  for (const auto& sample : ds.samples) {
    const ForwardSnapshot snap = forward_snapshot(sample, params);
    for (int s = 0; s < 3; ++s) {
      REQUIRE(snap.task_present[s]);
      REQUIRE(snap.probabilities[s].size() == kClassCounts[s]);
      double total = 0.0;
      for (double p : snap.probabilities[s]) {
        CHECK(p > 0.0);
        total += p;
      }
      CHECK(std::abs(total - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("no_context is a no-op on a context-free sample") {
  data::Dataset ds = micro_dataset(8, 102);
  // Find a dialogue that has no context utterances.
  const data::DialogueSample* lone = nullptr;
  for (const auto& s : ds.samples) {
    if (s.context_count() == 0) {
      lone = &s;
      break;
    }
  }
  REQUIRE(lone != nullptr);

  Config plain = micro_config();
  Config stripped = micro_config();
  stripped.no_context = true;
  ModelParams p1 = ModelParams::init(plain, 5);
  ModelParams p2 = ModelParams::init(stripped, 5);
  const ForwardSnapshot s1 = forward_snapshot(*lone, p1);
  const ForwardSnapshot s2 = forward_snapshot(*lone, p2);
  for (int s = 0; s < 3; ++s) CHECK(s1.probabilities[s] == s2.probabilities[s]);
}

TEST_CASE("eval-mode forward is bit-deterministic") {
  const data::Dataset ds = micro_dataset(2, 103);
  ModelParams params = ModelParams::init(micro_config(), 5);
  const ForwardSnapshot a = forward_snapshot(ds.samples[0], params);
  const ForwardSnapshot b = forward_snapshot(ds.samples[0], params);
  CHECK(a.fused == b.fused);
  for (int s = 0; s < 3; ++s) CHECK(a.probabilities[s] == b.probabilities[s]);
}

TEST_CASE("uniform heads give the log-class-count loss") {
  Config cfg = micro_config();
  cfg.l2_coefficient = 0.0;
  ModelParams params = ModelParams::init(cfg, 5);
  // Zero heads force uniform predictions regardless of the features.
  for (int s = 0; s < 3; ++s) {
    params.head_weights[s].values.assign(params.head_weights[s].values.size(), 0.0);
    params.head_biases[s].values.assign(params.head_biases[s].values.size(), 0.0);
  }
  const data::Dataset ds = micro_dataset(4, 104);

  diff::Tape tape;
  std::vector<ForwardValues> outputs;
  std::vector<const data::DialogueSample*> samples;
  for (const auto& s : ds.samples) {
    outputs.push_back(forward_on_tape(tape, s, params, Mode::eval));
    samples.push_back(&s);
  }
  const BatchLossValues loss = loss_on_tape(tape, outputs, samples, params);
  CHECK(tape.scalar_value(loss.per_task[0]) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(tape.scalar_value(loss.per_task[1]) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  CHECK(tape.scalar_value(loss.per_task[2]) == doctest::Approx(std::log(9.0)).epsilon(1e-12));
  const double expected = (std::log(2.0) + std::log(3.0) + std::log(9.0)) / 3.0;
  CHECK(tape.scalar_value(loss.joint) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("a saturated head drives its task loss toward zero") {
  Config cfg = micro_config();
  cfg.l2_coefficient = 0.0;
  ModelParams params = ModelParams::init(cfg, 5);
  data::Dataset ds = micro_dataset(1, 105);
  ds.samples[0].sarcasm = 1;
  params.head_weights[0].values.assign(params.head_weights[0].values.size(), 0.0);
  params.head_biases[0].values = {-40.0, 40.0};

  diff::Tape tape;
  std::vector<ForwardValues> outputs{forward_on_tape(tape, ds.samples[0], params, Mode::eval)};
  std::vector<const data::DialogueSample*> samples{&ds.samples[0]};
  const BatchLossValues loss = loss_on_tape(tape, outputs, samples, params);
  CHECK(tape.scalar_value(loss.per_task[0]) < 1e-9);
}

TEST_CASE("loss rejects out-of-range labels with the sample id") {
  ModelParams params = ModelParams::init(micro_config(), 5);
  data::Dataset ds = micro_dataset(1, 106);
  ds.samples[0].emotion = 11;
  diff::Tape tape;
  std::vector<ForwardValues> outputs{forward_on_tape(tape, ds.samples[0], params, Mode::eval)};
  std::vector<const data::DialogueSample*> samples{&ds.samples[0]};
  try {
    loss_on_tape(tape, outputs, samples, params);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find(ds.samples[0].dialogue_id) != std::string::npos);
  }
}

TEST_CASE("forward rejects non-finite features with the sample id") {
  ModelParams params = ModelParams::init(micro_config(), 5);
  data::Dataset ds = micro_dataset(1, 130);
  ds.samples[0].utterances.back().video[0] = std::numeric_limits<double>::quiet_NaN();
  diff::Tape tape;
  try {
    forward_on_tape(tape, ds.samples[0], params, Mode::eval);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find(ds.samples[0].dialogue_id) != std::string::npos);
  }
}

TEST_CASE("joint loss is non-negative") {
  std::mt19937_64 rng(107);
  for (int trial = 0; trial < 5; ++trial) {
    ModelParams params = ModelParams::init(micro_config(), rng());
    const data::Dataset ds = micro_dataset(3, rng());
    CHECK(joint_loss(ds, params) >= 0.0);
  }
}

TEST_CASE("whole-model gradients match finite differences on the micro config") {
  const data::Dataset ds = micro_dataset(2, 108);
  ModelParams params = ModelParams::init(micro_config(), 5);
  const auto report = gradient_check(ds.samples, params, 1e-5);
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("restricting the task mask zeroes the inactive parameters' gradients") {
  Config cfg = micro_config();
  cfg.task_active = {true, false, false};
  ModelParams params = ModelParams::init(cfg, 5);
  const data::Dataset ds = micro_dataset(2, 109);

  diff::Tape tape;
  std::vector<ForwardValues> outputs;
  std::vector<const data::DialogueSample*> samples;
  for (const auto& s : ds.samples) {
    outputs.push_back(forward_on_tape(tape, s, params, Mode::eval));
    samples.push_back(&s);
  }
  const BatchLossValues loss = loss_on_tape(tape, outputs, samples, params);
  params.zero_grads();
  tape.backward(loss.joint);

  for (int s : {1, 2}) {
    for (double g : params.banks[s].vectors.grad) CHECK(g == 0.0);
    for (double g : params.head_weights[s].grad) CHECK(g == 0.0);
    for (double g : params.head_biases[s].grad) CHECK(g == 0.0);
  }
  double sar_grad_mass = 0.0;
  for (double g : params.head_weights[0].grad) sar_grad_mass += std::abs(g);
  CHECK(sar_grad_mass > 0.0);
}

TEST_CASE("scaling a head preserves its argmax decisions") {
  ModelParams params = ModelParams::init(micro_config(), 5);
  const data::Dataset ds = micro_dataset(6, 110);

  std::vector<std::size_t> before;
  for (const auto& s : ds.samples) {
    const auto snap = forward_snapshot(s, params);
    const auto& p = snap.probabilities[2];
    before.push_back(std::max_element(p.begin(), p.end()) - p.begin());
  }
  for (double& w : params.head_weights[2].values) w *= 3.7;
  for (double& b : params.head_biases[2].values) b *= 3.7;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto snap = forward_snapshot(ds.samples[i], params);
    const auto& p = snap.probabilities[2];
    CHECK(static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin()) == before[i]);
  }
}

TEST_CASE("trad_head mode skips the measurement path") {
  Config cfg = micro_config();
  cfg.trad_head = true;
  ModelParams params = ModelParams::init(cfg, 5);
  CHECK(params.head_weights[0].shape[1] == cfg.fusion_dim());
  const data::Dataset ds = micro_dataset(1, 111);
  const ForwardSnapshot snap = forward_snapshot(ds.samples[0], params);
  for (int s = 0; s < 3; ++s) CHECK(snap.measured[s].empty());
  CHECK(snap.task_present[0]);
}

TEST_CASE("degenerate modality subsets produce unit fused states") {
  for (const auto& active : std::vector<std::array<bool, 3>>{
           {true, false, false}, {false, true, true}, {true, true, false}}) {
    Config cfg = micro_config();
    cfg.modality_active = active;
    ModelParams params = ModelParams::init(cfg, 5);
    const data::Dataset ds = micro_dataset(2, 112);
    const ForwardSnapshot snap = forward_snapshot(ds.samples[0], params);
    CHECK(snap.fused.size() == cfg.fusion_dim());
    double sq = 0.0;
    for (double x : snap.fused) sq += x * x;
    CHECK(std::abs(std::sqrt(sq) - 1.0) <= 1e-9);
  }
}

TEST_CASE("metrics_from_confusion matches the hand-computed micro averages") {
  // TP=1, FP=1, FN=1, TN=1 as a [true][pred] table.
  const TaskMetrics tm = metrics_from_confusion({{1, 1}, {1, 1}});
  CHECK(tm.precision == doctest::Approx(0.5));
  CHECK(tm.recall == doctest::Approx(0.5));
  CHECK(tm.micro_f1 == doctest::Approx(0.5));

  const TaskMetrics perfect = metrics_from_confusion({{3, 0}, {0, 2}});
  CHECK(perfect.precision == 1.0);
  CHECK(perfect.recall == 1.0);
  CHECK(perfect.micro_f1 == 1.0);
}

TEST_CASE("micro precision, recall and F1 coincide for single-label prediction") {
  std::mt19937_64 rng(113);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<std::size_t>> confusion(4, std::vector<std::size_t>(4, 0));
    for (auto& row : confusion)
      for (auto& cell : row) cell = rng() % 7;
    confusion[0][0] += 1;  // keep at least one decision
    const TaskMetrics tm = metrics_from_confusion(confusion);
    CHECK(tm.precision == doctest::Approx(tm.recall).epsilon(1e-15));
    CHECK(tm.micro_f1 == doctest::Approx(tm.precision).epsilon(1e-15));
  }
}

TEST_CASE("evaluate requires an active task") {
  Config cfg = micro_config();
  cfg.task_active = {false, false, false};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("fit with a zero learning rate leaves parameters untouched") {
  Config cfg = micro_config();
  cfg.learning_rate = 0.0;
  cfg.epochs = 3;
  const data::Dataset train = micro_dataset(6, 114);
  const data::Dataset dev = micro_dataset(3, 115);
  ModelParams params = ModelParams::init(cfg, 5);
  ModelParams original = params;
  const FitResult result = fit(train, dev, std::move(params));
  ModelParams fitted = result.params;
  CHECK(same_values(fitted, original));
  CHECK(result.history.epochs.size() == 3);
  CHECK(result.history.epochs.back().train_loss ==
        doctest::Approx(result.history.epoch0_train_loss).epsilon(1e-15));
}

TEST_CASE("gradient descent reduces the loss on a single sample") {
  Config cfg = micro_config();
  cfg.learning_rate = 0.5;
  cfg.epochs = 30;
  cfg.dropout_rate = 0.0;
  cfg.early_stop_patience = 100;
  cfg.lr_decay_patience = 100;
  const data::Dataset train = micro_dataset(1, 116);
  ModelParams params = ModelParams::init(cfg, 5);
  const FitResult result = fit(train, train, std::move(params));
  CHECK(result.history.epochs.back().train_loss < result.history.epoch0_train_loss);
}

TEST_CASE("fit is deterministic under a fixed seed") {
  Config cfg = micro_config();
  cfg.epochs = 4;
  const data::Dataset train = micro_dataset(8, 117);
  const data::Dataset dev = micro_dataset(3, 118);
  const FitResult a = fit(train, dev, ModelParams::init(cfg, 5));
  const FitResult b = fit(train, dev, ModelParams::init(cfg, 5));
  REQUIRE(a.history.epochs.size() == b.history.epochs.size());
  for (std::size_t e = 0; e < a.history.epochs.size(); ++e) {
    CHECK(a.history.epochs[e].train_loss == b.history.epochs[e].train_loss);
    CHECK(a.history.epochs[e].dev_loss == b.history.epochs[e].dev_loss);
  }
  ModelParams pa = a.params;
  ModelParams pb = b.params;
  CHECK(same_values(pa, pb));
}

TEST_CASE("fit returns parameters no worse than the initial dev loss") {
  Config cfg = micro_config();
  cfg.epochs = 5;
  cfg.learning_rate = 2.5;  // deliberately twitchy
  const data::Dataset train = micro_dataset(8, 119);
  const data::Dataset dev = micro_dataset(4, 120);
  ModelParams probe = ModelParams::init(cfg, 5);
  const double initial = joint_loss(dev, probe);
  FitResult result = fit(train, dev, ModelParams::init(cfg, 5));
  CHECK(joint_loss(dev, result.params) <= initial + 1e-12);
}

TEST_CASE("checkpoints round-trip exactly") {
  const auto dir = testutil::scratch_dir("model_ckpt");
  Config cfg = micro_config();
  cfg.trainable_cos_phi = true;
  ModelParams params = ModelParams::init(cfg, 5);
  save_checkpoint(params, (dir / "ckpt.json").string());
  ModelParams back = load_checkpoint((dir / "ckpt.json").string());
  CHECK(same_values(params, back));
  CHECK(back.cfg.trainable_cos_phi);
  CHECK(back.cfg.embedding_dim == cfg.embedding_dim);

  const data::Dataset ds = micro_dataset(2, 121);
  const auto a = forward_snapshot(ds.samples[0], params);
  const auto b = forward_snapshot(ds.samples[0], back);
  for (int s = 0; s < 3; ++s) CHECK(a.probabilities[s] == b.probabilities[s]);
}

TEST_CASE("run_matrix enumerates the grid and the context sweep") {
  Config cfg = micro_config();
  cfg.epochs = 1;
  cfg.batch_size = 8;
  const data::Dataset train = micro_dataset(6, 122);
  const data::Dataset dev = micro_dataset(2, 123);
  const data::Dataset test = micro_dataset(2, 124);

  const auto grid = run_matrix(cfg, train, dev, test, true, false);
  CHECK(grid.size() == 49);
  std::set<std::uint64_t> seeds;
  for (const auto& row : grid) seeds.insert(row.seed);
  CHECK(seeds.size() == 49);

  const auto sweep = run_matrix(cfg, train, dev, test, false, true);
  REQUIRE(sweep.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(sweep[i].context_limit == i);
}

TEST_CASE("frozen phases stay out of the trainable set") {
  Config cfg = micro_config();
  cfg.freeze_phases = true;
  ModelParams params = ModelParams::init(cfg, 5);
  for (auto& nt : params.active_tensors()) {
    CHECK(nt.name.find(".phase") == std::string::npos);
  }
  CHECK_FALSE(params.encoders[0].phase.requires_grad);
}

TEST_CASE("trainable interference angle receives gradients") {
  Config cfg = micro_config();
  cfg.trainable_cos_phi = true;
  cfg.dropout_rate = 0.0;
  ModelParams params = ModelParams::init(cfg, 5);
  const data::Dataset ds = micro_dataset(2, 125);
  const auto report = gradient_check(ds.samples, params, 1e-5);
  CHECK(report.max_rel_error < 1e-4);
  bool found = false;
  for (const auto& e : report.per_tensor) {
    if (e.name == "fusion.cos_raw") found = true;
  }
  CHECK(found);
}

TEST_CASE("append_top_eigvec keeps fused states valid") {
  Config cfg = micro_config();
  cfg.fusion.append_top_eigvec = true;
  ModelParams params = ModelParams::init(cfg, 5);
  const data::Dataset ds = micro_dataset(2, 126);
  const ForwardSnapshot snap = forward_snapshot(ds.samples[0], params);
  double sq = 0.0;
  for (double x : snap.fused) sq += x * x;
  CHECK(std::abs(std::sqrt(sq) - 1.0) <= 1e-9);
}
