// model.hpp
// End-to-end assembly: multi-modal encoder -> recurrent contextualizer ->
// density composition -> interference fusion -> measurement banks ->
// per-task heads, with losses, the training loop, metrics, and the
// task/modality/context ablation matrix.
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "quiet/data.hpp"
#include "quiet/gradcheck.hpp"
#include "quiet/layers.hpp"
#include "quiet/qcore.hpp"
#include "quiet/tape.hpp"

namespace quiet::model {

// Class counts per task: sarcasm, sentiment, emotion.
constexpr std::array<std::size_t, 3> kClassCounts{2, 3, 9};

struct Config {
  // Feature and layer dimensions.
  std::size_t text_dim = 32;
  std::size_t video_dim = 24;
  std::size_t audio_dim = 16;
  std::size_t embedding_dim = 16;
  std::size_t gru_cells = 16;
  std::size_t measurement_count = 64;

  // Active subsets (text, video, audio) / (sar, sen, emo).
  std::array<bool, 3> modality_active{true, true, true};
  std::array<bool, 3> task_active{true, true, true};

  layers::FusionConfig fusion;
  bool trainable_cos_phi = false;

  int phase_prior = 0;  // -1, 0, +1
  bool freeze_phases = false;

  double learning_rate = 0.0075;
  std::size_t batch_size = 64;
  double dropout_rate = 0.2;
  std::size_t epochs = 100;
  std::size_t early_stop_patience = 10;
  double lr_decay_factor = 0.5;
  std::size_t lr_decay_patience = 5;
  double l2_coefficient = 1e-4;
  std::uint64_t seed = 7;
  std::array<double, 3> task_weights{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  std::size_t context_limit = 3;

  bool no_context = false;
  bool trad_head = false;
  bool dev_select_f1 = false;

  std::vector<layers::Modality> active_modalities() const;
  std::vector<layers::Task> active_tasks() const;
  // Weights renormalized over the active task subset.
  std::array<double, 3> normalized_task_weights() const;
  std::size_t modality_dim(layers::Modality m) const;
  // Dimension of the fused state f: 3 * gru_cells with three modalities,
  // gru_cells otherwise.
  std::size_t fusion_dim() const;
  std::size_t head_input_dim() const;  // measurement_count, or fusion_dim in trad mode

  void validate() const;  // throws ConfigError
};

struct ModelParams {
  Config cfg;

  std::array<layers::EncoderParams, 3> encoders;
  std::array<layers::GruParams, 3> grus;
  std::array<layers::MixtureParams, 3> mixtures;
  std::array<layers::MeasurementBank, 3> banks;
  std::array<diff::Tensor, 3> head_weights;
  std::array<diff::Tensor, 3> head_biases;
  diff::Tensor fusion_cos_raw;  // scalar, tanh-squashed when trainable

  static ModelParams init(const Config& cfg, std::uint64_t seed);

  // Every tensor in a fixed canonical order.
  std::vector<diff::NamedTensor> named_tensors();
  // Tensors reachable under the active masks and flags; the optimizer,
  // the L2 term and the gradient checker all operate on this set.
  std::vector<diff::NamedTensor> active_tensors();
  void zero_grads();
};

void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

enum class Mode { train, eval };

// Inverted-dropout masks for the per-task feature vectors; empty slots
// mean no dropout on that task.
struct DropoutMasks {
  std::array<std::vector<double>, 3> per_task;
};

// Tape handles produced by one sample's forward pass.
struct ForwardValues {
  std::array<diff::Value, 3> densities{};  // active modalities
  std::array<bool, 3> density_present{};
  diff::Value fused{};
  std::array<diff::Value, 3> measured{};  // per active task, absent in trad mode
  std::array<bool, 3> measured_present{};
  std::array<diff::Value, 3> logits{};  // active tasks
  std::array<bool, 3> logits_present{};
};

ForwardValues forward_on_tape(diff::Tape& tape, const data::DialogueSample& sample,
                              ModelParams& params, Mode mode,
                              const DropoutMasks* masks = nullptr);

// Plain-value snapshot of an eval-mode forward pass.
struct ForwardSnapshot {
  std::array<qcore::Matrix, 3> densities;
  std::array<bool, 3> density_present{};
  std::vector<double> fused;
  std::array<std::vector<double>, 3> measured;
  std::array<std::vector<double>, 3> probabilities;
  std::array<bool, 3> task_present{};
};

ForwardSnapshot forward_snapshot(const data::DialogueSample& sample, ModelParams& params);

struct BatchLossValues {
  diff::Value joint{};
  std::array<diff::Value, 3> per_task{};
  std::array<bool, 3> task_present{};
};

// Mean cross entropy per active task over the batch, combined with the
// renormalized task weights plus the L2 term over the active tensors.
BatchLossValues loss_on_tape(diff::Tape& tape, const std::vector<ForwardValues>& outputs,
                             const std::vector<const data::DialogueSample*>& samples,
                             ModelParams& params);

struct TaskMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double micro_f1 = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

struct Metrics {
  std::array<TaskMetrics, 3> per_task;
  std::array<bool, 3> present{};

  double mean_f1() const;
};

// Micro-averaged precision/recall/F1 from a [true][predicted] confusion
// matrix. For single-label prediction the three coincide with accuracy.
TaskMetrics metrics_from_confusion(std::vector<std::vector<std::size_t>> confusion);

struct EvalPass {
  Metrics metrics;
  double joint_loss = 0.0;
  std::array<double, 3> task_losses{};
};

// One sweep computing metrics and the eval-mode joint loss together.
EvalPass eval_pass(const data::Dataset& dataset, ModelParams& params);

Metrics evaluate(const data::Dataset& dataset, ModelParams& params);
double joint_loss(const data::Dataset& dataset, ModelParams& params);

struct EpochRecord {
  std::size_t epoch = 0;
  double learning_rate = 0.0;
  double train_loss = 0.0;  // clean eval-mode pass
  double dev_loss = 0.0;
  std::array<double, 3> dev_f1{};
  bool improved = false;
};

struct History {
  double epoch0_train_loss = 0.0;
  double epoch0_dev_loss = 0.0;
  std::array<double, 3> epoch0_dev_f1{};
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 0 = initial parameters
  double best_dev_loss = 0.0;
  std::size_t stopped_epoch = 0;
};

struct FitResult {
  ModelParams params;  // best-dev parameters
  History history;
};

// Mini-batch gradient descent with reduce-on-plateau learning-rate decay
// and early stopping on the dev criterion. Returns the best-dev
// parameters; the initial parameters count as epoch 0.
FitResult fit(const data::Dataset& train_set, const data::Dataset& dev_set, ModelParams params);

// One full-model gradient check: batch loss with frozen dropout masks
// against central differences over the active tensors.
diff::GradCheckReport gradient_check(const std::vector<data::DialogueSample>& batch,
                                     ModelParams& params, double step = 1e-5);

struct MatrixCell {
  std::vector<layers::Task> tasks;
  std::vector<layers::Modality> modalities;
  std::size_t context_limit = 0;
  std::uint64_t seed = 0;
  Metrics metrics;
  double final_dev_loss = 0.0;
};

// Task-subset x modality-subset grid and/or context-limit sweep; each
// cell trains from a fresh seeded initialization and is evaluated on the
// test set.
std::vector<MatrixCell> run_matrix(const Config& base, const data::Dataset& train_set,
                                   const data::Dataset& dev_set, const data::Dataset& test_set,
                                   bool grid, bool context_sweep);

}  // namespace quiet::model
