#include "quiet/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "json.hpp"

namespace quiet::model {

namespace {

using layers::Modality;
using layers::Task;
using nlohmann::json;

constexpr double kProbClamp = 1e-12;

std::mt19937_64 tensor_rng(std::uint64_t seed, std::uint64_t ordinal) {
  return std::mt19937_64(seed * 0x9E3779B97F4A7C15ULL ^ (ordinal * 0xBF58476D1CE4E5B9ULL + 1));
}

diff::Tensor glorot(std::size_t out_dim, std::size_t in_dim, std::mt19937_64 rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
  std::uniform_real_distribution<double> dist(-limit, limit);
  diff::Tensor t({out_dim, in_dim});
  for (double& x : t.values) x = dist(rng);
  t.set_requires_grad(true);
  return t;
}

diff::Tensor zeros_param(diff::Shape shape) {
  diff::Tensor t(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

std::vector<double> softmax_values(const std::vector<double>& logits) {
  std::vector<double> p(logits.size());
  double mx = logits[0];
  for (double x : logits) mx = std::max(mx, x);
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (double& x : p) x /= z;
  return p;
}

std::size_t argmax_lowest_tie(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

const std::vector<double>& modality_features(const data::Utterance& u, Modality m) {
  switch (m) {
    case Modality::text: return u.text;
    case Modality::video: return u.video;
    default: return u.audio;
  }
}

}  // namespace

std::vector<Modality> Config::active_modalities() const {
  std::vector<Modality> out;
  for (int m = 0; m < layers::kModalityCount; ++m) {
    if (modality_active[m]) out.push_back(static_cast<Modality>(m));
  }
  return out;
}

std::vector<Task> Config::active_tasks() const {
  std::vector<Task> out;
  for (int s = 0; s < layers::kTaskCount; ++s) {
    if (task_active[s]) out.push_back(static_cast<Task>(s));
  }
  return out;
}

std::array<double, 3> Config::normalized_task_weights() const {
  std::array<double, 3> out{0.0, 0.0, 0.0};
  double total = 0.0;
  for (int s = 0; s < 3; ++s) {
    if (task_active[s]) total += task_weights[s];
  }
  if (total <= 0.0) throw ConfigError("task weights over the active subset sum to zero");
  for (int s = 0; s < 3; ++s) {
    if (task_active[s]) out[s] = task_weights[s] / total;
  }
  return out;
}

std::size_t Config::modality_dim(Modality m) const {
  switch (m) {
    case Modality::text: return text_dim;
    case Modality::video: return video_dim;
    default: return audio_dim;
  }
}

std::size_t Config::fusion_dim() const {
  return active_modalities().size() == 3 ? 3 * gru_cells : gru_cells;
}

std::size_t Config::head_input_dim() const { return trad_head ? fusion_dim() : measurement_count; }

void Config::validate() const {
  if (text_dim == 0 || video_dim == 0 || audio_dim == 0) {
    throw ConfigError("feature dimensions must be positive");
  }
  if (embedding_dim == 0 || gru_cells == 0 || measurement_count == 0) {
    throw ConfigError("embedding_dim, gru_cells and measurement_count must be positive");
  }
  if (active_modalities().empty()) throw ConfigError("no active modality");
  if (active_tasks().empty()) throw ConfigError("no active task");
  if (context_limit > 3) throw ConfigError("context_limit must be at most 3");
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ConfigError("dropout_rate must be in [0, 1)");
  if (fusion.alpha_sq < 0.0 || fusion.alpha_sq > 1.0) throw ConfigError("alpha_sq must be in [0, 1]");
  if (fusion.cos_phi < -1.0 || fusion.cos_phi > 1.0) throw ConfigError("cos_phi must be in [-1, 1]");
  if (l2_coefficient < 0.0) throw ConfigError("l2_coefficient must be non-negative");
  for (double w : task_weights) {
    if (w < 0.0) throw ConfigError("task weights must be non-negative");
  }
  normalized_task_weights();
  if (phase_prior < -1 || phase_prior > 1) throw ConfigError("phase_prior must be -1, 0 or +1");
}

ModelParams ModelParams::init(const Config& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParams p;
  p.cfg = cfg;
  std::uint64_t ordinal = 0;

  for (int m = 0; m < 3; ++m) {
    const std::size_t d_m = cfg.modality_dim(static_cast<Modality>(m));
    auto& enc = p.encoders[m];
    enc.weight = glorot(cfg.embedding_dim, d_m, tensor_rng(seed, ordinal++));
    enc.bias = zeros_param({cfg.embedding_dim});
    enc.phase = diff::Tensor({cfg.embedding_dim},
                             layers::init_phase(cfg.phase_prior, cfg.embedding_dim,
                                                seed * 31 + 7 + static_cast<std::uint64_t>(m)));
    enc.phase.set_requires_grad(!cfg.freeze_phases);
    ordinal++;

    const std::size_t in = 2 * cfg.embedding_dim;
    auto& gru = p.grus[m];
    gru.w_update = glorot(cfg.gru_cells, in, tensor_rng(seed, ordinal++));
    gru.w_reset = glorot(cfg.gru_cells, in, tensor_rng(seed, ordinal++));
    gru.w_candidate = glorot(cfg.gru_cells, in, tensor_rng(seed, ordinal++));
    gru.u_update = glorot(cfg.gru_cells, cfg.gru_cells, tensor_rng(seed, ordinal++));
    gru.u_reset = glorot(cfg.gru_cells, cfg.gru_cells, tensor_rng(seed, ordinal++));
    gru.u_candidate = glorot(cfg.gru_cells, cfg.gru_cells, tensor_rng(seed, ordinal++));
    gru.b_update = zeros_param({cfg.gru_cells});
    gru.b_reset = zeros_param({cfg.gru_cells});
    gru.b_candidate = zeros_param({cfg.gru_cells});

    p.mixtures[m].logits = zeros_param({cfg.context_limit + 1});
  }

  const std::size_t feature = cfg.fusion_dim();
  for (int s = 0; s < 3; ++s) {
    auto& bank = p.banks[s];
    bank.task = static_cast<Task>(s);
    bank.vectors = diff::Tensor({cfg.measurement_count, feature});
    auto rng = tensor_rng(seed, ordinal++);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t g = 0; g < cfg.measurement_count; ++g) {
      double sq = 0.0;
      for (std::size_t j = 0; j < feature; ++j) {
        const double x = gauss(rng);
        bank.vectors.values[g * feature + j] = x;
        sq += x * x;
      }
      const double n = std::max(std::sqrt(sq), 1e-12);
      for (std::size_t j = 0; j < feature; ++j) bank.vectors.values[g * feature + j] /= n;
    }
    bank.vectors.set_requires_grad(true);

    p.head_weights[s] = glorot(kClassCounts[s], cfg.head_input_dim(), tensor_rng(seed, ordinal++));
    p.head_biases[s] = zeros_param({kClassCounts[s]});
  }

  const double squashed = std::clamp(cfg.fusion.cos_phi, -0.999999, 0.999999);
  p.fusion_cos_raw = diff::Tensor({1}, {std::atanh(squashed)});
  p.fusion_cos_raw.set_requires_grad(cfg.trainable_cos_phi);
  return p;
}

std::vector<diff::NamedTensor> ModelParams::named_tensors() {
  std::vector<diff::NamedTensor> out;
  for (int m = 0; m < 3; ++m) {
    const std::string prefix = layers::modality_name(static_cast<Modality>(m));
    out.push_back({"encoder." + prefix + ".weight", &encoders[m].weight});
    out.push_back({"encoder." + prefix + ".bias", &encoders[m].bias});
    out.push_back({"encoder." + prefix + ".phase", &encoders[m].phase});
    out.push_back({"gru." + prefix + ".w_update", &grus[m].w_update});
    out.push_back({"gru." + prefix + ".w_reset", &grus[m].w_reset});
    out.push_back({"gru." + prefix + ".w_candidate", &grus[m].w_candidate});
    out.push_back({"gru." + prefix + ".u_update", &grus[m].u_update});
    out.push_back({"gru." + prefix + ".u_reset", &grus[m].u_reset});
    out.push_back({"gru." + prefix + ".u_candidate", &grus[m].u_candidate});
    out.push_back({"gru." + prefix + ".b_update", &grus[m].b_update});
    out.push_back({"gru." + prefix + ".b_reset", &grus[m].b_reset});
    out.push_back({"gru." + prefix + ".b_candidate", &grus[m].b_candidate});
    out.push_back({"mixture." + prefix + ".logits", &mixtures[m].logits});
  }
  for (int s = 0; s < 3; ++s) {
    const std::string prefix = layers::task_name(static_cast<Task>(s));
    out.push_back({"bank." + prefix, &banks[s].vectors});
    out.push_back({"head." + prefix + ".weight", &head_weights[s]});
    out.push_back({"head." + prefix + ".bias", &head_biases[s]});
  }
  out.push_back({"fusion.cos_raw", &fusion_cos_raw});
  return out;
}

std::vector<diff::NamedTensor> ModelParams::active_tensors() {
  std::vector<diff::NamedTensor> out;
  for (Modality m : cfg.active_modalities()) {
    const int i = static_cast<int>(m);
    const std::string prefix = layers::modality_name(m);
    out.push_back({"encoder." + prefix + ".weight", &encoders[i].weight});
    out.push_back({"encoder." + prefix + ".bias", &encoders[i].bias});
    if (!cfg.freeze_phases) out.push_back({"encoder." + prefix + ".phase", &encoders[i].phase});
    out.push_back({"gru." + prefix + ".w_update", &grus[i].w_update});
    out.push_back({"gru." + prefix + ".w_reset", &grus[i].w_reset});
    out.push_back({"gru." + prefix + ".w_candidate", &grus[i].w_candidate});
    out.push_back({"gru." + prefix + ".u_update", &grus[i].u_update});
    out.push_back({"gru." + prefix + ".u_reset", &grus[i].u_reset});
    out.push_back({"gru." + prefix + ".u_candidate", &grus[i].u_candidate});
    out.push_back({"gru." + prefix + ".b_update", &grus[i].b_update});
    out.push_back({"gru." + prefix + ".b_reset", &grus[i].b_reset});
    out.push_back({"gru." + prefix + ".b_candidate", &grus[i].b_candidate});
    out.push_back({"mixture." + prefix + ".logits", &mixtures[i].logits});
  }
  for (Task s : cfg.active_tasks()) {
    const int i = static_cast<int>(s);
    const std::string prefix = layers::task_name(s);
    if (!cfg.trad_head) out.push_back({"bank." + prefix, &banks[i].vectors});
    out.push_back({"head." + prefix + ".weight", &head_weights[i]});
    out.push_back({"head." + prefix + ".bias", &head_biases[i]});
  }
  if (cfg.trainable_cos_phi && cfg.fusion.mode == layers::FusionConfig::Mode::interference) {
    out.push_back({"fusion.cos_raw", &fusion_cos_raw});
  }
  return out;
}

void ModelParams::zero_grads() {
  for (auto& nt : named_tensors()) nt.tensor->zero_grad();
}

ForwardValues forward_on_tape(diff::Tape& tape, const data::DialogueSample& sample,
                              ModelParams& params, Mode mode, const DropoutMasks* masks) {
  const Config& cfg = params.cfg;
  if (sample.utterances.empty()) {
    throw DataError("forward: sample " + sample.dialogue_id + " has no utterances");
  }

  const std::size_t contexts_available = sample.context_count();
  const std::size_t limit = cfg.no_context ? 0 : cfg.context_limit;
  const std::size_t take = std::min(contexts_available, limit);
  std::vector<const data::Utterance*> sequence;
  for (std::size_t i = contexts_available - take; i < sample.utterances.size(); ++i) {
    sequence.push_back(&sample.utterances[i]);
  }

  const auto modalities = cfg.active_modalities();
  for (const data::Utterance* u : sequence) {
    for (Modality m : modalities) {
      for (double x : modality_features(*u, m)) {
        if (!std::isfinite(x)) {
          throw DataError("forward: non-finite feature in sample " + sample.dialogue_id);
        }
      }
    }
  }

  diff::Value cos_value{};
  const diff::Value* cos_node = nullptr;
  if (cfg.trainable_cos_phi && cfg.fusion.mode == layers::FusionConfig::Mode::interference) {
    cos_value = tape.tanh(tape.leaf(params.fusion_cos_raw));
    cos_node = &cos_value;
  }

  ForwardValues out;
  std::vector<diff::Value> fusion_inputs;
  for (Modality m : modalities) {
    const int mi = static_cast<int>(m);
    const std::size_t d_m = cfg.modality_dim(m);
    std::vector<layers::ComplexValue> encoded;
    encoded.reserve(sequence.size());
    for (const data::Utterance* u : sequence) {
      const auto& feats = modality_features(*u, m);
      if (feats.size() != d_m) {
        throw ConfigError("forward: sample " + sample.dialogue_id + " has " +
                          std::string(layers::modality_name(m)) + " dimension " +
                          std::to_string(feats.size()) + ", model expects " + std::to_string(d_m));
      }
      encoded.push_back(layers::encode_modality(tape, tape.constant(feats), params.encoders[mi]));
    }
    const auto hiddens = layers::contextualize(tape, encoded, params.grus[mi]);
    diff::Value rho = layers::compose_density(tape, hiddens, params.mixtures[mi]);
    out.densities[mi] = rho;
    out.density_present[mi] = true;

    diff::Value dist = tape.diagonal(rho);
    if (cfg.fusion.append_top_eigvec) {
      // Mixes in the Born distribution of the dominant eigenvector so the
      // off-diagonal content reaches the fusion path. The eigenvector is
      // held constant in the backward pass.
      const auto rho_values = tape.values_copy(rho);
      const std::size_t d = tape.shape(rho)[0];
      const auto eig = qcore::hermitian_eig(qcore::Matrix(d, d, rho_values));
      std::vector<double> top_sq(d);
      for (std::size_t i = 0; i < d; ++i) {
        const double v = eig.eigenvectors(i, d - 1);
        top_sq[i] = v * v;
      }
      dist = tape.add(tape.scale_const(dist, 0.5),
                      tape.scale_const(tape.constant(top_sq), 0.5));
    }
    fusion_inputs.push_back(dist);
  }

  out.fused = layers::fuse_distributions(tape, fusion_inputs, cfg.fusion, cos_node);

  for (Task s : cfg.active_tasks()) {
    const int si = static_cast<int>(s);
    diff::Value features;
    if (cfg.trad_head) {
      features = out.fused;
    } else {
      features = layers::measure_on_tape(tape, params.banks[si], out.fused);
      out.measured[si] = features;
      out.measured_present[si] = true;
    }
    if (mode == Mode::train && masks != nullptr && !masks->per_task[si].empty()) {
      features = tape.dropout_mask_apply(features, masks->per_task[si]);
    }
    out.logits[si] = tape.add(tape.matmul(tape.leaf(params.head_weights[si]), features),
                              tape.leaf(params.head_biases[si]));
    out.logits_present[si] = true;
  }
  return out;
}

ForwardSnapshot forward_snapshot(const data::DialogueSample& sample, ModelParams& params) {
  diff::Tape tape;
  const ForwardValues values = forward_on_tape(tape, sample, params, Mode::eval, nullptr);
  ForwardSnapshot snap;
  for (int m = 0; m < 3; ++m) {
    if (!values.density_present[m]) continue;
    const std::size_t d = tape.shape(values.densities[m])[0];
    snap.densities[m] = qcore::Matrix(d, d, tape.values_copy(values.densities[m]));
    snap.density_present[m] = true;
  }
  snap.fused = tape.values_copy(values.fused);
  for (int s = 0; s < 3; ++s) {
    if (values.measured_present[s]) snap.measured[s] = tape.values_copy(values.measured[s]);
    if (values.logits_present[s]) {
      snap.probabilities[s] = softmax_values(tape.values_copy(values.logits[s]));
      snap.task_present[s] = true;
    }
  }
  return snap;
}

namespace {

int task_label(const data::DialogueSample& s, Task t) {
  switch (t) {
    case Task::sar: return s.sarcasm;
    case Task::sen: return s.sentiment;
    default: return s.emotion;
  }
}

}  // namespace

BatchLossValues loss_on_tape(diff::Tape& tape, const std::vector<ForwardValues>& outputs,
                             const std::vector<const data::DialogueSample*>& samples,
                             ModelParams& params) {
  if (outputs.size() != samples.size() || outputs.empty()) {
    throw ContractError("loss_on_tape: outputs and samples must pair up and be non-empty");
  }
  const Config& cfg = params.cfg;
  const auto weights = cfg.normalized_task_weights();
  const double inv_n = 1.0 / static_cast<double>(samples.size());

  BatchLossValues loss;
  diff::Value joint{};
  bool have_joint = false;
  for (Task s : cfg.active_tasks()) {
    const int si = static_cast<int>(s);
    std::vector<diff::Value> log_probs;
    log_probs.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const int label = task_label(*samples[i], s);
      if (label < 0 || static_cast<std::size_t>(label) >= kClassCounts[si]) {
        throw DataError("loss: label " + std::to_string(label) + " out of range for sample " +
                        samples[i]->dialogue_id);
      }
      diff::Value probs = tape.softmax(outputs[i].logits[si]);
      diff::Value picked = tape.slice(probs, static_cast<std::size_t>(label), label + 1);
      log_probs.push_back(tape.natural_log(picked));
    }
    diff::Value task_loss = tape.scale_const(tape.sum(tape.concat(log_probs)), -inv_n);
    loss.per_task[si] = task_loss;
    loss.task_present[si] = true;
    diff::Value weighted = tape.scale_const(task_loss, weights[si]);
    joint = have_joint ? tape.add(joint, weighted) : weighted;
    have_joint = true;
  }

  if (cfg.l2_coefficient > 0.0) {
    diff::Value reg{};
    bool have_reg = false;
    for (auto& nt : params.active_tensors()) {
      diff::Value term = tape.sum(tape.square(tape.leaf(*nt.tensor)));
      reg = have_reg ? tape.add(reg, term) : term;
      have_reg = true;
    }
    if (have_reg) joint = tape.add(joint, tape.scale_const(reg, cfg.l2_coefficient));
  }
  loss.joint = joint;
  return loss;
}

double Metrics::mean_f1() const {
  double total = 0.0;
  int count = 0;
  for (int s = 0; s < 3; ++s) {
    if (present[s]) {
      total += per_task[s].micro_f1;
      ++count;
    }
  }
  return count > 0 ? total / count : 0.0;
}

TaskMetrics metrics_from_confusion(std::vector<std::vector<std::size_t>> confusion) {
  TaskMetrics tm;
  tm.confusion = std::move(confusion);
  const std::size_t classes = tm.confusion.size();
  double tp = 0.0, fp = 0.0, fn = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    tp += static_cast<double>(tm.confusion[c][c]);
    for (std::size_t o = 0; o < classes; ++o) {
      if (o != c) {
        fp += static_cast<double>(tm.confusion[o][c]);
        fn += static_cast<double>(tm.confusion[c][o]);
      }
    }
  }
  tm.precision = tp + fp > 0.0 ? tp / (tp + fp) : 0.0;
  tm.recall = tp + fn > 0.0 ? tp / (tp + fn) : 0.0;
  tm.micro_f1 = tm.precision + tm.recall > 0.0
                    ? 2.0 * tm.precision * tm.recall / (tm.precision + tm.recall)
                    : 0.0;
  return tm;
}

EvalPass eval_pass(const data::Dataset& dataset, ModelParams& params) {
  const Config& cfg = params.cfg;
  const auto tasks = cfg.active_tasks();
  if (tasks.empty()) throw ContractError("eval_pass: no active task");
  if (dataset.samples.empty()) throw ContractError("eval_pass: empty dataset");

  EvalPass pass;
  for (Task s : tasks) {
    const int si = static_cast<int>(s);
    pass.metrics.present[si] = true;
    pass.metrics.per_task[si].confusion.assign(kClassCounts[si],
                                               std::vector<std::size_t>(kClassCounts[si], 0));
  }

  for (const data::DialogueSample& sample : dataset.samples) {
    const ForwardSnapshot snap = forward_snapshot(sample, params);
    for (Task s : tasks) {
      const int si = static_cast<int>(s);
      const auto& probs = snap.probabilities[si];
      const int label = task_label(sample, s);
      pass.metrics.per_task[si].confusion[label][argmax_lowest_tie(probs)]++;
      pass.task_losses[si] -=
          std::log(std::max(probs[static_cast<std::size_t>(label)], kProbClamp));
    }
  }

  const double inv_n = 1.0 / static_cast<double>(dataset.samples.size());
  const auto weights = cfg.normalized_task_weights();
  for (Task s : tasks) {
    const int si = static_cast<int>(s);
    pass.task_losses[si] *= inv_n;
    pass.joint_loss += weights[si] * pass.task_losses[si];
    pass.metrics.per_task[si] =
        metrics_from_confusion(std::move(pass.metrics.per_task[si].confusion));
  }

  if (cfg.l2_coefficient > 0.0) {
    double sq = 0.0;
    for (auto& nt : params.active_tensors()) {
      for (double x : nt.tensor->values) sq += x * x;
    }
    pass.joint_loss += cfg.l2_coefficient * sq;
  }
  return pass;
}

Metrics evaluate(const data::Dataset& dataset, ModelParams& params) {
  return eval_pass(dataset, params).metrics;
}

double joint_loss(const data::Dataset& dataset, ModelParams& params) {
  return eval_pass(dataset, params).joint_loss;
}

namespace {

DropoutMasks draw_masks(std::mt19937_64& rng, const Config& cfg) {
  DropoutMasks masks;
  if (cfg.dropout_rate <= 0.0) return masks;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double keep = 1.0 - cfg.dropout_rate;
  const std::size_t len = cfg.head_input_dim();
  for (Task s : cfg.active_tasks()) {
    auto& mask = masks.per_task[static_cast<int>(s)];
    mask.resize(len);
    for (double& x : mask) x = unif(rng) < keep ? 1.0 / keep : 0.0;
  }
  return masks;
}

void check_dataset_dims(const data::Dataset& ds, const Config& cfg, const char* which) {
  for (Modality m : cfg.active_modalities()) {
    std::size_t have = 0;
    switch (m) {
      case Modality::text: have = ds.manifest.text_dim; break;
      case Modality::video: have = ds.manifest.video_dim; break;
      default: have = ds.manifest.audio_dim; break;
    }
    if (have != cfg.modality_dim(m)) {
      throw ConfigError(std::string(which) + " dataset " + layers::modality_name(m) +
                        " dimension " + std::to_string(have) + " does not match the model's " +
                        std::to_string(cfg.modality_dim(m)));
    }
  }
}

}  // namespace

FitResult fit(const data::Dataset& train_set, const data::Dataset& dev_set, ModelParams params) {
  const Config& cfg = params.cfg;
  if (train_set.samples.empty() || dev_set.samples.empty()) {
    throw ContractError("fit: train and dev sets must be non-empty");
  }
  check_dataset_dims(train_set, cfg, "train");
  check_dataset_dims(dev_set, cfg, "dev");

  History history;
  const EvalPass train0 = eval_pass(train_set, params);
  const EvalPass dev0 = eval_pass(dev_set, params);
  history.epoch0_train_loss = train0.joint_loss;
  history.epoch0_dev_loss = dev0.joint_loss;
  for (int s = 0; s < 3; ++s) {
    history.epoch0_dev_f1[s] = dev0.metrics.present[s] ? dev0.metrics.per_task[s].micro_f1 : 0.0;
  }
  history.best_dev_loss = dev0.joint_loss;

  ModelParams best = params;
  double best_score = cfg.dev_select_f1 ? -dev0.metrics.mean_f1() : dev0.joint_loss;

  double lr = cfg.learning_rate;
  std::size_t since_best_early = 0;
  std::size_t since_best_decay = 0;
  std::mt19937_64 dropout_rng(cfg.seed ^ 0xA5A5A5A5DEADBEEFULL);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto epoch_batches =
        data::batches(train_set.samples.size(), cfg.batch_size, cfg.seed, epoch);
    std::size_t batch_index = 0;
    for (const auto& batch : epoch_batches) {
      diff::Tape tape;
      std::vector<ForwardValues> outputs;
      std::vector<const data::DialogueSample*> samples;
      std::vector<DropoutMasks> masks(batch.size());
      outputs.reserve(batch.size());
      samples.reserve(batch.size());
      for (std::size_t k = 0; k < batch.size(); ++k) {
        masks[k] = draw_masks(dropout_rng, cfg);
        const data::DialogueSample& sample = train_set.samples[batch[k]];
        outputs.push_back(forward_on_tape(tape, sample, params, Mode::train, &masks[k]));
        samples.push_back(&sample);
      }
      const BatchLossValues loss = loss_on_tape(tape, outputs, samples, params);
      const double value = tape.scalar_value(loss.joint);
      if (!std::isfinite(value)) {
        throw NumericError("fit: non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                           std::to_string(batch_index));
      }
      params.zero_grads();
      tape.backward(loss.joint);
      if (lr != 0.0) {
        for (auto& nt : params.active_tensors()) {
          auto& t = *nt.tensor;
          for (std::size_t i = 0; i < t.values.size(); ++i) t.values[i] -= lr * t.grad[i];
        }
      }
      ++batch_index;
    }

    const EvalPass train_pass = eval_pass(train_set, params);
    const EvalPass dev_pass = eval_pass(dev_set, params);
    EpochRecord record;
    record.epoch = epoch;
    record.learning_rate = lr;
    record.train_loss = train_pass.joint_loss;
    record.dev_loss = dev_pass.joint_loss;
    for (int s = 0; s < 3; ++s) {
      record.dev_f1[s] = dev_pass.metrics.present[s] ? dev_pass.metrics.per_task[s].micro_f1 : 0.0;
    }

    const double score = cfg.dev_select_f1 ? -dev_pass.metrics.mean_f1() : dev_pass.joint_loss;
    if (score < best_score) {
      best_score = score;
      best = params;
      history.best_epoch = epoch;
      history.best_dev_loss = dev_pass.joint_loss;
      since_best_early = 0;
      since_best_decay = 0;
      record.improved = true;
    } else {
      ++since_best_early;
      ++since_best_decay;
    }
    history.epochs.push_back(record);
    history.stopped_epoch = epoch;

    if (since_best_decay >= cfg.lr_decay_patience) {
      lr *= cfg.lr_decay_factor;
      since_best_decay = 0;
    }
    if (since_best_early >= cfg.early_stop_patience) break;
  }

  return FitResult{std::move(best), std::move(history)};
}

diff::GradCheckReport gradient_check(const std::vector<data::DialogueSample>& batch,
                                     ModelParams& params, double step) {
  if (batch.empty()) throw ContractError("gradient_check: empty batch");
  std::mt19937_64 mask_rng(params.cfg.seed ^ 0x5F5F5F5FULL);
  std::vector<DropoutMasks> masks(batch.size());
  for (auto& m : masks) m = draw_masks(mask_rng, params.cfg);

  auto loss_fn = [&](bool with_grad) {
    diff::Tape tape;
    std::vector<ForwardValues> outputs;
    std::vector<const data::DialogueSample*> samples;
    for (std::size_t k = 0; k < batch.size(); ++k) {
      outputs.push_back(forward_on_tape(tape, batch[k], params, Mode::train, &masks[k]));
      samples.push_back(&batch[k]);
    }
    const BatchLossValues loss = loss_on_tape(tape, outputs, samples, params);
    if (with_grad) {
      params.zero_grads();
      tape.backward(loss.joint);
    }
    return tape.scalar_value(loss.joint);
  };
  return diff::finite_diff_check(loss_fn, params.active_tensors(), step);
}

std::vector<MatrixCell> run_matrix(const Config& base, const data::Dataset& train_set,
                                   const data::Dataset& dev_set, const data::Dataset& test_set,
                                   bool grid, bool context_sweep) {
  std::vector<MatrixCell> rows;
  std::uint64_t ordinal = 0;

  auto run_cell = [&](const Config& cfg) {
    MatrixCell cell;
    cell.tasks = cfg.active_tasks();
    cell.modalities = cfg.active_modalities();
    cell.context_limit = cfg.context_limit;
    cell.seed = base.seed + ordinal;
    ++ordinal;
    ModelParams params = ModelParams::init(cfg, cell.seed);
    FitResult result = fit(train_set, dev_set, std::move(params));
    cell.final_dev_loss = result.history.best_dev_loss;
    cell.metrics = evaluate(test_set, result.params);
    rows.push_back(std::move(cell));
  };

  if (grid) {
    for (int task_bits = 1; task_bits < 8; ++task_bits) {
      for (int mod_bits = 1; mod_bits < 8; ++mod_bits) {
        Config cfg = base;
        for (int i = 0; i < 3; ++i) {
          cfg.task_active[i] = (task_bits >> i) & 1;
          cfg.modality_active[i] = (mod_bits >> i) & 1;
        }
        run_cell(cfg);
      }
    }
  }
  if (context_sweep) {
    for (std::size_t limit = 0; limit <= 3; ++limit) {
      Config cfg = base;
      cfg.context_limit = limit;
      run_cell(cfg);
    }
  }
  return rows;
}

namespace {

json config_to_json(const Config& c) {
  json j;
  j["text_dim"] = c.text_dim;
  j["video_dim"] = c.video_dim;
  j["audio_dim"] = c.audio_dim;
  j["embedding_dim"] = c.embedding_dim;
  j["gru_cells"] = c.gru_cells;
  j["measurement_count"] = c.measurement_count;
  j["modality_active"] = c.modality_active;
  j["task_active"] = c.task_active;
  j["cos_phi"] = c.fusion.cos_phi;
  j["alpha_sq"] = c.fusion.alpha_sq;
  j["fusion_mode"] =
      c.fusion.mode == layers::FusionConfig::Mode::interference ? "interference" : "concat";
  j["append_top_eigvec"] = c.fusion.append_top_eigvec;
  j["trainable_cos_phi"] = c.trainable_cos_phi;
  j["phase_prior"] = c.phase_prior;
  j["freeze_phases"] = c.freeze_phases;
  j["learning_rate"] = c.learning_rate;
  j["batch_size"] = c.batch_size;
  j["dropout_rate"] = c.dropout_rate;
  j["epochs"] = c.epochs;
  j["early_stop_patience"] = c.early_stop_patience;
  j["lr_decay_factor"] = c.lr_decay_factor;
  j["lr_decay_patience"] = c.lr_decay_patience;
  j["l2_coefficient"] = c.l2_coefficient;
  j["seed"] = c.seed;
  j["task_weights"] = c.task_weights;
  j["context_limit"] = c.context_limit;
  j["no_context"] = c.no_context;
  j["trad_head"] = c.trad_head;
  j["dev_select_f1"] = c.dev_select_f1;
  return j;
}

Config config_from_json(const json& j) {
  Config c;
  c.text_dim = j.at("text_dim").get<std::size_t>();
  c.video_dim = j.at("video_dim").get<std::size_t>();
  c.audio_dim = j.at("audio_dim").get<std::size_t>();
  c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
  c.gru_cells = j.at("gru_cells").get<std::size_t>();
  c.measurement_count = j.at("measurement_count").get<std::size_t>();
  c.modality_active = j.at("modality_active").get<std::array<bool, 3>>();
  c.task_active = j.at("task_active").get<std::array<bool, 3>>();
  c.fusion.cos_phi = j.at("cos_phi").get<double>();
  c.fusion.alpha_sq = j.at("alpha_sq").get<double>();
  c.fusion.mode = j.at("fusion_mode").get<std::string>() == "concat"
                      ? layers::FusionConfig::Mode::concat
                      : layers::FusionConfig::Mode::interference;
  c.fusion.append_top_eigvec = j.at("append_top_eigvec").get<bool>();
  c.trainable_cos_phi = j.at("trainable_cos_phi").get<bool>();
  c.phase_prior = j.at("phase_prior").get<int>();
  c.freeze_phases = j.at("freeze_phases").get<bool>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.early_stop_patience = j.at("early_stop_patience").get<std::size_t>();
  c.lr_decay_factor = j.at("lr_decay_factor").get<double>();
  c.lr_decay_patience = j.at("lr_decay_patience").get<std::size_t>();
  c.l2_coefficient = j.at("l2_coefficient").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.task_weights = j.at("task_weights").get<std::array<double, 3>>();
  c.context_limit = j.at("context_limit").get<std::size_t>();
  c.no_context = j.at("no_context").get<bool>();
  c.trad_head = j.at("trad_head").get<bool>();
  c.dev_select_f1 = j.at("dev_select_f1").get<bool>();
  return c;
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::string& path) {
  json j;
  j["format_version"] = 1;
  j["config"] = config_to_json(params.cfg);
  json tensors;
  // named_tensors is non-const only because NamedTensor carries a
  // mutable pointer for the optimizer; serialization just reads.
  auto& mutable_params = const_cast<ModelParams&>(params);
  for (auto& nt : mutable_params.named_tensors()) {
    tensors[nt.name] = {{"shape", nt.tensor->shape},
                        {"values", nt.tensor->values},
                        {"requires_grad", nt.tensor->requires_grad}};
  }
  j["tensors"] = std::move(tensors);
  std::ofstream out(path);
  if (!out) throw IoError("save_checkpoint: cannot open " + path);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("save_checkpoint: write failed for " + path);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_checkpoint: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("load_checkpoint: malformed JSON in " + path + " (" + e.what() + ")");
  }
  const Config cfg = config_from_json(j.at("config"));
  ModelParams params = ModelParams::init(cfg, cfg.seed);
  const json& tensors = j.at("tensors");
  for (auto& nt : params.named_tensors()) {
    if (!tensors.contains(nt.name)) {
      throw IoError("load_checkpoint: tensor '" + nt.name + "' missing from " + path);
    }
    const json& tj = tensors.at(nt.name);
    const auto shape = tj.at("shape").get<diff::Shape>();
    auto values = tj.at("values").get<std::vector<double>>();
    if (shape != nt.tensor->shape || values.size() != nt.tensor->values.size()) {
      throw IoError("load_checkpoint: tensor '" + nt.name + "' has shape " +
                    diff::shape_string(shape) + ", expected " +
                    diff::shape_string(nt.tensor->shape));
    }
    nt.tensor->values = std::move(values);
    nt.tensor->set_requires_grad(tj.at("requires_grad").get<bool>());
  }
  return params;
}

}  // namespace quiet::model
