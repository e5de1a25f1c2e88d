// layers.hpp
// The five building blocks of the architecture: complex-valued encoder,
// recurrent contextualizer, density-matrix composition, interference
// fusion and measurement banks. Forward passes are recorded on a Tape so
// every parameter receives exact gradients.
#pragma once

#include <cstdint>
#include <vector>

#include "quiet/qcore.hpp"
#include "quiet/tape.hpp"

namespace quiet::layers {

enum class Modality : int { text = 0, video = 1, audio = 2 };
enum class Task : int { sar = 0, sen = 1, emo = 2 };

constexpr int kModalityCount = 3;
constexpr int kTaskCount = 3;

const char* modality_name(Modality m);
const char* task_name(Task t);

// Per-modality projection, bias and trainable phase vector.
struct EncoderParams {
  diff::Tensor weight;  // d_e x d_m
  diff::Tensor bias;    // d_e
  diff::Tensor phase;   // d_e
};

// Standard GRU gate parameters mapping (input, hidden) -> hidden.
struct GruParams {
  diff::Tensor w_update, w_reset, w_candidate;  // d_h x input
  diff::Tensor u_update, u_reset, u_candidate;  // d_h x d_h
  diff::Tensor b_update, b_reset, b_candidate;  // d_h
};

// Softmax logits over sequence positions, truncated to the actual
// sequence length before use.
struct MixtureParams {
  diff::Tensor logits;  // context_limit + 1
};

struct FusionConfig {
  enum class Mode { interference, concat };

  double cos_phi = -0.3;
  double alpha_sq = 0.5;
  Mode mode = Mode::interference;
  bool append_top_eigvec = false;

  double beta_sq() const { return 1.0 - alpha_sq; }
};

// G trainable raw vectors; the effective measurement vectors are the
// unit-normalized rows, so the unit invariant holds at every step.
struct MeasurementBank {
  Task task = Task::sar;
  diff::Tensor vectors;  // G x feature_dim

  std::size_t count() const { return vectors.shape[0]; }
  std::size_t dim() const { return vectors.shape[1]; }
  // Unit row, clamped normalization for an all-zero raw row.
  std::vector<double> unit_vector(std::size_t index) const;
  bool has_zero_row() const;
};

// Phase initialization keyed on a sentiment prior: -1 draws each
// coordinate uniformly from (-pi, 0), +1 from (0, pi), 0 from (-pi, pi).
std::vector<double> init_phase(int prior, std::size_t dim, std::uint64_t rng_seed);

// A complex state on the tape, split into real/imaginary channels.
struct ComplexValue {
  diff::Value re;
  diff::Value im;
};

// v = W x + b; amplitudes r = abs_smooth(v) / ||abs_smooth(v)||; output
// has re = r cos(theta), im = r sin(theta), so the Born probabilities
// sum to 1 by construction.
ComplexValue encode_modality(diff::Tape& t, diff::Value x, EncoderParams& p);

diff::Value gru_step(diff::Tape& t, diff::Value h_prev, diff::Value input, GruParams& p);

// Flattens each complex state to [re; im], runs the GRU from h0 = 0 and
// returns every hidden state L2-normalized.
std::vector<diff::Value> contextualize(diff::Tape& t, const std::vector<ComplexValue>& sequence,
                                       GruParams& p);

// rho = sum_k softmax(logits[0..len))_k |h_k><h_k| as a square matrix
// node; differentiable w.r.t. hiddens and logits.
diff::Value compose_density(diff::Tape& t, const std::vector<diff::Value>& hiddens,
                            MixtureParams& mix);

// f_p = a2 f_a + b2 f_b + 2 sqrt(a2 f_a b2 f_b) cos(phi), per coordinate.
// Inputs must be coordinate-wise non-negative.
std::vector<double> interfere(const std::vector<double>& f_a, const std::vector<double>& f_b,
                              const FusionConfig& cfg);

// Tape version of interfere. When cos_node carries a value it is used as
// a differentiable cos(phi); otherwise cfg.cos_phi is a constant. Concat
// mode drops the interference term.
diff::Value interfere_on_tape(diff::Tape& t, diff::Value f_a, diff::Value f_b,
                              const FusionConfig& cfg, const diff::Value* cos_node = nullptr);

// Pairs the density diagonals (text&video, text&audio, video&audio),
// interferes each pair and returns l2_normalize([f_tv; f_va; f_ta]).
diff::Value fuse_trimodal(diff::Tape& t, diff::Value rho_text, diff::Value rho_video,
                          diff::Value rho_audio, const FusionConfig& cfg,
                          const diff::Value* cos_node = nullptr);

// Degenerate-path-aware merge of per-modality distributions: three inputs
// follow the trimodal pairing, two inputs reduce to the single pair, one
// input is passed through; the result is always L2-normalized.
diff::Value fuse_distributions(diff::Tape& t, const std::vector<diff::Value>& dists,
                               const FusionConfig& cfg, const diff::Value* cos_node = nullptr);

// m_k = (<unit row k | f>)^2 for every bank row.
diff::Value measure_on_tape(diff::Tape& t, MeasurementBank& bank, diff::Value f);
std::vector<double> measure(const MeasurementBank& bank, const std::vector<double>& f);

enum class Pairing { random, indexwise };

struct PairRecord {
  std::size_t a_index = 0;
  std::size_t b_index = 0;
  double commutator_norm = 0.0;
  double relative_entropy = 0.0;
};

struct IncompatibilityReport {
  std::vector<PairRecord> pairs;
  double mean_commutator_norm = 0.0;
  double mean_relative_entropy = 0.0;
  double nonzero_fraction = 0.0;  // pairs with commutator norm > 1e-9
};

// Samples pair_count operator pairs (rank-1 projectors from unit bank
// rows) and records the commutator Frobenius norm and the relative
// entropy between the trace-normalized operators.
IncompatibilityReport incompatibility_report(const MeasurementBank& bank_a,
                                             const MeasurementBank& bank_b,
                                             std::size_t pair_count, std::uint64_t rng_seed,
                                             Pairing pairing = Pairing::random);

}  // namespace quiet::layers
