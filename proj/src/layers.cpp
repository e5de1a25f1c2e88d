#include "quiet/layers.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace quiet::layers {

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::text: return "text";
    case Modality::video: return "video";
    case Modality::audio: return "audio";
  }
  return "?";
}

const char* task_name(Task t) {
  switch (t) {
    case Task::sar: return "sar";
    case Task::sen: return "sen";
    case Task::emo: return "emo";
  }
  return "?";
}

std::vector<double> MeasurementBank::unit_vector(std::size_t index) const {
  const std::size_t d = dim();
  std::vector<double> row(vectors.values.begin() + index * d,
                          vectors.values.begin() + (index + 1) * d);
  double sq = 0.0;
  for (double x : row) sq += x * x;
  const double n = std::max(std::sqrt(sq), 1e-12);
  for (double& x : row) x /= n;
  return row;
}

bool MeasurementBank::has_zero_row() const {
  const std::size_t d = dim();
  for (std::size_t g = 0; g < count(); ++g) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double x = vectors.values[g * d + j];
      sq += x * x;
    }
    if (std::sqrt(sq) <= 1e-12) return true;
  }
  return false;
}

std::vector<double> init_phase(int prior, std::size_t dim, std::uint64_t rng_seed) {
  constexpr double pi = std::numbers::pi;
  double lo, hi;
  if (prior < 0) {
    lo = -pi;
    hi = 0.0;
  } else if (prior > 0) {
    lo = 0.0;
    hi = pi;
  } else {
    lo = -pi;
    hi = pi;
  }
  std::mt19937_64 rng(rng_seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> theta(dim);
  for (double& x : theta) x = dist(rng);
  return theta;
}

ComplexValue encode_modality(diff::Tape& t, diff::Value x, EncoderParams& p) {
  diff::Value v = t.add(t.matmul(t.leaf(p.weight), x), t.leaf(p.bias));
  diff::Value r = t.l2_normalize(t.abs_smooth(v));
  diff::Value theta = t.leaf(p.phase);
  return ComplexValue{t.elementwise_mul(r, t.cos(theta)), t.elementwise_mul(r, t.sin(theta))};
}

diff::Value gru_step(diff::Tape& t, diff::Value h_prev, diff::Value input, GruParams& p) {
  diff::Value z = t.sigmoid(t.add(
      t.add(t.matmul(t.leaf(p.w_update), input), t.matmul(t.leaf(p.u_update), h_prev)),
      t.leaf(p.b_update)));
  diff::Value r = t.sigmoid(t.add(
      t.add(t.matmul(t.leaf(p.w_reset), input), t.matmul(t.leaf(p.u_reset), h_prev)),
      t.leaf(p.b_reset)));
  diff::Value candidate = t.tanh(t.add(
      t.add(t.matmul(t.leaf(p.w_candidate), input),
            t.matmul(t.leaf(p.u_candidate), t.elementwise_mul(r, h_prev))),
      t.leaf(p.b_candidate)));
  diff::Value ones = t.constant(std::vector<double>(t.shape(z)[0], 1.0));
  return t.add(t.elementwise_mul(t.sub(ones, z), h_prev), t.elementwise_mul(z, candidate));
}

std::vector<diff::Value> contextualize(diff::Tape& t, const std::vector<ComplexValue>& sequence,
                                       GruParams& p) {
  if (sequence.empty()) throw ContractError("contextualize: empty sequence");
  const std::size_t d_h = p.u_update.shape[0];
  diff::Value h = t.constant(std::vector<double>(d_h, 0.0));
  std::vector<diff::Value> hiddens;
  hiddens.reserve(sequence.size());
  for (const ComplexValue& state : sequence) {
    diff::Value input = t.concat({state.re, state.im});
    h = gru_step(t, h, input, p);
    hiddens.push_back(t.l2_normalize(h));
  }
  return hiddens;
}

diff::Value compose_density(diff::Tape& t, const std::vector<diff::Value>& hiddens,
                            MixtureParams& mix) {
  if (hiddens.empty()) throw ContractError("compose_density: no hidden states");
  const std::size_t len = hiddens.size();
  if (len > mix.logits.size()) {
    throw DimensionError("compose_density: sequence length " + std::to_string(len) +
                         " exceeds mixture size " + std::to_string(mix.logits.size()));
  }
  diff::Value logits = t.leaf(mix.logits);
  if (len < mix.logits.size()) logits = t.slice(logits, 0, len);
  diff::Value p = t.softmax(logits);

  const std::size_t d = t.shape(hiddens[0])[0];
  diff::Value rho{};
  for (std::size_t k = 0; k < len; ++k) {
    diff::Value outer = t.matmul(t.reshape(hiddens[k], {d, 1}), t.reshape(hiddens[k], {1, d}));
    diff::Value weighted = t.scale(outer, t.slice(p, k, k + 1));
    rho = (k == 0) ? weighted : t.add(rho, weighted);
  }
  return rho;
}

std::vector<double> interfere(const std::vector<double>& f_a, const std::vector<double>& f_b,
                              const FusionConfig& cfg) {
  if (f_a.size() != f_b.size()) {
    throw DimensionError("interfere: lengths " + std::to_string(f_a.size()) + " vs " +
                         std::to_string(f_b.size()));
  }
  const double a2 = cfg.alpha_sq;
  const double b2 = cfg.beta_sq();
  std::vector<double> out(f_a.size());
  for (std::size_t k = 0; k < f_a.size(); ++k) {
    if (f_a[k] < -1e-12 || f_b[k] < -1e-12) {
      throw ContractError("interfere: negative coordinate at index " + std::to_string(k));
    }
    const double fa = std::max(f_a[k], 0.0);
    const double fb = std::max(f_b[k], 0.0);
    out[k] = a2 * fa + b2 * fb;
    if (cfg.mode == FusionConfig::Mode::interference) {
      out[k] += 2.0 * std::sqrt(a2 * fa * b2 * fb) * cfg.cos_phi;
    }
  }
  return out;
}

diff::Value interfere_on_tape(diff::Tape& t, diff::Value f_a, diff::Value f_b,
                              const FusionConfig& cfg, const diff::Value* cos_node) {
  diff::Value wa = t.scale_const(f_a, cfg.alpha_sq);
  diff::Value wb = t.scale_const(f_b, cfg.beta_sq());
  diff::Value linear = t.add(wa, wb);
  if (cfg.mode == FusionConfig::Mode::concat) return linear;
  diff::Value root = t.sqrt(t.elementwise_mul(wa, wb));
  diff::Value cross = (cos_node != nullptr) ? t.scale_const(t.scale(root, *cos_node), 2.0)
                                            : t.scale_const(root, 2.0 * cfg.cos_phi);
  return t.add(linear, cross);
}

diff::Value fuse_trimodal(diff::Tape& t, diff::Value rho_text, diff::Value rho_video,
                          diff::Value rho_audio, const FusionConfig& cfg,
                          const diff::Value* cos_node) {
  return fuse_distributions(
      t, {t.diagonal(rho_text), t.diagonal(rho_video), t.diagonal(rho_audio)}, cfg, cos_node);
}

diff::Value fuse_distributions(diff::Tape& t, const std::vector<diff::Value>& dists,
                               const FusionConfig& cfg, const diff::Value* cos_node) {
  switch (dists.size()) {
    case 1:
      return t.l2_normalize(dists[0]);
    case 2:
      return t.l2_normalize(interfere_on_tape(t, dists[0], dists[1], cfg, cos_node));
    case 3: {
      diff::Value f_tv = interfere_on_tape(t, dists[0], dists[1], cfg, cos_node);
      diff::Value f_ta = interfere_on_tape(t, dists[0], dists[2], cfg, cos_node);
      diff::Value f_va = interfere_on_tape(t, dists[1], dists[2], cfg, cos_node);
      return t.l2_normalize(t.concat({f_tv, f_va, f_ta}));
    }
    default:
      throw ContractError("fuse_distributions: expected 1..3 inputs, got " +
                          std::to_string(dists.size()));
  }
}

diff::Value measure_on_tape(diff::Tape& t, MeasurementBank& bank, diff::Value f) {
  diff::Value unit_rows = t.rows_l2_normalize(t.leaf(bank.vectors));
  return t.square(t.matmul(unit_rows, f));
}

std::vector<double> measure(const MeasurementBank& bank, const std::vector<double>& f) {
  if (f.size() != bank.dim()) {
    throw DimensionError("measure: state dimension " + std::to_string(f.size()) +
                         " vs bank dimension " + std::to_string(bank.dim()));
  }
  double sq = 0.0;
  for (double x : f) sq += x * x;
  if (std::abs(std::sqrt(sq) - 1.0) > 1e-9) {
    throw ContractError("measure: state norm " + std::to_string(std::sqrt(sq)) + " is not 1");
  }
  std::vector<double> m(bank.count());
  for (std::size_t g = 0; g < bank.count(); ++g) {
    const auto row = bank.unit_vector(g);
    double acc = 0.0;
    for (std::size_t j = 0; j < f.size(); ++j) acc += row[j] * f[j];
    m[g] = acc * acc;
  }
  return m;
}

IncompatibilityReport incompatibility_report(const MeasurementBank& bank_a,
                                             const MeasurementBank& bank_b,
                                             std::size_t pair_count, std::uint64_t rng_seed,
                                             Pairing pairing) {
  if (bank_a.dim() != bank_b.dim()) {
    throw DimensionError("incompatibility_report: bank dimensions " +
                         std::to_string(bank_a.dim()) + " vs " + std::to_string(bank_b.dim()));
  }
  std::mt19937_64 rng(rng_seed);
  std::uniform_int_distribution<std::size_t> pick_a(0, bank_a.count() - 1);
  std::uniform_int_distribution<std::size_t> pick_b(0, bank_b.count() - 1);

  IncompatibilityReport report;
  report.pairs.reserve(pair_count);
  std::size_t nonzero = 0;
  for (std::size_t k = 0; k < pair_count; ++k) {
    PairRecord rec;
    if (pairing == Pairing::indexwise) {
      rec.a_index = k % bank_a.count();
      rec.b_index = k % bank_b.count();
    } else {
      rec.a_index = pick_a(rng);
      rec.b_index = pick_b(rng);
    }
    const qcore::Matrix op_a = qcore::outer_product(bank_a.unit_vector(rec.a_index));
    const qcore::Matrix op_b = qcore::outer_product(bank_b.unit_vector(rec.b_index));
    rec.commutator_norm = qcore::commutator(op_a, op_b).frobenius_norm;
    rec.relative_entropy = qcore::relative_entropy(qcore::density_from_operator(op_a),
                                                   qcore::density_from_operator(op_b));
    report.mean_commutator_norm += rec.commutator_norm;
    report.mean_relative_entropy += rec.relative_entropy;
    if (rec.commutator_norm > 1e-9) ++nonzero;
    report.pairs.push_back(rec);
  }
  if (pair_count > 0) {
    report.mean_commutator_norm /= static_cast<double>(pair_count);
    report.mean_relative_entropy /= static_cast<double>(pair_count);
    report.nonzero_fraction = static_cast<double>(nonzero) / static_cast<double>(pair_count);
  }
  return report;
}

}  // namespace quiet::layers
