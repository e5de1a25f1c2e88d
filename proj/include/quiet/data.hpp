// data.hpp
// Dataset schema, JSONL loading/validation, batching, and a synthetic
// multi-modal dialogue generator that plants cross-modal structure.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "quiet/error.hpp"

namespace quiet::data {

struct Utterance {
  std::vector<double> text;
  std::vector<double> video;
  std::vector<double> audio;
  int sentiment_prior = 0;  // -1, 0 or +1
};

// Ordered contexts followed by the labeled target utterance.
struct DialogueSample {
  std::string dialogue_id;
  std::vector<Utterance> utterances;
  int sarcasm = 0;    // {0, 1}
  int sentiment = 0;  // {0, 1, 2}
  int emotion = 0;    // {0..8}

  const Utterance& target() const { return utterances.back(); }
  std::size_t context_count() const { return utterances.size() - 1; }
};

struct Dims {
  std::size_t text = 32;
  std::size_t video = 24;
  std::size_t audio = 16;
};

struct GeneratorRecipe {
  std::size_t latent_dim = 4;   // per latent direction
  double noise_sigma = 0.1;    // feature noise
  double emotion_noise = 0.15;  // probability of drawing a noise class
  double prior_flip = 0.10;     // sentiment_prior corruption rate
  double context_drift_near = 0.2;
  double context_drift_far = 0.5;
};

// Accuracy of the latent-based oracle classifier, measured while the
// labels are planted.
struct OracleAccuracy {
  double sarcasm = 0.0;
  double sentiment = 0.0;
  double emotion = 0.0;
};

struct LabelMarginals {
  std::array<std::size_t, 2> sarcasm{};
  std::array<std::size_t, 3> sentiment{};
  std::array<std::size_t, 9> emotion{};
};

struct DatasetManifest {
  int format_version = 1;
  std::size_t text_dim = 0;
  std::size_t video_dim = 0;
  std::size_t audio_dim = 0;
  int sarcasm_classes = 2;
  int sentiment_classes = 3;
  int emotion_classes = 9;
  std::size_t sample_count = 0;
  std::size_t context_limit = 3;
  bool synthetic = false;
  std::uint64_t seed = 0;
  GeneratorRecipe recipe;
  OracleAccuracy oracle;
  LabelMarginals marginals;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<DialogueSample> samples;
};

// Draws per-dialogue latent directions plus a relative-phase angle, emits
// noisy linear images of the latent state per modality, and plants the
// labels: sentiment from the dataset-level terciles of the text/video
// alignment, sarcasm when the relative phase opposes a positive surface
// sentiment, emotion from the (sentiment, video/audio sign) bucket plus a
// band of noise classes.
Dataset generate_synthetic(std::size_t n_dialogues, const Dims& dims, std::size_t context_limit,
                           std::uint64_t seed, const GeneratorRecipe& recipe = {});

LabelMarginals count_labels(const Dataset& ds);

std::string manifest_path(const std::string& data_path);

// JSONL, one dialogue per line, plus a sibling manifest file.
void save_dataset(const Dataset& ds, const std::string& path);

// Validates every line; errors carry the line number. A sibling manifest
// is cross-checked and adopted when present, otherwise the manifest is
// inferred from the data.
Dataset load_dataset(const std::string& path);

// Seeded index shuffle keyed by (seed, epoch); the final partial batch is
// kept.
std::vector<std::vector<std::size_t>> batches(std::size_t sample_count, std::size_t batch_size,
                                              std::uint64_t seed, std::size_t epoch);

// Disjoint split at dialogue granularity. Fractions must be positive and
// sum to at most 1; the last split absorbs the remainder when they sum
// to 1.
std::vector<Dataset> split_by_dialogue(const Dataset& ds, const std::vector<double>& fractions,
                                       std::uint64_t seed);

}  // namespace quiet::data
