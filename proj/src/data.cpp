#include "quiet/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"

namespace quiet::data {

namespace {

using nlohmann::json;

std::vector<double> random_unit(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> v(dim);
  double sq = 0.0;
  do {
    sq = 0.0;
    for (double& x : v) {
      x = gauss(rng);
      sq += x * x;
    }
  } while (sq < 1e-12);
  const double n = std::sqrt(sq);
  for (double& x : v) x /= n;
  return v;
}

// Unit vector at a prescribed inner product with `anchor`.
std::vector<double> unit_at_alignment(std::mt19937_64& rng, const std::vector<double>& anchor,
                                      double alignment) {
  const std::size_t dim = anchor.size();
  std::vector<double> w = random_unit(rng, dim);
  double proj = 0.0;
  for (std::size_t i = 0; i < dim; ++i) proj += w[i] * anchor[i];
  double sq = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    w[i] -= proj * anchor[i];
    sq += w[i] * w[i];
  }
  if (sq < 1e-12) return unit_at_alignment(rng, anchor, alignment);
  const double n = std::sqrt(sq);
  const double tangent = std::sqrt(std::max(0.0, 1.0 - alignment * alignment));
  std::vector<double> out(dim);
  for (std::size_t i = 0; i < dim; ++i) out[i] = alignment * anchor[i] + tangent * w[i] / n;
  return out;
}

// Columns of a (rows x cols) mixing matrix, orthonormalized as far as the
// row count allows so the latent state stays linearly recoverable.
std::vector<std::vector<double>> mixing_matrix(std::mt19937_64& rng, std::size_t rows,
                                               std::size_t cols) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::vector<double>> columns(cols, std::vector<double>(rows));
  for (std::size_t j = 0; j < cols; ++j) {
    auto& col = columns[j];
    for (double& x : col) x = gauss(rng);
    const std::size_t gs_limit = std::min(j, rows);
    for (std::size_t prev = 0; prev < gs_limit; ++prev) {
      double proj = 0.0;
      for (std::size_t i = 0; i < rows; ++i) proj += col[i] * columns[prev][i];
      for (std::size_t i = 0; i < rows; ++i) col[i] -= proj * columns[prev][i];
    }
    double sq = 0.0;
    for (double x : col) sq += x * x;
    const double n = std::max(std::sqrt(sq), 1e-12);
    for (double& x : col) x /= n;
  }
  return columns;
}

struct LatentState {
  std::vector<double> channels;  // [a; b; c; cos psi; sin psi; s; t]
};

struct ModalityMap {
  std::vector<std::vector<double>> columns;  // latent channel -> feature column
  std::vector<double> gains;                 // per latent channel
  std::size_t dim = 0;
};

std::vector<double> emit_features(std::mt19937_64& rng, const ModalityMap& map,
                                  const LatentState& u, double sigma) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> out(map.dim, 0.0);
  for (std::size_t j = 0; j < u.channels.size(); ++j) {
    const double v = u.channels[j] * map.gains[j];
    if (v == 0.0) continue;
    for (std::size_t i = 0; i < map.dim; ++i) out[i] += v * map.columns[j][i];
  }
  for (double& x : out) x += sigma * gauss(rng);
  return out;
}

std::vector<double> channel_gains(std::size_t k, double ga, double gb, double gc, double gphase,
                                  double gs, double gt) {
  std::vector<double> gains;
  gains.insert(gains.end(), k, ga);
  gains.insert(gains.end(), k, gb);
  gains.insert(gains.end(), k, gc);
  gains.push_back(gphase);
  gains.push_back(gphase);
  gains.push_back(gs);
  gains.push_back(gt);
  return gains;
}

json manifest_to_json(const DatasetManifest& m) {
  json j;
  j["format_version"] = m.format_version;
  j["dims"] = {{"text", m.text_dim}, {"video", m.video_dim}, {"audio", m.audio_dim}};
  j["class_counts"] = {{"sarcasm", m.sarcasm_classes},
                       {"sentiment", m.sentiment_classes},
                       {"emotion", m.emotion_classes}};
  j["sample_count"] = m.sample_count;
  j["context_limit"] = m.context_limit;
  j["synthetic"] = m.synthetic;
  j["seed"] = m.seed;
  j["recipe"] = {{"latent_dim", m.recipe.latent_dim},
                 {"noise_sigma", m.recipe.noise_sigma},
                 {"emotion_noise", m.recipe.emotion_noise},
                 {"prior_flip", m.recipe.prior_flip},
                 {"context_drift_near", m.recipe.context_drift_near},
                 {"context_drift_far", m.recipe.context_drift_far}};
  j["oracle"] = {{"sarcasm", m.oracle.sarcasm},
                 {"sentiment", m.oracle.sentiment},
                 {"emotion", m.oracle.emotion}};
  j["marginals"] = {{"sarcasm", m.marginals.sarcasm},
                    {"sentiment", m.marginals.sentiment},
                    {"emotion", m.marginals.emotion}};
  return j;
}

DatasetManifest manifest_from_json(const json& j) {
  DatasetManifest m;
  m.format_version = j.at("format_version").get<int>();
  m.text_dim = j.at("dims").at("text").get<std::size_t>();
  m.video_dim = j.at("dims").at("video").get<std::size_t>();
  m.audio_dim = j.at("dims").at("audio").get<std::size_t>();
  m.sarcasm_classes = j.at("class_counts").at("sarcasm").get<int>();
  m.sentiment_classes = j.at("class_counts").at("sentiment").get<int>();
  m.emotion_classes = j.at("class_counts").at("emotion").get<int>();
  m.sample_count = j.at("sample_count").get<std::size_t>();
  m.context_limit = j.at("context_limit").get<std::size_t>();
  m.synthetic = j.at("synthetic").get<bool>();
  m.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("recipe")) {
    const json& r = j.at("recipe");
    m.recipe.latent_dim = r.at("latent_dim").get<std::size_t>();
    m.recipe.noise_sigma = r.at("noise_sigma").get<double>();
    m.recipe.emotion_noise = r.at("emotion_noise").get<double>();
    m.recipe.prior_flip = r.at("prior_flip").get<double>();
    m.recipe.context_drift_near = r.at("context_drift_near").get<double>();
    m.recipe.context_drift_far = r.at("context_drift_far").get<double>();
  }
  if (j.contains("oracle")) {
    m.oracle.sarcasm = j.at("oracle").at("sarcasm").get<double>();
    m.oracle.sentiment = j.at("oracle").at("sentiment").get<double>();
    m.oracle.emotion = j.at("oracle").at("emotion").get<double>();
  }
  if (j.contains("marginals")) {
    const json& g = j.at("marginals");
    m.marginals.sarcasm = g.at("sarcasm").get<std::array<std::size_t, 2>>();
    m.marginals.sentiment = g.at("sentiment").get<std::array<std::size_t, 3>>();
    m.marginals.emotion = g.at("emotion").get<std::array<std::size_t, 9>>();
  }
  return m;
}

std::vector<double> finite_vector(const json& arr, std::size_t line, const char* field) {
  if (!arr.is_array() || arr.empty()) {
    throw DataError("line " + std::to_string(line) + ": '" + field +
                    "' must be a non-empty array");
  }
  std::vector<double> out;
  out.reserve(arr.size());
  for (const auto& x : arr) {
    if (!x.is_number()) {
      throw DataError("line " + std::to_string(line) + ": '" + field + "' has a non-numeric entry");
    }
    const double v = x.get<double>();
    if (!std::isfinite(v)) {
      throw DataError("line " + std::to_string(line) + ": '" + field + "' has a non-finite entry");
    }
    out.push_back(v);
  }
  return out;
}

int checked_label(const json& labels, const char* field, int lo, int hi, std::size_t line) {
  if (!labels.contains(field) || !labels.at(field).is_number_integer()) {
    throw DataError("line " + std::to_string(line) + ": missing integer label '" + field + "'");
  }
  const int v = labels.at(field).get<int>();
  if (v < lo || v > hi) {
    throw DataError("line " + std::to_string(line) + ": label '" + field + "' = " +
                    std::to_string(v) + " out of range [" + std::to_string(lo) + ", " +
                    std::to_string(hi) + "]");
  }
  return v;
}

}  // namespace

Dataset generate_synthetic(std::size_t n_dialogues, const Dims& dims, std::size_t context_limit,
                           std::uint64_t seed, const GeneratorRecipe& recipe) {
  if (n_dialogues == 0) throw ContractError("generate_synthetic: n_dialogues must be positive");
  constexpr double pi = std::numbers::pi;
  const std::size_t k = recipe.latent_dim;
  const std::size_t latent_total = 3 * k + 4;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif01(0.0, 1.0);
  std::uniform_real_distribution<double> align_dist(-0.9, 0.9);
  std::uniform_real_distribution<double> phase_dist(-pi, pi);
  std::normal_distribution<double> gauss(0.0, 1.0);

  ModalityMap maps[3];
  const std::size_t feature_dims[3] = {dims.text, dims.video, dims.audio};
  const std::vector<double> gain_table[3] = {
      channel_gains(k, 1.0, 0.3, 0.1, 0.3, 0.7, 0.2),   // text leans on a
      channel_gains(k, 0.3, 1.0, 0.3, 0.8, 0.7, 0.7),   // video leans on b and the phase
      channel_gains(k, 0.1, 0.3, 1.0, 0.8, 0.2, 0.7)};  // audio leans on c and the phase
  for (int m = 0; m < 3; ++m) {
    maps[m].dim = feature_dims[m];
    maps[m].gains = gain_table[m];
    maps[m].columns = mixing_matrix(rng, feature_dims[m], latent_total);
  }

  struct Draw {
    LatentState target;
    double s = 0.0, t = 0.0, cos_psi = 0.0;
    std::size_t contexts = 0;
  };
  std::vector<Draw> draws;
  draws.reserve(n_dialogues);
  std::vector<double> alignments;
  alignments.reserve(n_dialogues);
  for (std::size_t i = 0; i < n_dialogues; ++i) {
    Draw d;
    const std::vector<double> a = random_unit(rng, k);
    d.s = align_dist(rng);
    const std::vector<double> b = unit_at_alignment(rng, a, d.s);
    d.t = align_dist(rng);
    const std::vector<double> c = unit_at_alignment(rng, b, d.t);
    const double psi = phase_dist(rng);
    d.cos_psi = std::cos(psi);

    d.target.channels.reserve(latent_total);
    d.target.channels.insert(d.target.channels.end(), a.begin(), a.end());
    d.target.channels.insert(d.target.channels.end(), b.begin(), b.end());
    d.target.channels.insert(d.target.channels.end(), c.begin(), c.end());
    d.target.channels.push_back(d.cos_psi);
    d.target.channels.push_back(std::sin(psi));
    d.target.channels.push_back(d.s);
    d.target.channels.push_back(d.t);

    d.contexts = context_limit == 0
                     ? 0
                     : static_cast<std::size_t>(rng() % (context_limit + 1));
    draws.push_back(std::move(d));
    alignments.push_back(draws.back().s);
  }

  // Dataset-level terciles of the text/video alignment.
  std::vector<double> sorted = alignments;
  std::sort(sorted.begin(), sorted.end());
  const double lo_threshold = sorted[sorted.size() / 3];
  const double hi_threshold = sorted[(2 * sorted.size()) / 3];
  auto bucket_of = [&](double s) { return s < lo_threshold ? 0 : (s < hi_threshold ? 1 : 2); };

  Dataset ds;
  ds.samples.reserve(n_dialogues);
  std::size_t oracle_emotion_hits = 0;
  for (std::size_t i = 0; i < n_dialogues; ++i) {
    const Draw& d = draws[i];
    DialogueSample sample;
    {
      std::ostringstream id;
      id << "dlg-";
      id.width(6);
      id.fill('0');
      id << i;
      sample.dialogue_id = id.str();
    }

    const int bucket = bucket_of(d.s);
    sample.sentiment = bucket;
    sample.sarcasm = (d.cos_psi < 0.0 && bucket == 2) ? 1 : 0;
    const int structured_emotion = bucket * 2 + (d.t > 0.0 ? 1 : 0);
    if (unif01(rng) < recipe.emotion_noise) {
      sample.emotion = 6 + static_cast<int>(rng() % 3);
    } else {
      sample.emotion = structured_emotion;
    }
    if (sample.emotion == structured_emotion) ++oracle_emotion_hits;

    auto planted_prior = [&]() {
      int prior = bucket - 1;
      if (unif01(rng) < recipe.prior_flip) {
        const int other[2] = {prior == -1 ? 0 : -1, prior == 1 ? 0 : 1};
        prior = other[rng() % 2];
      }
      return prior;
    };

    const std::size_t n_ctx = d.contexts;
    for (std::size_t f = 0; f < n_ctx; ++f) {
      // Oldest context drifts most; later ones approach the target.
      const double progress =
          n_ctx > 1 ? static_cast<double>(f) / static_cast<double>(n_ctx - 1) : 1.0;
      const double drift = recipe.context_drift_far +
                           (recipe.context_drift_near - recipe.context_drift_far) * progress;
      LatentState perturbed = d.target;
      for (double& x : perturbed.channels) x += drift * gauss(rng);
      Utterance u;
      u.text = emit_features(rng, maps[0], perturbed, recipe.noise_sigma);
      u.video = emit_features(rng, maps[1], perturbed, recipe.noise_sigma);
      u.audio = emit_features(rng, maps[2], perturbed, recipe.noise_sigma);
      u.sentiment_prior = planted_prior();
      sample.utterances.push_back(std::move(u));
    }
    Utterance target;
    target.text = emit_features(rng, maps[0], d.target, recipe.noise_sigma);
    target.video = emit_features(rng, maps[1], d.target, recipe.noise_sigma);
    target.audio = emit_features(rng, maps[2], d.target, recipe.noise_sigma);
    target.sentiment_prior = planted_prior();
    sample.utterances.push_back(std::move(target));

    ds.samples.push_back(std::move(sample));
  }

  ds.manifest.text_dim = dims.text;
  ds.manifest.video_dim = dims.video;
  ds.manifest.audio_dim = dims.audio;
  ds.manifest.sample_count = n_dialogues;
  ds.manifest.context_limit = context_limit;
  ds.manifest.synthetic = true;
  ds.manifest.seed = seed;
  ds.manifest.recipe = recipe;
  // The latent-based oracle reproduces the sentiment and sarcasm rules
  // exactly; emotion misses only the noise-class draws.
  ds.manifest.oracle.sarcasm = 1.0;
  ds.manifest.oracle.sentiment = 1.0;
  ds.manifest.oracle.emotion =
      static_cast<double>(oracle_emotion_hits) / static_cast<double>(n_dialogues);
  ds.manifest.marginals = count_labels(ds);
  return ds;
}

LabelMarginals count_labels(const Dataset& ds) {
  LabelMarginals m;
  for (const DialogueSample& s : ds.samples) {
    m.sarcasm[static_cast<std::size_t>(s.sarcasm)]++;
    m.sentiment[static_cast<std::size_t>(s.sentiment)]++;
    m.emotion[static_cast<std::size_t>(s.emotion)]++;
  }
  return m;
}

std::string manifest_path(const std::string& data_path) {
  const std::string suffix = ".jsonl";
  if (data_path.size() > suffix.size() &&
      data_path.compare(data_path.size() - suffix.size(), suffix.size(), suffix) == 0) {
    return data_path.substr(0, data_path.size() - suffix.size()) + ".manifest.json";
  }
  return data_path + ".manifest.json";
}

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("save_dataset: cannot open " + path);
  for (const DialogueSample& s : ds.samples) {
    json line;
    line["dialogue_id"] = s.dialogue_id;
    json utterances = json::array();
    for (const Utterance& u : s.utterances) {
      utterances.push_back({{"text", u.text},
                            {"video", u.video},
                            {"audio", u.audio},
                            {"sentiment_prior", u.sentiment_prior}});
    }
    line["utterances"] = std::move(utterances);
    line["labels"] = {{"sarcasm", s.sarcasm}, {"sentiment", s.sentiment}, {"emotion", s.emotion}};
    out << line.dump() << "\n";
  }
  out.close();
  if (!out) throw IoError("save_dataset: write failed for " + path);

  std::ofstream mout(manifest_path(path));
  if (!mout) throw IoError("save_dataset: cannot open " + manifest_path(path));
  mout << manifest_to_json(ds.manifest).dump(2) << "\n";
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_dataset: cannot open " + path);

  Dataset ds;
  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.empty()) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::exception& e) {
      throw DataError("line " + std::to_string(line_no) + ": malformed JSON (" + e.what() + ")");
    }
    if (!j.is_object() || !j.contains("dialogue_id") || !j.contains("utterances") ||
        !j.contains("labels")) {
      throw DataError("line " + std::to_string(line_no) +
                      ": expected an object with dialogue_id, utterances, labels");
    }
    DialogueSample sample;
    sample.dialogue_id = j.at("dialogue_id").get<std::string>();
    const json& utterances = j.at("utterances");
    if (!utterances.is_array() || utterances.empty()) {
      throw DataError("line " + std::to_string(line_no) + ": utterances must be a non-empty array");
    }
    for (const json& ju : utterances) {
      Utterance u;
      u.text = finite_vector(ju.at("text"), line_no, "text");
      u.video = finite_vector(ju.at("video"), line_no, "video");
      u.audio = finite_vector(ju.at("audio"), line_no, "audio");
      if (!ju.contains("sentiment_prior") || !ju.at("sentiment_prior").is_number_integer()) {
        throw DataError("line " + std::to_string(line_no) + ": missing integer sentiment_prior");
      }
      u.sentiment_prior = ju.at("sentiment_prior").get<int>();
      if (u.sentiment_prior < -1 || u.sentiment_prior > 1) {
        throw DataError("line " + std::to_string(line_no) + ": sentiment_prior " +
                        std::to_string(u.sentiment_prior) + " not in {-1, 0, 1}");
      }
      sample.utterances.push_back(std::move(u));
    }
    const json& labels = j.at("labels");
    sample.sarcasm = checked_label(labels, "sarcasm", 0, 1, line_no);
    sample.sentiment = checked_label(labels, "sentiment", 0, 2, line_no);
    sample.emotion = checked_label(labels, "emotion", 0, 8, line_no);

    if (ds.samples.empty()) {
      ds.manifest.text_dim = sample.target().text.size();
      ds.manifest.video_dim = sample.target().video.size();
      ds.manifest.audio_dim = sample.target().audio.size();
    }
    for (const Utterance& u : sample.utterances) {
      if (u.text.size() != ds.manifest.text_dim || u.video.size() != ds.manifest.video_dim ||
          u.audio.size() != ds.manifest.audio_dim) {
        throw DataError("line " + std::to_string(line_no) +
                        ": feature dimensions differ from the first sample");
      }
    }
    ds.samples.push_back(std::move(sample));
  }
  if (ds.samples.empty()) throw DataError("load_dataset: no samples in " + path);
  ds.manifest.sample_count = ds.samples.size();
  std::size_t max_utterances = 0;
  for (const DialogueSample& s : ds.samples) {
    max_utterances = std::max(max_utterances, s.utterances.size());
  }
  ds.manifest.context_limit = max_utterances - 1;

  std::ifstream min(manifest_path(path));
  if (min) {
    json mj;
    try {
      min >> mj;
    } catch (const json::exception& e) {
      throw DataError("manifest " + manifest_path(path) + ": malformed JSON (" + e.what() + ")");
    }
    DatasetManifest recorded = manifest_from_json(mj);
    if (recorded.text_dim != ds.manifest.text_dim ||
        recorded.video_dim != ds.manifest.video_dim ||
        recorded.audio_dim != ds.manifest.audio_dim) {
      throw DataError("manifest " + manifest_path(path) + ": dims do not match the data file");
    }
    if (recorded.sample_count != ds.manifest.sample_count) {
      throw DataError("manifest " + manifest_path(path) + ": sample_count " +
                      std::to_string(recorded.sample_count) + " but file has " +
                      std::to_string(ds.manifest.sample_count) + " lines");
    }
    if (max_utterances > recorded.context_limit + 1) {
      throw DataError("manifest " + manifest_path(path) + ": a sample exceeds context_limit " +
                      std::to_string(recorded.context_limit));
    }
    ds.manifest = recorded;
  }
  ds.manifest.marginals = count_labels(ds);
  return ds;
}

std::vector<std::vector<std::size_t>> batches(std::size_t sample_count, std::size_t batch_size,
                                              std::uint64_t seed, std::size_t epoch) {
  if (batch_size == 0) throw ContractError("batches: batch_size must be at least 1");
  std::vector<std::size_t> order(sample_count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + epoch + 1);
  for (std::size_t i = sample_count; i > 1; --i) {
    const std::size_t j = rng() % i;
    std::swap(order[i - 1], order[j]);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t pos = 0; pos < sample_count; pos += batch_size) {
    const std::size_t end = std::min(pos + batch_size, sample_count);
    out.emplace_back(order.begin() + pos, order.begin() + end);
  }
  return out;
}

std::vector<Dataset> split_by_dialogue(const Dataset& ds, const std::vector<double>& fractions,
                                       std::uint64_t seed) {
  double total = 0.0;
  for (double f : fractions) {
    if (f <= 0.0) throw ContractError("split_by_dialogue: fractions must be positive");
    total += f;
  }
  if (total > 1.0 + 1e-9) throw ContractError("split_by_dialogue: fractions sum beyond 1");

  std::vector<std::size_t> order(ds.samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed ^ 0xD1B54A32D192ED03ULL);
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = rng() % i;
    std::swap(order[i - 1], order[j]);
  }

  std::vector<Dataset> parts(fractions.size());
  std::size_t begin = 0;
  for (std::size_t p = 0; p < fractions.size(); ++p) {
    std::size_t count = static_cast<std::size_t>(fractions[p] * ds.samples.size() + 0.5);
    if (p + 1 == fractions.size() && total > 1.0 - 1e-9) count = ds.samples.size() - begin;
    count = std::min(count, ds.samples.size() - begin);
    parts[p].manifest = ds.manifest;
    for (std::size_t i = 0; i < count; ++i) parts[p].samples.push_back(ds.samples[order[begin + i]]);
    parts[p].manifest.sample_count = parts[p].samples.size();
    parts[p].manifest.marginals = count_labels(parts[p]);
    begin += count;
  }
  return parts;
}

}  // namespace quiet::data
