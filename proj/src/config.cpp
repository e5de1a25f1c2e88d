#include "quiet/config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace quiet::cli {

namespace {

using nlohmann::json;

const char* type_name(const ConfigValue& v) {
  switch (v.index()) {
    case 0: return "bool";
    case 1: return "integer";
    case 2: return "number";
    default: return "string";
  }
}

std::array<bool, 3> parse_subset(const std::string& csv, const char* const names[3],
                                 const std::string& key) {
  std::array<bool, 3> active{false, false, false};
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    bool known = false;
    for (int i = 0; i < 3; ++i) {
      if (item == names[i]) {
        active[i] = true;
        known = true;
        break;
      }
    }
    if (!known) throw ConfigError(key + ": unknown entry '" + item + "'");
  }
  if (!active[0] && !active[1] && !active[2]) {
    throw ConfigError(key + ": at least one entry required");
  }
  return active;
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig cfg;
  auto& v = cfg.values_;
  v["data.text_dim"] = std::int64_t{32};
  v["data.video_dim"] = std::int64_t{24};
  v["data.audio_dim"] = std::int64_t{16};

  v["model.embedding_dim"] = std::int64_t{16};
  v["model.gru_cells"] = std::int64_t{16};
  v["model.measurement_count"] = std::int64_t{64};
  v["model.phase_prior"] = std::int64_t{0};
  v["model.freeze_phases"] = false;
  v["model.append_top_eigvec"] = false;

  v["fusion.cos_phi"] = -0.3;
  v["fusion.alpha_sq"] = 0.5;
  v["fusion.mode"] = std::string("interference");
  v["fusion.trainable_cos_phi"] = false;

  v["train.learning_rate"] = 0.0075;
  v["train.batch_size"] = std::int64_t{64};
  v["train.dropout_rate"] = 0.2;
  v["train.epochs"] = std::int64_t{100};
  v["train.early_stop_patience"] = std::int64_t{10};
  v["train.lr_decay_factor"] = 0.5;
  v["train.lr_decay_patience"] = std::int64_t{5};
  v["train.l2_coefficient"] = 1e-4;
  v["train.seed"] = std::int64_t{7};
  v["train.weight_sar"] = 1.0 / 3.0;
  v["train.weight_sen"] = 1.0 / 3.0;
  v["train.weight_emo"] = 1.0 / 3.0;
  v["train.context_limit"] = std::int64_t{3};
  v["train.dev_selection"] = std::string("loss");

  v["tasks"] = std::string("sar,sen,emo");
  v["modalities"] = std::string("text,video,audio");

  v["ablation.no_context"] = false;
  v["ablation.trad_head"] = false;

  v["paths.train"] = std::string();
  v["paths.dev"] = std::string();
  v["paths.test"] = std::string();
  v["paths.checkpoint"] = std::string();
  v["paths.out"] = std::string("out");

  v["generate.n"] = std::int64_t{1000};
  v["generate.split"] = std::string();
  v["generate.latent_dim"] = std::int64_t{4};
  v["generate.noise_sigma"] = 0.1;
  v["generate.emotion_noise"] = 0.15;
  v["generate.prior_flip"] = 0.1;

  v["analyze.pair_count"] = std::int64_t{800};

  v["sweep.grid"] = false;
  v["sweep.context"] = true;

  v["gradcheck.use_micro"] = true;
  v["gradcheck.sabotage"] = false;
  return cfg;
}

const ConfigValue& RunConfig::at(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown configuration key '" + key + "'");
  return it->second;
}

void RunConfig::set(const std::string& key, ConfigValue v) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown configuration key '" + key + "'");
  // Integral values are welcome where a number is expected.
  if (it->second.index() == 2 && v.index() == 1) {
    v = static_cast<double>(std::get<std::int64_t>(v));
  }
  if (it->second.index() != v.index()) {
    throw ConfigError("key '" + key + "' expects a " + type_name(it->second) + " value");
  }
  it->second = std::move(v);
}

void RunConfig::apply_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path + ": malformed JSON (" + e.what() + ")");
  }
  if (!j.is_object()) throw ConfigError("config file " + path + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (value.is_boolean()) {
      set(key, value.get<bool>());
    } else if (value.is_number_integer() || value.is_number_unsigned()) {
      set(key, value.get<std::int64_t>());
    } else if (value.is_number_float()) {
      set(key, value.get<double>());
    } else if (value.is_string()) {
      set(key, value.get<std::string>());
    } else {
      throw ConfigError("config key '" + key + "' has an unsupported JSON type");
    }
  }
}

void RunConfig::apply_override(const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  const ConfigValue& current = at(key);
  try {
    switch (current.index()) {
      case 0:
        if (raw == "true" || raw == "1") {
          set(key, true);
        } else if (raw == "false" || raw == "0") {
          set(key, false);
        } else {
          throw ConfigError("");
        }
        break;
      case 1:
        set(key, static_cast<std::int64_t>(std::stoll(raw)));
        break;
      case 2:
        set(key, std::stod(raw));
        break;
      default:
        set(key, raw);
        break;
    }
  } catch (const ConfigError&) {
    throw ConfigError("override '" + assignment + "' is not a valid " + type_name(current));
  } catch (const std::exception&) {
    throw ConfigError("override '" + assignment + "' is not a valid " + type_name(current));
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  const ConfigValue& v = at(key);
  if (v.index() != 0) throw ConfigError("key '" + key + "' is not a bool");
  return std::get<bool>(v);
}

std::int64_t RunConfig::get_int(const std::string& key) const {
  const ConfigValue& v = at(key);
  if (v.index() != 1) throw ConfigError("key '" + key + "' is not an integer");
  return std::get<std::int64_t>(v);
}

double RunConfig::get_double(const std::string& key) const {
  const ConfigValue& v = at(key);
  if (v.index() == 1) return static_cast<double>(std::get<std::int64_t>(v));
  if (v.index() != 2) throw ConfigError("key '" + key + "' is not a number");
  return std::get<double>(v);
}

const std::string& RunConfig::get_string(const std::string& key) const {
  const ConfigValue& v = at(key);
  if (v.index() != 3) throw ConfigError("key '" + key + "' is not a string");
  return std::get<std::string>(v);
}

std::string RunConfig::resolved_json() const {
  json j;
  for (const auto& [key, value] : values_) {
    switch (value.index()) {
      case 0: j[key] = std::get<bool>(value); break;
      case 1: j[key] = std::get<std::int64_t>(value); break;
      case 2: j[key] = std::get<double>(value); break;
      default: j[key] = std::get<std::string>(value); break;
    }
  }
  return j.dump(2) + "\n";
}

void RunConfig::write_resolved(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path);
  out << resolved_json();
  if (!out) throw IoError("write failed for " + path);
}

model::Config RunConfig::model_config() const {
  model::Config c;
  c.text_dim = static_cast<std::size_t>(get_int("data.text_dim"));
  c.video_dim = static_cast<std::size_t>(get_int("data.video_dim"));
  c.audio_dim = static_cast<std::size_t>(get_int("data.audio_dim"));
  c.embedding_dim = static_cast<std::size_t>(get_int("model.embedding_dim"));
  c.gru_cells = static_cast<std::size_t>(get_int("model.gru_cells"));
  c.measurement_count = static_cast<std::size_t>(get_int("model.measurement_count"));

  static const char* const kTaskNames[3] = {"sar", "sen", "emo"};
  static const char* const kModalityNames[3] = {"text", "video", "audio"};
  c.task_active = parse_subset(get_string("tasks"), kTaskNames, "tasks");
  c.modality_active = parse_subset(get_string("modalities"), kModalityNames, "modalities");

  c.fusion.cos_phi = get_double("fusion.cos_phi");
  c.fusion.alpha_sq = get_double("fusion.alpha_sq");
  const std::string& mode = get_string("fusion.mode");
  if (mode == "interference") {
    c.fusion.mode = layers::FusionConfig::Mode::interference;
  } else if (mode == "concat") {
    c.fusion.mode = layers::FusionConfig::Mode::concat;
  } else {
    throw ConfigError("fusion.mode must be 'interference' or 'concat', got '" + mode + "'");
  }
  c.fusion.append_top_eigvec = get_bool("model.append_top_eigvec");
  c.trainable_cos_phi = get_bool("fusion.trainable_cos_phi");

  c.phase_prior = static_cast<int>(get_int("model.phase_prior"));
  c.freeze_phases = get_bool("model.freeze_phases");

  c.learning_rate = get_double("train.learning_rate");
  c.batch_size = static_cast<std::size_t>(get_int("train.batch_size"));
  c.dropout_rate = get_double("train.dropout_rate");
  c.epochs = static_cast<std::size_t>(get_int("train.epochs"));
  c.early_stop_patience = static_cast<std::size_t>(get_int("train.early_stop_patience"));
  c.lr_decay_factor = get_double("train.lr_decay_factor");
  c.lr_decay_patience = static_cast<std::size_t>(get_int("train.lr_decay_patience"));
  c.l2_coefficient = get_double("train.l2_coefficient");
  c.seed = static_cast<std::uint64_t>(get_int("train.seed"));
  c.task_weights = {get_double("train.weight_sar"), get_double("train.weight_sen"),
                    get_double("train.weight_emo")};
  c.context_limit = static_cast<std::size_t>(get_int("train.context_limit"));
  const std::string& selection = get_string("train.dev_selection");
  if (selection == "loss") {
    c.dev_select_f1 = false;
  } else if (selection == "f1") {
    c.dev_select_f1 = true;
  } else {
    throw ConfigError("train.dev_selection must be 'loss' or 'f1', got '" + selection + "'");
  }

  c.no_context = get_bool("ablation.no_context");
  c.trad_head = get_bool("ablation.trad_head");
  c.validate();
  return c;
}

data::Dims RunConfig::data_dims() const {
  data::Dims d;
  d.text = static_cast<std::size_t>(get_int("data.text_dim"));
  d.video = static_cast<std::size_t>(get_int("data.video_dim"));
  d.audio = static_cast<std::size_t>(get_int("data.audio_dim"));
  return d;
}

data::GeneratorRecipe RunConfig::generator_recipe() const {
  data::GeneratorRecipe r;
  r.latent_dim = static_cast<std::size_t>(get_int("generate.latent_dim"));
  r.noise_sigma = get_double("generate.noise_sigma");
  r.emotion_noise = get_double("generate.emotion_noise");
  r.prior_flip = get_double("generate.prior_flip");
  return r;
}

std::string RunConfig::out_path(const std::string& file) const {
  return (std::filesystem::path(get_string("paths.out")) / file).string();
}

}  // namespace quiet::cli
