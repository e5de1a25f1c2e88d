// Resolved run configuration: defaults, then config file, then
// command-line overrides, with overrides winning. Keys are flat dotted
// names; the resolved set round-trips through resolved-config.json.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>

#include "quiet/data.hpp"
#include "quiet/model.hpp"

namespace quiet::cli {

using ConfigValue = std::variant<bool, std::int64_t, double, std::string>;

class RunConfig {
 public:
  static RunConfig defaults();

  // JSON object of flat dotted keys; every key must be known.
  void apply_file(const std::string& path);
  // "key=value" with the value parsed by the key's declared type.
  void apply_override(const std::string& assignment);
  void set(const std::string& key, ConfigValue v);

  bool get_bool(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  const std::string& get_string(const std::string& key) const;
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string resolved_json() const;
  void write_resolved(const std::string& path) const;

  model::Config model_config() const;
  data::Dims data_dims() const;
  data::GeneratorRecipe generator_recipe() const;

  // paths.out joined with a file name.
  std::string out_path(const std::string& file) const;

 private:
  const ConfigValue& at(const std::string& key) const;
  std::map<std::string, ConfigValue> values_;
};

}  // namespace quiet::cli
