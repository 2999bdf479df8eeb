#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "clotseg/moddrop.hpp"
#include "clotseg/model.hpp"
#include "clotseg/phantom.hpp"
#include "clotseg/postprocess.hpp"

namespace clotseg {

using ConfigMap = std::map<std::string, std::string>;

/// Plain UTF-8 `key = value` lines; '#' starts a comment; blank lines
/// ignored.
ConfigMap parse_config_text(const std::string& text);
ConfigMap parse_config_file(const std::string& path);

/// Validated run settings: every key in the schema gets a value (flags win
/// over the file, the file over the defaults). Unknown keys, type errors,
/// and cross-field constraint violations raise ConfigError.
class RunConfig {
 public:
  static RunConfig make(const ConfigMap& file_values, const ConfigMap& flag_values);
  static RunConfig defaults() { return make({}, {}); }

  double get_double(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  const std::string& get_string(const std::string& key) const;

  void set(const std::string& key, const std::string& value);  // validated

  /// Sorted `key = value` lines (the reproducibility record).
  std::string render() const;
  const ConfigMap& values() const { return values_; }

 private:
  ConfigMap values_;
};

ModelConfig model_config_from(const RunConfig& cfg);
PostConfig post_config_from(const RunConfig& cfg);
PhantomSpec phantom_spec_from(const RunConfig& cfg);

/// Dropout schedule for a given epoch budget; droppable names are resolved
/// against DWI/SWAN/PHASE.
DropoutSchedule moddrop_from(const RunConfig& cfg, std::int64_t total_epochs);

std::set<std::int64_t> modality_indices(const std::string& comma_names);

}  // namespace clotseg
