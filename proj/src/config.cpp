#include "clotseg/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "clotseg/errors.hpp"

namespace clotseg {
namespace {

enum class KeyType { kInt, kDouble, kBool, kString };

struct SchemaEntry {
  KeyType type;
  const char* default_value;
};

/// Every recognized key with its type and default. Defaults follow the
/// published training configuration (batch 2, 4 crops, p1=32, p2=4, d_k=32,
/// T=0.3, N_pixels=20, N_dist=20, s=12, lr=0.01).
const std::map<std::string, SchemaEntry>& schema() {
  static const std::map<std::string, SchemaEntry> s = {
      {"fusion.n1", {KeyType::kInt, "256"}},
      {"fusion.p1", {KeyType::kInt, "32"}},
      {"fusion.p2", {KeyType::kInt, "4"}},
      {"fusion.d_k", {KeyType::kInt, "32"}},
      {"fusion.mlp_hidden", {KeyType::kInt, "32"}},
      {"llstm.n_c", {KeyType::kInt, "4"}},
      {"llstm.n_l", {KeyType::kInt, "9"}},
      {"llstm.m", {KeyType::kInt, "3"}},
      {"llstm.w", {KeyType::kInt, "3"}},
      {"llstm.forget_bias", {KeyType::kDouble, "1.0"}},
      {"moddrop.enabled", {KeyType::kBool, "false"}},
      {"moddrop.keep_prob", {KeyType::kDouble, "0.5"}},
      {"moddrop.noise_sigma", {KeyType::kDouble, "0.01"}},
      {"moddrop.droppable", {KeyType::kString, "PHASE"}},
      {"model.s", {KeyType::kInt, "12"}},
      {"model.threshold", {KeyType::kDouble, "0.3"}},
      {"model.loss_weights", {KeyType::kString, "0.5,0.5"}},
      {"train.lr", {KeyType::kDouble, "0.01"}},
      {"train.batch_size", {KeyType::kInt, "2"}},
      {"train.crops_per_image", {KeyType::kInt, "4"}},
      {"train.epochs", {KeyType::kInt, "100"}},
      {"train.seed", {KeyType::kInt, "0"}},
      {"train.checkpoint_every", {KeyType::kInt, "25"}},
      {"train.extra_epochs_on_resume", {KeyType::kInt, "400"}},
      {"train.grad_clip", {KeyType::kDouble, "5.0"}},
      {"train.augment", {KeyType::kBool, "true"}},
      {"train.augment_noise_sigma", {KeyType::kDouble, "0.05"}},
      {"train.standardize", {KeyType::kBool, "true"}},
      {"infer.stride", {KeyType::kInt, "-1"}},  // -1: use s/2
      {"post.n_pixels", {KeyType::kInt, "20"}},
      {"post.n_dist", {KeyType::kDouble, "20"}},
      {"post.threshold", {KeyType::kDouble, "0.3"}},
      {"post.alpha_big", {KeyType::kDouble, "1.0"}},
      {"post.connectivity", {KeyType::kInt, "26"}},
      {"phantom.count", {KeyType::kInt, "10"}},
      {"phantom.nx", {KeyType::kInt, "48"}},
      {"phantom.ny", {KeyType::kInt, "48"}},
      {"phantom.nz", {KeyType::kInt, "16"}},
      {"phantom.brain_rx", {KeyType::kDouble, "20"}},
      {"phantom.brain_ry", {KeyType::kDouble, "20"}},
      {"phantom.brain_rz", {KeyType::kDouble, "6.5"}},
      {"phantom.lesion_r_min", {KeyType::kDouble, "5"}},
      {"phantom.lesion_r_max", {KeyType::kDouble, "7"}},
      {"phantom.thrombus_r_min", {KeyType::kDouble, "2"}},
      {"phantom.thrombus_r_max", {KeyType::kDouble, "3"}},
      {"phantom.max_boundary_dist", {KeyType::kDouble, "4"}},
      {"phantom.noise_sigma", {KeyType::kDouble, "0.1"}},
      {"phantom.dwi_base", {KeyType::kDouble, "1.0"}},
      {"phantom.dwi_lesion", {KeyType::kDouble, "1.5"}},
      {"phantom.dwi_thrombus", {KeyType::kDouble, "0.0"}},
      {"phantom.swan_base", {KeyType::kDouble, "1.0"}},
      {"phantom.swan_lesion", {KeyType::kDouble, "0.0"}},
      {"phantom.swan_thrombus", {KeyType::kDouble, "0.6"}},
      {"phantom.phase_base", {KeyType::kDouble, "1.0"}},
      {"phantom.phase_lesion", {KeyType::kDouble, "0.0"}},
      {"phantom.phase_thrombus", {KeyType::kDouble, "2.0"}},
  };
  return s;
}

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  auto e = s.find_last_not_of(" \t\r\n");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

void check_type(const std::string& key, const std::string& value) {
  const auto it = schema().find(key);
  if (it == schema().end()) {
    throw ConfigError("unknown config key '" + key + "'");
  }
  switch (it->second.type) {
    case KeyType::kInt: {
      try {
        std::size_t used = 0;
        (void)std::stoll(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
      } catch (const std::exception&) {
        throw ConfigError("key '" + key + "' expects an integer, got '" + value + "'");
      }
      break;
    }
    case KeyType::kDouble: {
      try {
        std::size_t used = 0;
        (void)std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
      } catch (const std::exception&) {
        throw ConfigError("key '" + key + "' expects a number, got '" + value + "'");
      }
      break;
    }
    case KeyType::kBool:
      if (value != "true" && value != "false" && value != "0" && value != "1") {
        throw ConfigError("key '" + key + "' expects true/false, got '" + value + "'");
      }
      break;
    case KeyType::kString:
      break;
  }
}

}  // namespace

ConfigMap parse_config_text(const std::string& text) {
  ConfigMap out;
  std::istringstream is(text);
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected `key = value`, got '" + line + "'");
    }
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

ConfigMap parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file: " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str());
}

RunConfig RunConfig::make(const ConfigMap& file_values, const ConfigMap& flag_values) {
  RunConfig cfg;
  for (const auto& [key, entry] : schema()) cfg.values_[key] = entry.default_value;
  for (const auto& [key, value] : file_values) {
    check_type(key, value);
    cfg.values_[key] = value;
  }
  for (const auto& [key, value] : flag_values) {  // flags win
    check_type(key, value);
    cfg.values_[key] = value;
  }
  // Cross-field constraints surface now, not at run start.
  try {
    (void)model_config_from(cfg);
    (void)post_config_from(cfg);
    (void)phantom_spec_from(cfg);
    (void)moddrop_from(cfg, std::max<std::int64_t>(1, cfg.get_int("train.epochs")));
    if (cfg.get_int("train.batch_size") < 1 || cfg.get_int("train.crops_per_image") < 1 ||
        cfg.get_int("train.epochs") < 0 || cfg.get_double("train.lr") <= 0.0) {
      throw ValueError("train: batch_size/crops_per_image must be >= 1, epochs >= 0, lr > 0");
    }
  } catch (const ValueError& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

double RunConfig::get_double(const std::string& key) const {
  return std::stod(values_.at(key));
}

std::int64_t RunConfig::get_int(const std::string& key) const {
  return std::stoll(values_.at(key));
}

bool RunConfig::get_bool(const std::string& key) const {
  const auto& v = values_.at(key);
  return v == "true" || v == "1";
}

const std::string& RunConfig::get_string(const std::string& key) const {
  return values_.at(key);
}

void RunConfig::set(const std::string& key, const std::string& value) {
  check_type(key, value);
  values_[key] = value;
}

std::string RunConfig::render() const {
  std::ostringstream os;
  for (const auto& [key, value] : values_) os << key << " = " << value << '\n';
  return os.str();
}

ModelConfig model_config_from(const RunConfig& cfg) {
  ModelConfig mc;
  mc.fusion.n1 = cfg.get_int("fusion.n1");
  mc.fusion.p1 = cfg.get_int("fusion.p1");
  mc.fusion.p2 = cfg.get_int("fusion.p2");
  mc.fusion.d_k = cfg.get_int("fusion.d_k");
  mc.fusion.mlp_hidden = cfg.get_int("fusion.mlp_hidden");
  mc.llstm.n_c = cfg.get_int("llstm.n_c");
  mc.llstm.n_l = cfg.get_int("llstm.n_l");
  mc.llstm.m = cfg.get_int("llstm.m");
  mc.llstm.w = cfg.get_int("llstm.w");
  mc.llstm.forget_bias = cfg.get_double("llstm.forget_bias");
  mc.llstm.n1 = mc.fusion.n1;
  mc.llstm.d_k = mc.fusion.d_k;
  mc.s = cfg.get_int("model.s");
  mc.threshold = cfg.get_double("model.threshold");
  const auto& weights = cfg.get_string("model.loss_weights");
  const auto comma = weights.find(',');
  if (comma == std::string::npos) {
    throw ValueError("model.loss_weights expects 'ce,dice', got '" + weights + "'");
  }
  mc.loss_w_ce = std::stod(weights.substr(0, comma));
  mc.loss_w_dice = std::stod(weights.substr(comma + 1));
  mc.validate();
  return mc;
}

PostConfig post_config_from(const RunConfig& cfg) {
  PostConfig pc;
  pc.n_pixels = cfg.get_int("post.n_pixels");
  pc.n_dist = cfg.get_double("post.n_dist");
  pc.threshold = cfg.get_double("post.threshold");
  pc.alpha_big = cfg.get_double("post.alpha_big");
  const auto conn = cfg.get_int("post.connectivity");
  if (conn != 6 && conn != 26) {
    throw ValueError("post.connectivity must be 6 or 26, got " + std::to_string(conn));
  }
  pc.connectivity = conn == 26 ? Connectivity::k26 : Connectivity::k6;
  pc.validate();
  return pc;
}

PhantomSpec phantom_spec_from(const RunConfig& cfg) {
  PhantomSpec spec;
  spec.nx = cfg.get_int("phantom.nx");
  spec.ny = cfg.get_int("phantom.ny");
  spec.nz = cfg.get_int("phantom.nz");
  spec.brain_radii = {cfg.get_double("phantom.brain_rx"), cfg.get_double("phantom.brain_ry"),
                      cfg.get_double("phantom.brain_rz")};
  spec.lesion_r_min = cfg.get_double("phantom.lesion_r_min");
  spec.lesion_r_max = cfg.get_double("phantom.lesion_r_max");
  spec.thrombus_r_min = cfg.get_double("phantom.thrombus_r_min");
  spec.thrombus_r_max = cfg.get_double("phantom.thrombus_r_max");
  spec.max_boundary_dist = cfg.get_double("phantom.max_boundary_dist");
  spec.noise_sigma = cfg.get_double("phantom.noise_sigma");
  spec.dwi = {cfg.get_double("phantom.dwi_base"), cfg.get_double("phantom.dwi_lesion"),
              cfg.get_double("phantom.dwi_thrombus")};
  spec.swan = {cfg.get_double("phantom.swan_base"), cfg.get_double("phantom.swan_lesion"),
               cfg.get_double("phantom.swan_thrombus")};
  spec.phase = {cfg.get_double("phantom.phase_base"), cfg.get_double("phantom.phase_lesion"),
                cfg.get_double("phantom.phase_thrombus")};
  spec.validate();
  return spec;
}

std::set<std::int64_t> modality_indices(const std::string& comma_names) {
  std::set<std::int64_t> out;
  std::istringstream is(comma_names);
  std::string name;
  while (std::getline(is, name, ',')) {
    name = trim(name);
    if (name.empty()) continue;
    if (name == kDwi) {
      out.insert(0);
    } else if (name == kSwan) {
      out.insert(1);
    } else if (name == kPhase) {
      out.insert(2);
    } else {
      throw ValueError("unknown modality name '" + name + "' (expected DWI, SWAN, PHASE)");
    }
  }
  return out;
}

DropoutSchedule moddrop_from(const RunConfig& cfg, std::int64_t total_epochs) {
  DropoutSchedule sched;
  sched.keep_prob = cfg.get_double("moddrop.keep_prob");
  sched.noise_sigma = cfg.get_double("moddrop.noise_sigma");
  sched.total_epochs = total_epochs;
  sched.modality_count = 3;
  sched.droppable = modality_indices(cfg.get_string("moddrop.droppable"));
  sched.validate();
  return sched;
}

}  // namespace clotseg
