#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "clotseg/config.hpp"
#include "clotseg/crops.hpp"
#include "clotseg/cstn.hpp"
#include "clotseg/landmarks.hpp"
#include "clotseg/model.hpp"

namespace clotseg {

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename S>
struct AdamState {
  std::vector<std::vector<S>> m, v;
  std::int64_t t = 0;

  void init(const std::vector<NamedParam<S>>& params) {
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.emplace_back(static_cast<std::size_t>(p.tensor.size()), S(0));
      v.emplace_back(static_cast<std::size_t>(p.tensor.size()), S(0));
    }
    t = 0;
  }
};

/// Bias-corrected Adam update in place. A non-finite gradient aborts with
/// the offending parameter named.
template <typename S>
void adam_step(std::vector<NamedParam<S>>& params, AdamState<S>& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
  if (state.m.size() != params.size()) {
    throw TrainError("adam_step: state tracks " + std::to_string(state.m.size()) +
                     " tensors, got " + std::to_string(params.size()));
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    auto values = p.tensor.mutable_data();
    const auto grad = p.tensor.grad();
    auto& m = state.m[pi];
    auto& v = state.v[pi];
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = static_cast<double>(grad[i]);
      if (!std::isfinite(g)) {
        throw TrainError("adam_step: non-finite gradient in '" + p.name + "' at element " +
                         std::to_string(i));
      }
      m[i] = static_cast<S>(beta1 * static_cast<double>(m[i]) + (1.0 - beta1) * g);
      v[i] = static_cast<S>(beta2 * static_cast<double>(v[i]) + (1.0 - beta2) * g * g);
      const double m_hat = static_cast<double>(m[i]) / bc1;
      const double v_hat = static_cast<double>(v[i]) / bc2;
      values[i] = static_cast<S>(static_cast<double>(values[i]) -
                                 lr * m_hat / (std::sqrt(v_hat) + eps));
    }
  }
}

/// Scales all gradients so the global L2 norm stays at or below max_norm;
/// returns the pre-clip norm.
template <typename S>
double clip_gradients(std::vector<NamedParam<S>>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (const S g : p.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const auto scale = static_cast<S>(max_norm / norm);
    for (auto& p : params) {
      auto* node = p.tensor.node().get();
      for (auto& g : node->grad) g *= scale;
    }
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Checkpoints (CSCK: magic, version, config snapshot, named CSTN records)
// ---------------------------------------------------------------------------

template <typename S>
void save_checkpoint(const std::string& path, const ConfigMap& snapshot,
                     const std::vector<NamedParam<S>>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write("CSCK", 4);
  detail::write_pod<std::uint32_t>(os, 1u);
  std::ostringstream cfg;
  for (const auto& [key, value] : snapshot) cfg << key << " = " << value << '\n';
  const std::string cfg_text = cfg.str();
  detail::write_pod<std::uint64_t>(os, cfg_text.size());
  os.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    detail::write_pod<std::uint16_t>(os, static_cast<std::uint16_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    write_cstn(os, t.tensor);
  }
  if (!os) throw IoError("checkpoint write failed: " + path);
}

template <typename S>
struct LoadedCheckpoint {
  ConfigMap snapshot;
  std::vector<NamedParam<S>> tensors;

  const Tensor<S>* find(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return &t.tensor;
    }
    return nullptr;
  }
};

template <typename S>
LoadedCheckpoint<S> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "CSCK") throw IoError("bad checkpoint magic in " + path);
  const auto version = detail::read_pod<std::uint32_t>(is);
  if (version != 1) throw IoError("unsupported checkpoint version " + std::to_string(version));
  const auto cfg_len = detail::read_pod<std::uint64_t>(is);
  if (cfg_len > (1ull << 24)) throw IoError("checkpoint config block overflow");
  std::string cfg_text(cfg_len, '\0');
  is.read(cfg_text.data(), static_cast<std::streamsize>(cfg_len));
  if (!is) throw IoError("checkpoint truncated in config block");
  LoadedCheckpoint<S> out;
  out.snapshot = parse_config_text(cfg_text);
  const auto count = detail::read_pod<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = detail::read_pod<std::uint16_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw IoError("checkpoint truncated in tensor name");
    auto tensor = read_cstn<S>(is);
    out.tensors.push_back({std::move(name), std::move(tensor)});
  }
  return out;
}

/// Copies checkpoint values into the model parameters; any name or shape
/// difference is reported tensor by tensor.
template <typename S>
void load_parameters(UpAttLLSTM<S>& model, const LoadedCheckpoint<S>& ckpt) {
  std::string diff;
  auto params = model.parameters();
  for (auto& p : params) {
    const auto* stored = ckpt.find(p.name);
    if (stored == nullptr) {
      diff += "  missing tensor '" + p.name + "'\n";
      continue;
    }
    if (stored->shape() != p.tensor.shape()) {
      diff += "  shape mismatch '" + p.name + "': model " + shape_str(p.tensor.shape()) +
              " vs checkpoint " + shape_str(stored->shape()) + "\n";
      continue;
    }
    std::copy(stored->data().begin(), stored->data().end(), p.tensor.mutable_data().begin());
  }
  if (!diff.empty()) {
    throw TrainError("checkpoint incompatible with model:\n" + diff);
  }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainSettings {
  double lr = 0.01;
  std::int64_t batch_size = 2;
  std::int64_t crops_per_image = 4;
  std::int64_t epochs = 100;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 25;
  std::string out_dir;
  double grad_clip = 5.0;  // <= 0 disables clipping
  bool augment = true;
  double augment_noise_sigma = 0.05;
  bool standardize = true;
  bool moddrop_enabled = false;
  double moddrop_keep_prob = 0.5;
  double moddrop_noise_sigma = 0.01;
  std::set<std::int64_t> moddrop_droppable = {2};
  std::int64_t extra_epochs_on_resume = 400;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

  static TrainSettings from(const RunConfig& cfg) {
    TrainSettings s;
    s.lr = cfg.get_double("train.lr");
    s.batch_size = cfg.get_int("train.batch_size");
    s.crops_per_image = cfg.get_int("train.crops_per_image");
    s.epochs = cfg.get_int("train.epochs");
    s.seed = static_cast<std::uint64_t>(cfg.get_int("train.seed"));
    s.checkpoint_every = cfg.get_int("train.checkpoint_every");
    s.grad_clip = cfg.get_double("train.grad_clip");
    s.augment = cfg.get_bool("train.augment");
    s.augment_noise_sigma = cfg.get_double("train.augment_noise_sigma");
    s.standardize = cfg.get_bool("train.standardize");
    s.moddrop_enabled = cfg.get_bool("moddrop.enabled");
    s.moddrop_keep_prob = cfg.get_double("moddrop.keep_prob");
    s.moddrop_noise_sigma = cfg.get_double("moddrop.noise_sigma");
    s.moddrop_droppable = modality_indices(cfg.get_string("moddrop.droppable"));
    s.extra_epochs_on_resume = cfg.get_int("train.extra_epochs_on_resume");
    return s;
  }
};

struct TrainResult {
  std::vector<double> epoch_mean_loss;
  std::string final_checkpoint;
  std::map<std::string, LandmarkModel> landmarks;
  std::int64_t epochs_run = 0;
};

/// Epoch callback: receives the finished epoch index and its mean loss;
/// returning true stops training early (the final checkpoint is still
/// written).
using EpochHook = std::function<bool(std::int64_t, double)>;

namespace detail {

template <typename S>
ConfigMap checkpoint_snapshot(const UpAttLLSTM<S>& model, const TrainSettings& cfg,
                              std::int64_t epoch, std::int64_t adam_t, const Rng& rng,
                              const std::map<std::string, LandmarkModel>& landmarks) {
  ConfigMap snap;
  snap["fusion.n1"] = std::to_string(model.cfg.fusion.n1);
  snap["fusion.p1"] = std::to_string(model.cfg.fusion.p1);
  snap["fusion.p2"] = std::to_string(model.cfg.fusion.p2);
  snap["fusion.d_k"] = std::to_string(model.cfg.fusion.d_k);
  snap["fusion.mlp_hidden"] = std::to_string(model.cfg.fusion.mlp_hidden);
  snap["llstm.n_c"] = std::to_string(model.cfg.llstm.n_c);
  snap["llstm.n_l"] = std::to_string(model.cfg.llstm.n_l);
  snap["llstm.m"] = std::to_string(model.cfg.llstm.m);
  snap["llstm.w"] = std::to_string(model.cfg.llstm.w);
  {
    std::ostringstream os;
    os.precision(17);
    os << model.cfg.llstm.forget_bias;
    snap["llstm.forget_bias"] = os.str();
  }
  snap["model.s"] = std::to_string(model.cfg.s);
  {
    std::ostringstream os;
    os.precision(17);
    os << model.cfg.threshold;
    snap["model.threshold"] = os.str();
  }
  {
    std::ostringstream os;
    os.precision(17);
    os << model.cfg.loss_w_ce << ',' << model.cfg.loss_w_dice;
    snap["model.loss_weights"] = os.str();
  }
  snap["state.epoch"] = std::to_string(epoch);
  snap["state.adam_t"] = std::to_string(adam_t);
  snap["state.rng"] = rng.serialize();
  snap["state.seed"] = std::to_string(cfg.seed);
  snap["state.lr"] = std::to_string(cfg.lr);
  for (const auto& [name, model_lm] : landmarks) {
    snap["landmarks." + name] = landmarks_to_string(model_lm);
  }
  return snap;
}

}  // namespace detail

/// Trains in place. Per epoch, every volume contributes crops_per_image
/// crops alternating positive/negative; batches are filled in order; one
/// retention sample per batch scales the modalities; Adam updates after a
/// global-norm clip. Loss rows go to `log_csv` as
/// `epoch,step,loss,g_value,lr`. A NaN loss aborts, keeping the last
/// checkpoint on disk.
template <typename S>
TrainResult train(UpAttLLSTM<S>& model, const std::vector<Volume>& dataset,
                  const TrainSettings& cfg, std::ostream* log_csv = nullptr,
                  const EpochHook& hook = nullptr) {
  if (dataset.empty()) throw ValueError("train: dataset is empty");
  if (cfg.batch_size < 1 || cfg.crops_per_image < 1) {
    throw ValueError("train: batch_size and crops_per_image must be positive");
  }

  TrainResult result;
  std::vector<Volume> volumes;
  if (cfg.standardize) {
    for (const auto& name : {kDwi, kSwan, kPhase}) {
      result.landmarks[name] = fit_landmarks(dataset, name);
    }
    volumes.reserve(dataset.size());
    for (const auto& vol : dataset) volumes.push_back(standardize(vol, result.landmarks));
  } else {
    volumes = dataset;
  }

  DropoutSchedule sched;
  sched.keep_prob = cfg.moddrop_keep_prob;
  sched.noise_sigma = cfg.moddrop_noise_sigma;
  sched.total_epochs = std::max<std::int64_t>(1, cfg.epochs);
  sched.droppable = cfg.moddrop_droppable;
  sched.validate();

  auto params = model.parameters();
  AdamState<S> adam;
  adam.init(params);
  Rng rng(cfg.seed);

  if (log_csv) *log_csv << "epoch,step,loss,g_value,lr\n";
  const bool write_ckpts = !cfg.out_dir.empty();
  if (write_ckpts) std::filesystem::create_directories(cfg.out_dir);
  auto write_checkpoint = [&](const std::string& stem, std::int64_t epoch) {
    auto snapshot = detail::checkpoint_snapshot(model, cfg, epoch, adam.t, rng, result.landmarks);
    std::vector<NamedParam<S>> tensors = params;
    for (std::size_t i = 0; i < params.size(); ++i) {
      tensors.push_back({"adam.m." + params[i].name,
                         Tensor<S>::from_data(params[i].tensor.shape(),
                                              std::vector<S>(adam.m[i].begin(), adam.m[i].end()))});
      tensors.push_back({"adam.v." + params[i].name,
                         Tensor<S>::from_data(params[i].tensor.shape(),
                                              std::vector<S>(adam.v[i].begin(), adam.v[i].end()))});
    }
    const auto path = (std::filesystem::path(cfg.out_dir) / (stem + ".csck")).string();
    save_checkpoint(path, snapshot, tensors);
    return path;
  };

  std::int64_t step = 0;
  for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double g_value = schedule_value(epoch, sched.total_epochs);

    std::vector<Crop> crops;
    for (const auto& vol : volumes) {
      for (std::int64_t c = 0; c < cfg.crops_per_image; c += 2) {
        auto [pos, neg] = sample_crops(vol, model.cfg.fusion.n1, model.cfg.s, rng);
        crops.push_back(std::move(pos));
        if (c + 1 < cfg.crops_per_image) crops.push_back(std::move(neg));
      }
    }
    if (cfg.augment) {
      for (auto& crop : crops) crop = augment(std::move(crop), rng, 0.4, 0.4,
                                              cfg.augment_noise_sigma);
    }

    double epoch_loss = 0.0;
    std::int64_t batches = 0;
    for (std::size_t begin = 0; begin < crops.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(crops.size(), begin + cfg.batch_size);
      RetentionSample retention;
      if (cfg.moddrop_enabled) {
        retention = sample_retention(sched, epoch, rng);
      } else {
        retention.r.assign(3, 1);
        retention.r_tilde.assign(3, 1.0);
      }
      for (auto& p : params) p.tensor.zero_grad();
      // The Dice term spans the whole batch: a thrombus-free crop alone
      // would push every prediction toward zero with far more weight than
      // the positive crop can counter.
      LossParts<S> parts;
      for (std::size_t ci = begin; ci < end; ++ci) {
        parts.accumulate(model.forward(crops[ci], retention), crops[ci].gt);
      }
      auto loss = parts.combine(model.cfg.loss_w_ce, model.cfg.loss_w_dice);
      backward(loss);
      const double batch_loss = static_cast<double>(loss.item());
      detach_graph(loss);
      if (!std::isfinite(batch_loss)) {
        throw TrainError("train: loss diverged at epoch " + std::to_string(epoch) + " step " +
                         std::to_string(step) + "; last checkpoint preserved");
      }
      if (cfg.grad_clip > 0.0) clip_gradients(params, cfg.grad_clip);
      adam_step(params, adam, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
      if (log_csv) {
        *log_csv << epoch << ',' << step << ',' << batch_loss << ',' << g_value << ',' << cfg.lr
                 << '\n';
      }
      epoch_loss += batch_loss;
      ++batches;
      ++step;
    }
    result.epoch_mean_loss.push_back(batches > 0 ? epoch_loss / static_cast<double>(batches)
                                                 : 0.0);
    result.epochs_run = epoch + 1;
    if (write_ckpts && cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
      write_checkpoint("ckpt_epoch_" + std::to_string(epoch + 1), epoch + 1);
    }
    if (hook && hook(epoch, result.epoch_mean_loss.back())) break;
  }
  if (write_ckpts) {
    result.final_checkpoint = write_checkpoint("ckpt_final", result.epochs_run);
  }
  return result;
}

/// Transfer-learning resume: loads the pretrained parameters, resets the
/// epoch clock so the dropout schedule spans the added epochs, and trains
/// with a fresh optimizer.
template <typename S>
TrainResult resume_transfer(UpAttLLSTM<S>& model, const std::string& checkpoint_path,
                            const std::vector<Volume>& dataset, TrainSettings cfg,
                            std::ostream* log_csv = nullptr, const EpochHook& hook = nullptr) {
  auto ckpt = load_checkpoint<S>(checkpoint_path);
  load_parameters(model, ckpt);
  cfg.epochs = cfg.extra_epochs_on_resume;
  if (cfg.epochs == 0) {
    TrainResult result;
    if (!cfg.out_dir.empty()) {
      std::filesystem::create_directories(cfg.out_dir);
      auto params = model.parameters();
      AdamState<S> adam;
      adam.init(params);
      Rng rng(cfg.seed);
      std::map<std::string, LandmarkModel> landmarks;
      for (const auto& [key, value] : ckpt.snapshot) {
        if (key.rfind("landmarks.", 0) == 0) {
          landmarks[key.substr(10)] = landmarks_from_string(value);
        }
      }
      const auto path = (std::filesystem::path(cfg.out_dir) / "ckpt_final.csck").string();
      save_checkpoint(path, detail::checkpoint_snapshot(model, cfg, 0, 0, rng, landmarks),
                      params);
      result.final_checkpoint = path;
      result.landmarks = std::move(landmarks);
    }
    return result;
  }
  return train(model, dataset, cfg, log_csv, hook);
}

}  // namespace clotseg
