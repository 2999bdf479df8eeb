#include "clotseg/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "clotseg/config.hpp"
#include "clotseg/gradcheck_suite.hpp"
#include "clotseg/metrics.hpp"
#include "clotseg/mvol.hpp"
#include "clotseg/train.hpp"

namespace clotseg {
namespace {

namespace fs = std::filesystem;

/// Training and inference run in 32-bit; gradient checking stays in 64-bit.
using Scalar = float;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;

  ConfigMap flag_map() const {
    ConfigMap out;
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("--set expects key=value, got '" + kv + "'");
      }
      out[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    return out;
  }
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "key = value config file");
  cmd->add_option("--set", args.sets, "override a config key (key=value, repeatable)");
}

RunConfig resolve_config(const CommonArgs& args, ConfigMap extra_flags = {}) {
  ConfigMap file_values;
  if (!args.config_path.empty()) file_values = parse_config_file(args.config_path);
  ConfigMap flags = args.flag_map();
  for (auto& [k, v] : extra_flags) flags[k] = v;
  // CLOTSEG_SEED is the fallback when no explicit seed is given anywhere.
  if (!file_values.count("train.seed") && !flags.count("train.seed")) {
    if (const char* env = std::getenv("CLOTSEG_SEED")) flags["train.seed"] = env;
  }
  return RunConfig::make(file_values, flags);
}

void print_run_header(const RunConfig& cfg) {
  std::cout << "# resolved configuration\n" << cfg.render();
  std::cout << "# seed = " << cfg.get_int("train.seed") << "\n";
}

void require_exists(const std::string& path, const char* what) {
  if (!fs::exists(path)) {
    throw ValueError(std::string(what) + " does not exist: " + path);
  }
}

std::vector<std::string> list_mvol(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".mvol") files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  return files;
}

int run_synth(const RunConfig& cfg, const std::string& out_dir) {
  print_run_header(cfg);
  const auto spec = phantom_spec_from(cfg);
  const auto count = cfg.get_int("phantom.count");
  const auto seed = static_cast<std::uint64_t>(cfg.get_int("train.seed"));
  fs::create_directories(out_dir);
  for (std::int64_t i = 0; i < count; ++i) {
    auto rng = Rng::stream(seed, static_cast<std::uint64_t>(i));
    auto vol = generate_phantom(spec, rng);
    char name[32];
    std::snprintf(name, sizeof(name), "vol_%03lld.mvol", static_cast<long long>(i));
    write_mvol(vol, (fs::path(out_dir) / name).string());
  }
  std::cout << "wrote " << count << " volumes to " << out_dir << "\n";
  return 0;
}

int run_train(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir,
              const std::string& resume_path) {
  print_run_header(cfg);
  require_exists(data_dir, "data directory");
  if (!resume_path.empty()) require_exists(resume_path, "checkpoint");
  const auto files = list_mvol(data_dir);
  if (files.empty()) throw ValueError("no .mvol volumes in " + data_dir);
  std::vector<Volume> dataset;
  dataset.reserve(files.size());
  for (const auto& f : files) dataset.push_back(read_mvol(f));

  auto model_cfg = model_config_from(cfg);
  Rng init_rng(static_cast<std::uint64_t>(cfg.get_int("train.seed")));
  auto model = UpAttLLSTM<Scalar>::init(model_cfg, init_rng);
  std::cout << "model parameters: " << model.parameter_count() << "\n";

  auto settings = TrainSettings::from(cfg);
  settings.out_dir = out_dir;
  fs::create_directories(out_dir);
  std::ofstream log((fs::path(out_dir) / "train_log.csv").string());

  TrainResult result;
  if (resume_path.empty()) {
    result = train(model, dataset, settings, &log);
  } else {
    result = resume_transfer(model, resume_path, dataset, settings, &log);
  }
  if (!result.epoch_mean_loss.empty()) {
    std::cout << "final epoch mean loss: " << result.epoch_mean_loss.back() << "\n";
  }
  std::cout << "checkpoint: " << result.final_checkpoint << "\n";
  return 0;
}

int run_eval(const RunConfig& cfg, const std::string& pred_dir, const std::string& gt_dir,
             const std::string& out_path) {
  print_run_header(cfg);
  require_exists(pred_dir, "prediction directory");
  require_exists(gt_dir, "ground-truth directory");
  const auto post = post_config_from(cfg);
  std::vector<std::pair<std::string, PatientScore>> scores;
  for (const auto& pred_file : list_mvol(pred_dir)) {
    const auto id = fs::path(pred_file).stem().string();
    const auto gt_file = (fs::path(gt_dir) / (id + ".mvol")).string();
    if (!fs::exists(gt_file)) {
      throw IoError("no ground-truth volume for patient '" + id + "' in " + gt_dir);
    }
    auto pred_vol = read_mvol(pred_file);
    auto gt_vol = read_mvol(gt_file);
    MaskVolume pred(pred_vol.nx, pred_vol.ny, pred_vol.nz);
    std::size_t pred_idx = 0;
    for (std::size_t i = 0; i < pred_vol.mask_names.size(); ++i) {
      if (pred_vol.mask_names[i] == "pred") pred_idx = i;
    }
    if (pred_vol.masks.empty()) throw IoError("prediction volume has no mask: " + pred_file);
    pred.v = pred_vol.masks[pred_idx];
    scores.emplace_back(id, score_patient(pred, gt_vol.mask(kThrombusMask), post.connectivity));
  }
  const auto csv = report_csv(scores);
  std::cout << csv;
  if (!out_path.empty()) {
    std::ofstream os(out_path);
    os << csv;
  }
  return 0;
}

int run_infer(const CommonArgs& common, const std::string& ckpt_path, const std::string& in_path,
              const std::string& out_path) {
  require_exists(ckpt_path, "checkpoint");
  require_exists(in_path, "input volume");
  auto ckpt = load_checkpoint<Scalar>(ckpt_path);
  ConfigMap model_keys;
  for (const auto& [key, value] : ckpt.snapshot) {
    if (key.rfind("state.", 0) == 0 || key.rfind("landmarks.", 0) == 0) continue;
    model_keys[key] = value;
  }
  ConfigMap flags = common.flag_map();
  ConfigMap file_values;
  if (!common.config_path.empty()) file_values = parse_config_file(common.config_path);
  for (auto& [k, v] : file_values) {
    if (!model_keys.count(k)) model_keys[k] = v;
  }
  auto cfg = RunConfig::make(model_keys, flags);
  print_run_header(cfg);

  auto model_cfg = model_config_from(cfg);
  Rng rng(0);
  auto model = UpAttLLSTM<Scalar>::init(model_cfg, rng);
  load_parameters(model, ckpt);

  std::map<std::string, LandmarkModel> landmarks;
  for (const auto& [key, value] : ckpt.snapshot) {
    if (key.rfind("landmarks.", 0) == 0) landmarks[key.substr(10)] = landmarks_from_string(value);
  }
  auto vol = read_mvol(in_path);
  if (!landmarks.empty()) vol = standardize(vol, landmarks);

  std::int64_t stride = cfg.get_int("infer.stride");
  if (stride < 1) stride = std::max<std::int64_t>(1, model_cfg.s / 2);
  auto prob = predict_volume(model, vol, model_cfg.s, stride);
  auto pred = prob.threshold(static_cast<float>(model_cfg.threshold));

  Volume out;
  out.nx = vol.nx;
  out.ny = vol.ny;
  out.nz = vol.nz;
  out.spacing = vol.spacing;
  out.modality_names = {"prob"};
  out.modalities = {prob.p};
  out.presence = {1};
  out.mask_names = {"pred"};
  out.masks = {pred.v};
  write_mvol(out, out_path);
  std::cout << "wrote probabilities and mask to " << out_path << " (foreground voxels: "
            << pred.count() << ")\n";
  return 0;
}

int run_postprocess(const RunConfig& cfg, const std::string& prob_path,
                    const std::string& lesion_path, const std::string& out_path) {
  print_run_header(cfg);
  require_exists(prob_path, "probability volume");
  require_exists(lesion_path, "lesion volume");
  const auto post = post_config_from(cfg);

  auto prob_vol = read_mvol(prob_path);
  ProbVolume prob(prob_vol.nx, prob_vol.ny, prob_vol.nz);
  std::size_t prob_idx = 0;
  for (std::size_t i = 0; i < prob_vol.modality_names.size(); ++i) {
    if (prob_vol.modality_names[i] == "prob") prob_idx = i;
  }
  if (prob_vol.modalities.empty()) throw IoError("no probability channel in " + prob_path);
  prob.p = prob_vol.modalities[prob_idx];

  MaskVolume initial(prob.nx, prob.ny, prob.nz);
  bool have_mask = false;
  for (std::size_t i = 0; i < prob_vol.mask_names.size(); ++i) {
    if (prob_vol.mask_names[i] == "pred") {
      initial.v = prob_vol.masks[i];
      have_mask = true;
    }
  }
  if (!have_mask) initial = prob.threshold(static_cast<float>(post.threshold));

  auto lesion_vol = read_mvol(lesion_path);
  MaskVolume lesion(lesion_vol.nx, lesion_vol.ny, lesion_vol.nz);
  std::size_t lesion_idx = 0;
  for (std::size_t i = 0; i < lesion_vol.mask_names.size(); ++i) {
    if (lesion_vol.mask_names[i] == kLesionMask) lesion_idx = i;
  }
  if (lesion_vol.masks.empty()) throw IoError("no lesion mask in " + lesion_path);
  lesion.v = lesion_vol.masks[lesion_idx];

  auto refined = run_postprocess(prob, initial, lesion, post, prob_vol.spacing);

  Volume out;
  out.nx = prob.nx;
  out.ny = prob.ny;
  out.nz = prob.nz;
  out.spacing = prob_vol.spacing;
  out.modality_names = {"prob"};
  out.modalities = {prob.p};
  out.presence = {1};
  out.mask_names = {"pred"};
  out.masks = {refined.v};
  write_mvol(out, out_path);
  std::cout << "wrote refined mask to " << out_path << " (foreground voxels: "
            << refined.count() << ")\n";
  return 0;
}

int run_gradcheck(const RunConfig& cfg) {
  print_run_header(cfg);
  auto report = run_gradcheck_suite(1e-4, &std::cout);
  std::cout << (report.pass ? "gradcheck passed" : "gradcheck FAILED")
            << " (worst max rel err " << report.worst << ")\n";
  return report.pass ? 0 : 2;
}

}  // namespace

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"clotseg: multimodal thrombus segmentation pipeline"};
  app.require_subcommand(1);

  CommonArgs synth_args, train_args, eval_args, infer_args, post_args, grad_args;
  std::string synth_out = "phantoms";
  std::int64_t synth_count = -1;
  std::int64_t synth_seed = std::numeric_limits<std::int64_t>::min();
  std::string synth_spec;
  auto* synth = app.add_subcommand("synth", "generate synthetic phantom volumes");
  add_common(synth, synth_args);
  synth->add_option("--count", synth_count, "number of volumes");
  synth->add_option("--seed", synth_seed, "base seed");
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--spec", synth_spec, "phantom spec config file");

  std::string train_data, train_out = "run", train_resume;
  std::int64_t train_seed = std::numeric_limits<std::int64_t>::min();
  auto* train_cmd = app.add_subcommand("train", "train the segmentation model");
  add_common(train_cmd, train_args);
  train_cmd->add_option("--data", train_data, "directory of training .mvol volumes")
      ->required();
  train_cmd->add_option("--out", train_out, "output directory (checkpoints, log)");
  train_cmd->add_option("--resume", train_resume, "pretrained checkpoint to transfer from");
  train_cmd->add_option("--seed", train_seed, "training seed");

  std::string eval_pred, eval_gt, eval_out;
  auto* eval_cmd = app.add_subcommand("eval", "score predictions against ground truth");
  add_common(eval_cmd, eval_args);
  eval_cmd->add_option("--pred", eval_pred, "directory of prediction .mvol files")->required();
  eval_cmd->add_option("--gt", eval_gt, "directory of ground-truth .mvol files")->required();
  eval_cmd->add_option("--out", eval_out, "also write the CSV report here");

  std::string infer_ckpt, infer_in, infer_out = "pred.mvol";
  auto* infer_cmd = app.add_subcommand("infer", "predict a probability volume");
  add_common(infer_cmd, infer_args);
  infer_cmd->add_option("--ckpt", infer_ckpt, "trained checkpoint")->required();
  infer_cmd->add_option("--in", infer_in, "input .mvol volume")->required();
  infer_cmd->add_option("--out", infer_out, "output .mvol (prob channel + pred mask)");

  std::string post_prob, post_lesion, post_out = "mask.mvol";
  double post_npixels = -1, post_ndist = -1, post_threshold = -1, post_big = -1;
  auto* post_cmd = app.add_subcommand("postprocess", "refine a binary prediction");
  add_common(post_cmd, post_args);
  post_cmd->add_option("--prob", post_prob, "prediction .mvol (prob channel + pred mask)")
      ->required();
  post_cmd->add_option("--lesion", post_lesion, "volume carrying the lesion mask")->required();
  post_cmd->add_option("--npixels", post_npixels, "minimum component size");
  post_cmd->add_option("--ndist", post_ndist, "lesion distance tolerance (voxels)");
  post_cmd->add_option("--threshold", post_threshold, "growth threshold");
  post_cmd->add_option("--big", post_big, "biggest-object ratio (1.0 keeps only the biggest)");
  post_cmd->add_option("--out", post_out, "output .mvol");

  auto* grad_cmd = app.add_subcommand("gradcheck", "run the gradient-check suite");
  add_common(grad_cmd, grad_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (synth->parsed()) {
      if (!synth_spec.empty() && synth_args.config_path.empty()) {
        synth_args.config_path = synth_spec;
      }
      ConfigMap extra;
      if (synth_count >= 0) extra["phantom.count"] = std::to_string(synth_count);
      if (synth_seed != std::numeric_limits<std::int64_t>::min()) {
        extra["train.seed"] = std::to_string(synth_seed);
      }
      return run_synth(resolve_config(synth_args, extra), synth_out);
    }
    if (train_cmd->parsed()) {
      ConfigMap extra;
      if (train_seed != std::numeric_limits<std::int64_t>::min()) {
        extra["train.seed"] = std::to_string(train_seed);
      }
      return run_train(resolve_config(train_args, extra), train_data, train_out, train_resume);
    }
    if (eval_cmd->parsed()) {
      return run_eval(resolve_config(eval_args), eval_pred, eval_gt, eval_out);
    }
    if (infer_cmd->parsed()) {
      return run_infer(infer_args, infer_ckpt, infer_in, infer_out);
    }
    if (post_cmd->parsed()) {
      ConfigMap extra;
      if (post_npixels >= 0) extra["post.n_pixels"] = std::to_string(
          static_cast<std::int64_t>(post_npixels));
      if (post_ndist >= 0) extra["post.n_dist"] = std::to_string(post_ndist);
      if (post_threshold >= 0) extra["post.threshold"] = std::to_string(post_threshold);
      if (post_big >= 0) extra["post.alpha_big"] = std::to_string(post_big);
      return run_postprocess(resolve_config(post_args, extra), post_prob, post_lesion, post_out);
    }
    if (grad_cmd->parsed()) {
      return run_gradcheck(resolve_config(grad_args));
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ValueError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace clotseg
