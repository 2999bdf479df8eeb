#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clotseg/crops.hpp"
#include "clotseg/fusion.hpp"
#include "clotseg/llstm.hpp"
#include "clotseg/moddrop.hpp"
#include "clotseg/volume.hpp"

namespace clotseg {

struct ModelConfig {
  FusionConfig fusion;
  LLSTMConfig llstm;
  std::int64_t s = 12;
  double threshold = 0.3;
  double loss_w_ce = 0.5;
  double loss_w_dice = 0.5;

  void validate() const {
    fusion.validate();
    llstm.validate();
    if (llstm.d_k != fusion.d_k) {
      throw ValueError("model: llstm d_k " + std::to_string(llstm.d_k) +
                       " must match fusion d_k " + std::to_string(fusion.d_k));
    }
    if (llstm.n1 != fusion.n1) {
      throw ValueError("model: llstm n1 must match fusion n1");
    }
    if (s < 1) throw ValueError("model: s must be >= 1");
    if (threshold <= 0.0 || threshold >= 1.0) {
      throw ValueError("model: threshold must lie in (0,1)");
    }
    if (loss_w_ce < 0.0 || loss_w_dice < 0.0) {
      throw ValueError("model: loss weights must be non-negative");
    }
  }
};

/// Fusion -> upsampling -> double-pass Logic-LSTM -> two-class head.
template <typename S>
struct UpAttLLSTM {
  ModelConfig cfg;
  FusionParams<S> fusion;
  LLSTMParams<S> llstm;

  static UpAttLLSTM init(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    UpAttLLSTM model;
    model.cfg = cfg;
    model.fusion = FusionParams<S>::init(cfg.fusion, rng);
    model.llstm = LLSTMParams<S>::init(cfg.llstm, rng);
    return model;
  }

  std::vector<NamedParam<S>> parameters() const {
    std::vector<NamedParam<S>> out;
    fusion.collect("fusion", out);
    llstm.collect("llstm", out);
    return out;
  }

  std::vector<Tensor<S>> parameter_tensors() const {
    std::vector<Tensor<S>> out;
    for (auto& np : parameters()) out.push_back(np.tensor);
    return out;
  }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const auto& np : parameters()) n += np.tensor.size();
    return n;
  }

  /// Per-slice foreground probabilities for one crop. The retention sample
  /// scales the modalities before they enter the network; all-ones retention
  /// reproduces the plain forward bit-exactly (kept channels are never
  /// rescaled).
  std::vector<Tensor<S>> forward(const Crop& crop, const RetentionSample& retention) const {
    if (retention.r_tilde.size() != 3) {
      throw ShapeError("forward: retention must cover DWI, SWAN, PHASE");
    }
    if (crop.n1 != cfg.fusion.n1 || crop.s < 1) {
      throw ShapeError("forward: crop side " + std::to_string(crop.n1) +
                       " does not match configured n1 " + std::to_string(cfg.fusion.n1));
    }
    const std::int64_t plane = crop.plane();
    std::vector<Tensor<S>> fused;
    fused.reserve(static_cast<std::size_t>(crop.s));
    for (std::int64_t t = 0; t < crop.s; ++t) {
      std::vector<S> dwi(static_cast<std::size_t>(plane));
      std::vector<S> susc(static_cast<std::size_t>(2 * plane));
      const auto r0 = static_cast<S>(retention.r_tilde[0]);
      const auto r1 = static_cast<S>(retention.r_tilde[1]);
      const auto r2 = static_cast<S>(retention.r_tilde[2]);
      for (std::int64_t i = 0; i < plane; ++i) {
        const auto src = static_cast<std::size_t>(t * plane + i);
        dwi[static_cast<std::size_t>(i)] = static_cast<S>(crop.dwi[src]) * r0;
        susc[static_cast<std::size_t>(i)] = static_cast<S>(crop.swan[src]) * r1;
        susc[static_cast<std::size_t>(plane + i)] = static_cast<S>(crop.phase[src]) * r2;
      }
      auto dwi_t = Tensor<S>::from_data({1, crop.n1, crop.n1}, std::move(dwi));
      auto susc_t = Tensor<S>::from_data({2, crop.n1, crop.n1}, std::move(susc));
      fused.push_back(fusion_forward(dwi_t, susc_t, fusion));
    }
    return run_sequence(fused, llstm);
  }

  std::vector<Tensor<S>> forward(const Crop& crop) const {
    RetentionSample ones;
    ones.r = {1, 1, 1};
    ones.r_tilde = {1.0, 1.0, 1.0};
    return forward(crop, ones);
  }
};

/// Running sums behind the combined loss: negated cross-entropy sum, soft
/// intersection, prediction mass, ground-truth voxel count. Accumulating
/// several crops before combining yields a batch-level Dice, which keeps
/// thrombus-free crops from overwhelming the foreground gradient.
template <typename S>
struct LossParts {
  Tensor<S> ce_sum = Tensor<S>::zeros({1});        // sum of log-likelihoods
  Tensor<S> intersection = Tensor<S>::zeros({1});  // sum of p * gt
  Tensor<S> pred_sum = Tensor<S>::zeros({1});      // sum of p
  double gt_sum = 0.0;
  std::int64_t voxels = 0;

  void accumulate(const std::vector<Tensor<S>>& probs, const std::vector<std::uint8_t>& gt) {
    if (probs.empty()) throw ShapeError("loss: no probability slices");
    const std::int64_t plane = probs[0].size();
    if (static_cast<std::int64_t>(gt.size()) !=
        plane * static_cast<std::int64_t>(probs.size())) {
      throw ShapeError("loss: ground truth has " + std::to_string(gt.size()) +
                       " voxels, prediction " + std::to_string(plane * probs.size()));
    }
    constexpr S kLogEps = S(1e-12);
    for (std::size_t t = 0; t < probs.size(); ++t) {
      const auto& p = probs[t];
      std::vector<S> fg(static_cast<std::size_t>(plane)), bg(static_cast<std::size_t>(plane));
      for (std::int64_t i = 0; i < plane; ++i) {
        const bool on =
            gt[t * static_cast<std::size_t>(plane) + static_cast<std::size_t>(i)] != 0;
        fg[static_cast<std::size_t>(i)] = on ? S(1) : S(0);
        bg[static_cast<std::size_t>(i)] = on ? S(0) : S(1);
        gt_sum += on ? 1.0 : 0.0;
      }
      auto fg_t = Tensor<S>::from_data(p.shape(), std::move(fg));
      auto bg_t = Tensor<S>::from_data(p.shape(), std::move(bg));
      auto one_minus_p = add_scalar(scalar_mul(p, S(-1)), S(1));
      auto ce_term = add(mul(fg_t, log(add_scalar(p, kLogEps))),
                         mul(bg_t, log(add_scalar(one_minus_p, kLogEps))));
      ce_sum = add(ce_sum, sum_all(ce_term));
      intersection = add(intersection, sum_all(mul(p, fg_t)));
      pred_sum = add(pred_sum, sum_all(p));
      voxels += plane;
    }
  }

  /// w_ce * (voxel-mean cross-entropy) + w_dice * (1 - soft Dice, smoothing 1).
  Tensor<S> combine(double w_ce, double w_dice) const {
    const S smooth = S(1);
    auto ce = scalar_mul(ce_sum, S(-1) / static_cast<S>(voxels));
    auto dice_num = add_scalar(scalar_mul(intersection, S(2)), smooth);
    auto dice_den = add_scalar(add_scalar(pred_sum, static_cast<S>(gt_sum)), smooth);
    auto dice_loss = add_scalar(scalar_mul(div(dice_num, dice_den), S(-1)), S(1));
    return add(scalar_mul(ce, static_cast<S>(w_ce)),
               scalar_mul(dice_loss, static_cast<S>(w_dice)));
  }
};

/// 0.5 * voxel-wise two-class cross-entropy + 0.5 * (1 - soft Dice with
/// smoothing 1) over one prediction. `probs` are the per-slice foreground
/// maps, `gt` the crop's mask in the same slice-major layout.
template <typename S>
Tensor<S> segmentation_loss(const std::vector<Tensor<S>>& probs,
                            const std::vector<std::uint8_t>& gt, double w_ce = 0.5,
                            double w_dice = 0.5) {
  LossParts<S> parts;
  parts.accumulate(probs, gt);
  return parts.combine(w_ce, w_dice);
}

/// Full-volume inference: slides an s-slice window along z with the given
/// stride (a final window flush with the top is always included), predicts
/// the centre-of-mass in-plane crop, and averages overlapping windows.
/// Voxels outside the crop window keep probability zero.
template <typename S>
ProbVolume predict_volume(const UpAttLLSTM<S>& model, const Volume& vol, std::int64_t s,
                          std::int64_t stride) {
  if (s < 1 || stride < 1) throw ValueError("predict_volume: s and stride must be positive");
  if (vol.nz < s) {
    throw ValueError("predict_volume: volume has " + std::to_string(vol.nz) +
                     " slices, window needs " + std::to_string(s));
  }
  NoGradGuard no_grad;
  const std::int64_t n1 = model.cfg.fusion.n1;
  auto [x0, y0] = crop_origin_xy(vol, n1);
  std::vector<std::int64_t> starts;
  for (std::int64_t z = 0; z + s <= vol.nz; z += stride) starts.push_back(z);
  if (starts.back() + s != vol.nz) starts.push_back(vol.nz - s);

  ProbVolume out(vol.nx, vol.ny, vol.nz);
  std::vector<std::int32_t> hits(static_cast<std::size_t>(vol.voxels()), 0);
  for (const auto z0 : starts) {
    auto crop = extract_crop(vol, x0, y0, z0, n1, s);
    auto probs = model.forward(crop);
    for (std::int64_t t = 0; t < s; ++t)
      for (std::int64_t i = 0; i < n1; ++i)
        for (std::int64_t j = 0; j < n1; ++j) {
          const auto dst = static_cast<std::size_t>(vol.index(x0 + i, y0 + j, z0 + t));
          out.p[dst] += static_cast<float>(probs[static_cast<std::size_t>(t)].at({i, j}));
          ++hits[dst];
        }
  }
  for (std::size_t i = 0; i < out.p.size(); ++i) {
    if (hits[i] > 0) out.p[i] /= static_cast<float>(hits[i]);
  }
  return out;
}

}  // namespace clotseg
