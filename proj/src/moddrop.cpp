#include "clotseg/moddrop.hpp"

#include <algorithm>
#include <string>

#include "clotseg/errors.hpp"

namespace clotseg {

void DropoutSchedule::validate() const {
  if (keep_prob < 0.0 || keep_prob > 1.0) {
    throw ValueError("moddrop: keep_prob must be in [0,1], got " + std::to_string(keep_prob));
  }
  if (noise_sigma < 0.0) throw ValueError("moddrop: noise_sigma must be >= 0");
  if (total_epochs < 1) throw ValueError("moddrop: total_epochs must be positive");
  for (auto j : droppable) {
    if (j < 0 || j >= modality_count) {
      throw ValueError("moddrop: droppable index " + std::to_string(j) +
                       " outside modality range [0," + std::to_string(modality_count) + ")");
    }
  }
}

double schedule_value(std::int64_t t, std::int64_t total_epochs) {
  if (t < 0 || t >= total_epochs) {
    throw ValueError("schedule_value: epoch " + std::to_string(t) + " outside [0," +
                     std::to_string(total_epochs) + ")");
  }
  const double td = static_cast<double>(t);
  const double total = static_cast<double>(total_epochs);
  if (td < 0.25 * total) return 0.75;
  if (td < 0.5 * total) return 0.5;
  if (td < 0.75 * total) return 0.25;
  return 0.0;
}

RetentionSample sample_retention(const DropoutSchedule& sched, std::int64_t t, Rng& rng) {
  sched.validate();
  const double g = schedule_value(t, sched.total_epochs);
  RetentionSample out;
  out.r.assign(static_cast<std::size_t>(sched.modality_count), 1);
  out.r_tilde.assign(static_cast<std::size_t>(sched.modality_count), 1.0);
  for (auto j : sched.droppable) {
    const auto idx = static_cast<std::size_t>(j);
    if (rng.bernoulli(sched.keep_prob)) continue;
    out.r[idx] = 0;
    const double noisy = g + rng.normal(0.0, sched.noise_sigma);
    out.r_tilde[idx] = std::clamp(noisy, 0.0, 1.0);
  }
  return out;
}

Volume apply(const Volume& x, const RetentionSample& sample) {
  if (sample.r_tilde.size() != x.modalities.size()) {
    throw ShapeError("moddrop apply: sample covers " + std::to_string(sample.r_tilde.size()) +
                     " modalities, volume has " + std::to_string(x.modalities.size()));
  }
  Volume out = x;
  for (std::size_t j = 0; j < out.modalities.size(); ++j) {
    const auto coeff = static_cast<float>(sample.r_tilde[j]);
    if (coeff == 1.0f) continue;
    for (auto& v : out.modalities[j]) v *= coeff;
  }
  return out;
}

Volume mask_missing(const Volume& x, const std::set<std::int64_t>& missing) {
  Volume out = x;
  for (auto j : missing) {
    if (j < 0 || j >= static_cast<std::int64_t>(out.modalities.size())) {
      throw ValueError("mask_missing: modality index " + std::to_string(j) + " out of range");
    }
    std::fill(out.modalities[static_cast<std::size_t>(j)].begin(),
              out.modalities[static_cast<std::size_t>(j)].end(), 0.f);
    out.presence[static_cast<std::size_t>(j)] = 0;
  }
  return out;
}

}  // namespace clotseg
