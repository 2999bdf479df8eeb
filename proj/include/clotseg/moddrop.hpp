#pragma once

#include <cstdint>
#include <set>
#include <vector>

#include "clotseg/rng.hpp"
#include "clotseg/volume.hpp"

namespace clotseg {

/// Gradual modality dropout settings. `keep_prob` is the KEEP probability:
/// retention r ~ Bernoulli(keep_prob), so a modality is dropped with rate
/// 1 - keep_prob. Only indices in `droppable` are ever touched.
struct DropoutSchedule {
  double keep_prob = 0.5;
  std::int64_t total_epochs = 1;
  double noise_sigma = 0.01;
  std::int64_t modality_count = 3;
  std::set<std::int64_t> droppable;

  void validate() const;
};

/// One draw of retention coefficients: r is the Bernoulli outcome, r_tilde
/// the coefficient actually multiplied into the input. r_j = 1 implies
/// r_tilde_j = 1 exactly; kept modalities are never contrast-scaled.
struct RetentionSample {
  std::vector<std::uint8_t> r;
  std::vector<double> r_tilde;
};

/// Piecewise decay 0.75 / 0.5 / 0.25 / 0 over training quarters, with strict
/// "<" at every boundary.
double schedule_value(std::int64_t t, std::int64_t total_epochs);

/// Draws retention for epoch t. Dropped modalities receive g(t) plus
/// Gaussian noise (sigma = noise_sigma), sampled once per modality per call
/// and clamped to [0, 1].
RetentionSample sample_retention(const DropoutSchedule& sched, std::int64_t t, Rng& rng);

/// Scales each modality voxel-wise by its retention coefficient.
Volume apply(const Volume& x, const RetentionSample& sample);

/// Inference-time simulation of absent modalities: zeroes the listed
/// channels and clears their presence flags.
Volume mask_missing(const Volume& x, const std::set<std::int64_t>& missing);

}  // namespace clotseg
