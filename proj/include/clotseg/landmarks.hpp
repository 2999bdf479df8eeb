#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "clotseg/volume.hpp"

namespace clotseg {

/// Decile-landmark intensity model: min, d10..d90, max of the foreground
/// (nonzero) voxels, averaged over the training volumes.
struct LandmarkModel {
  std::array<double, 11> landmarks{};
};

/// Landmarks of one volume's modality (foreground deciles, linear
/// interpolation between order statistics). Throws on a degenerate
/// (constant or empty) channel.
LandmarkModel volume_landmarks(const Volume& vol, const std::string& modality);

/// Averages the per-volume landmarks across the training set.
LandmarkModel fit_landmarks(const std::vector<Volume>& volumes, const std::string& modality);

/// Piecewise-linear map of the volume's own deciles onto the reference,
/// clamped beyond min/max. Background (zero) voxels are untouched; absent
/// modalities (presence = false) are skipped.
Volume standardize(const Volume& vol, const std::map<std::string, LandmarkModel>& models);

std::string landmarks_to_string(const LandmarkModel& model);
LandmarkModel landmarks_from_string(const std::string& text);

}  // namespace clotseg
