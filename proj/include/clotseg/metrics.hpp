#pragma once

#include <optional>
#include <string>
#include <vector>

#include "clotseg/postprocess.hpp"
#include "clotseg/volume.hpp"

namespace clotseg {

/// Component-level confusion: counts are numbers of components, sizes are
/// mean voxel counts (0 when the count is 0).
struct ComponentConfusion {
  double fp_count = 0, fp_size = 0;
  double fn_count = 0, fn_size = 0;
};

struct PatientScore {
  double dice = 0;
  double fp_count = 0, fp_size = 0;
  double fn_count = 0, fn_size = 0;
  int detected = -1;  // -1 = not applicable (empty ground truth)
};

/// 2 * |P and G| / (|P| + |G|); both masks empty scores 1.
double dice(const MaskVolume& pred, const MaskVolume& gt);

/// FP components: predicted components with zero ground-truth overlap.
/// FN components: ground-truth components with zero prediction overlap.
ComponentConfusion component_confusion(const MaskVolume& pred, const MaskVolume& gt,
                                       Connectivity connectivity = Connectivity::k26);

/// 1 iff at least one voxel overlaps; undefined for an empty ground truth.
std::optional<int> detection(const MaskVolume& pred, const MaskVolume& gt);

PatientScore score_patient(const MaskVolume& pred, const MaskVolume& gt,
                           Connectivity connectivity = Connectivity::k26);

/// CSV report: one row per patient plus an arithmetic-mean summary row.
/// Detection rate is the mean of the defined detected flags.
std::string report_csv(const std::vector<std::pair<std::string, PatientScore>>& scores);

}  // namespace clotseg
