#include "clotseg/metrics.hpp"

#include <sstream>

#include "clotseg/errors.hpp"

namespace clotseg {

double dice(const MaskVolume& pred, const MaskVolume& gt) {
  if (!pred.same_grid(gt)) throw ShapeError("dice: mask grids disagree");
  std::int64_t inter = 0, p = 0, g = 0;
  for (std::size_t i = 0; i < pred.v.size(); ++i) {
    const bool a = pred.v[i] != 0, b = gt.v[i] != 0;
    inter += a && b;
    p += a;
    g += b;
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(p + g);
}

ComponentConfusion component_confusion(const MaskVolume& pred, const MaskVolume& gt,
                                       Connectivity connectivity) {
  if (!pred.same_grid(gt)) throw ShapeError("component_confusion: mask grids disagree");
  ComponentConfusion out;
  std::int64_t fp_voxels = 0, fn_voxels = 0;
  const auto pred_cs = connected_components(pred, connectivity);
  for (const auto& comp : pred_cs.components) {
    bool overlaps = false;
    for (auto v : comp.voxels) overlaps = overlaps || gt.v[static_cast<std::size_t>(v)] != 0;
    if (!overlaps) {
      out.fp_count += 1;
      fp_voxels += comp.voxel_count;
    }
  }
  const auto gt_cs = connected_components(gt, connectivity);
  for (const auto& comp : gt_cs.components) {
    bool overlaps = false;
    for (auto v : comp.voxels) overlaps = overlaps || pred.v[static_cast<std::size_t>(v)] != 0;
    if (!overlaps) {
      out.fn_count += 1;
      fn_voxels += comp.voxel_count;
    }
  }
  if (out.fp_count > 0) out.fp_size = static_cast<double>(fp_voxels) / out.fp_count;
  if (out.fn_count > 0) out.fn_size = static_cast<double>(fn_voxels) / out.fn_count;
  return out;
}

std::optional<int> detection(const MaskVolume& pred, const MaskVolume& gt) {
  if (!pred.same_grid(gt)) throw ShapeError("detection: mask grids disagree");
  if (gt.count() == 0) return std::nullopt;
  for (std::size_t i = 0; i < pred.v.size(); ++i) {
    if (pred.v[i] && gt.v[i]) return 1;
  }
  return 0;
}

PatientScore score_patient(const MaskVolume& pred, const MaskVolume& gt,
                           Connectivity connectivity) {
  PatientScore s;
  s.dice = dice(pred, gt);
  const auto conf = component_confusion(pred, gt, connectivity);
  s.fp_count = conf.fp_count;
  s.fp_size = conf.fp_size;
  s.fn_count = conf.fn_count;
  s.fn_size = conf.fn_size;
  const auto det = detection(pred, gt);
  s.detected = det.has_value() ? *det : -1;
  return s;
}

std::string report_csv(const std::vector<std::pair<std::string, PatientScore>>& scores) {
  std::ostringstream os;
  os << "patient_id,dice,fp_count,fp_size,fn_count,fn_size,detected\n";
  PatientScore mean;
  std::int64_t det_valid = 0, det_sum = 0;
  for (const auto& [id, s] : scores) {
    os << id << ',' << s.dice << ',' << s.fp_count << ',' << s.fp_size << ',' << s.fn_count
       << ',' << s.fn_size << ',';
    if (s.detected < 0) {
      os << "na";
    } else {
      os << s.detected;
      det_sum += s.detected;
      ++det_valid;
    }
    os << '\n';
    mean.dice += s.dice;
    mean.fp_count += s.fp_count;
    mean.fp_size += s.fp_size;
    mean.fn_count += s.fn_count;
    mean.fn_size += s.fn_size;
  }
  const auto n = static_cast<double>(scores.size());
  if (!scores.empty()) {
    os << "mean," << mean.dice / n << ',' << mean.fp_count / n << ',' << mean.fp_size / n << ','
       << mean.fn_count / n << ',' << mean.fn_size / n << ',';
    if (det_valid > 0) {
      os << static_cast<double>(det_sum) / static_cast<double>(det_valid);
    } else {
      os << "na";
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace clotseg
