#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "clotseg/volume.hpp"

namespace clotseg {

enum class Connectivity { k6 = 6, k26 = 26 };

struct Component {
  std::int32_t id = 0;
  std::int64_t voxel_count = 0;
  std::array<double, 3> center{0, 0, 0};  // arithmetic mean of voxel coordinates
  std::vector<std::int64_t> voxels;       // flat indices
};

/// Labelled foreground partition. Label ids are assigned in first-seen
/// row-major scan order starting at 1; 0 is background. Filtering stages
/// drop components but never renumber the survivors.
struct ComponentSet {
  std::int64_t nx = 0, ny = 0, nz = 0;
  std::vector<std::int32_t> labels;
  std::vector<Component> components;

  MaskVolume to_mask() const;
};

/// Two-pass union-find labelling (26- or 6-connectivity).
ComponentSet connected_components(const MaskVolume& mask,
                                  Connectivity connectivity = Connectivity::k26);

/// Drops components with voxel_count < n_pixels (strict).
ComponentSet filter_small(const ComponentSet& cs, std::int64_t n_pixels);

/// Keeps components with voxel_count >= alpha * max_count; alpha = 1 keeps
/// exactly the maximal-size components (ties all survive).
ComponentSet keep_biggest(const ComponentSet& cs, double alpha);

/// Keeps components whose centre distance to the lesion centre of mass is
/// within n_dist (strict) of the closest component's distance. An empty
/// lesion mask makes this a warned no-op. Coordinate differences are scaled
/// by `spacing` per axis.
ComponentSet lesion_distance_filter(const ComponentSet& cs, const MaskVolume& lesion,
                                    double n_dist,
                                    std::array<float, 3> spacing = {1.f, 1.f, 1.f});

/// Monotone growth to a fixpoint: repeatedly absorbs 26-neighbours of the
/// current foreground whose probability exceeds t.
MaskVolume threshold_growth(const ProbVolume& prob, const MaskVolume& mask, float t);

struct PostConfig {
  std::int64_t n_pixels = 20;
  double n_dist = 20.0;
  double threshold = 0.3;
  double alpha_big = 1.0;
  Connectivity connectivity = Connectivity::k26;

  void validate() const;
};

/// filter_small -> lesion_distance_filter -> keep_biggest -> threshold_growth.
MaskVolume run_postprocess(const ProbVolume& prob, const MaskVolume& initial,
                           const MaskVolume& lesion, const PostConfig& cfg,
                           std::array<float, 3> spacing = {1.f, 1.f, 1.f});

}  // namespace clotseg
