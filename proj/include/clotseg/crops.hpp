#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "clotseg/rng.hpp"
#include "clotseg/volume.hpp"

namespace clotseg {

/// Training window: s consecutive slices of an n1 x n1 in-plane crop, all
/// three modalities plus the thrombus ground truth. Planes are stored
/// slice-major: value (t, i, j) at ((t*n1 + i)*n1 + j), with (i, j) the
/// in-plane (x, y) offsets and t the slice index along z.
struct Crop {
  std::int64_t n1 = 0, s = 0;
  std::vector<float> dwi, swan, phase;
  std::vector<std::uint8_t> gt;
  bool contains_target = false;
  std::int64_t x0 = 0, y0 = 0, z0 = 0;

  std::int64_t plane() const { return n1 * n1; }
  std::int64_t voxels() const { return n1 * n1 * s; }
};

/// Foreground (any nonzero modality voxel) centre of mass, rounded.
std::pair<std::int64_t, std::int64_t> brain_center_xy(const Volume& vol);

/// Copies the window at (x0, y0, z0) out of the volume. Bounds must hold.
Crop extract_crop(const Volume& vol, std::int64_t x0, std::int64_t y0, std::int64_t z0,
                  std::int64_t n1, std::int64_t s);

/// In-plane origin of the centre-of-mass crop, clamped to the volume.
std::pair<std::int64_t, std::int64_t> crop_origin_xy(const Volume& vol, std::int64_t n1);

/// Draws one thrombus-covering crop and one thrombus-free crop. The positive
/// window fully contains the thrombus slice range when it fits in s slices
/// (otherwise a maximal sub-range, with a warning); the negative window has
/// zero thrombus voxels in all its slices.
std::pair<Crop, Crop> sample_crops(const Volume& vol, std::int64_t n1, std::int64_t s, Rng& rng);

/// Training augmentation: each in-plane/through-plane flip and the additive
/// Gaussian noise fires independently with the given probability. Flips act
/// jointly on modalities and ground truth; noise never touches the mask.
Crop augment(Crop crop, Rng& rng, double flip_prob = 0.4, double noise_prob = 0.4,
             double noise_sigma = 0.05);

}  // namespace clotseg
