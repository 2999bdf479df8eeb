#include "clotseg/crops.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <string>

#include "clotseg/errors.hpp"

namespace clotseg {

std::pair<std::int64_t, std::int64_t> brain_center_xy(const Volume& vol) {
  double sx = 0, sy = 0;
  std::int64_t count = 0;
  for (std::int64_t x = 0; x < vol.nx; ++x)
    for (std::int64_t y = 0; y < vol.ny; ++y)
      for (std::int64_t z = 0; z < vol.nz; ++z) {
        const auto idx = static_cast<std::size_t>(vol.index(x, y, z));
        bool fg = false;
        for (const auto& mod : vol.modalities) fg = fg || mod[idx] != 0.f;
        if (fg) {
          sx += static_cast<double>(x);
          sy += static_cast<double>(y);
          ++count;
        }
      }
  if (count == 0) {
    return {vol.nx / 2, vol.ny / 2};
  }
  return {static_cast<std::int64_t>(std::llround(sx / static_cast<double>(count))),
          static_cast<std::int64_t>(std::llround(sy / static_cast<double>(count)))};
}

std::pair<std::int64_t, std::int64_t> crop_origin_xy(const Volume& vol, std::int64_t n1) {
  if (vol.nx < n1 || vol.ny < n1) {
    throw ValueError("crop: volume in-plane size " + std::to_string(vol.nx) + "x" +
                     std::to_string(vol.ny) + " smaller than crop side " + std::to_string(n1));
  }
  auto [cx, cy] = brain_center_xy(vol);
  const std::int64_t x0 = std::clamp<std::int64_t>(cx - n1 / 2, 0, vol.nx - n1);
  const std::int64_t y0 = std::clamp<std::int64_t>(cy - n1 / 2, 0, vol.ny - n1);
  return {x0, y0};
}

Crop extract_crop(const Volume& vol, std::int64_t x0, std::int64_t y0, std::int64_t z0,
                  std::int64_t n1, std::int64_t s) {
  if (x0 < 0 || y0 < 0 || z0 < 0 || x0 + n1 > vol.nx || y0 + n1 > vol.ny || z0 + s > vol.nz) {
    throw ValueError("extract_crop: window out of bounds");
  }
  Crop crop;
  crop.n1 = n1;
  crop.s = s;
  crop.x0 = x0;
  crop.y0 = y0;
  crop.z0 = z0;
  const auto total = static_cast<std::size_t>(crop.voxels());
  crop.dwi.resize(total);
  crop.swan.resize(total);
  crop.phase.resize(total);
  crop.gt.resize(total);
  const auto& dwi = vol.modality(kDwi);
  const auto& swan = vol.modality(kSwan);
  const auto& phase = vol.modality(kPhase);
  const auto& gt = vol.masks[static_cast<std::size_t>(vol.mask_id(kThrombusMask))];
  for (std::int64_t t = 0; t < s; ++t)
    for (std::int64_t i = 0; i < n1; ++i)
      for (std::int64_t j = 0; j < n1; ++j) {
        const auto src = static_cast<std::size_t>(vol.index(x0 + i, y0 + j, z0 + t));
        const auto dst = static_cast<std::size_t>((t * n1 + i) * n1 + j);
        crop.dwi[dst] = dwi[src];
        crop.swan[dst] = swan[src];
        crop.phase[dst] = phase[src];
        crop.gt[dst] = gt[src];
      }
  for (auto b : crop.gt) {
    if (b) {
      crop.contains_target = true;
      break;
    }
  }
  return crop;
}

std::pair<Crop, Crop> sample_crops(const Volume& vol, std::int64_t n1, std::int64_t s,
                                   Rng& rng) {
  if (vol.nz < s) {
    throw ValueError("sample_crops: volume has " + std::to_string(vol.nz) +
                     " slices, need at least " + std::to_string(s));
  }
  auto [x0, y0] = crop_origin_xy(vol, n1);

  // Thrombus slice range and per-slice voxel counts.
  const auto& gt = vol.masks[static_cast<std::size_t>(vol.mask_id(kThrombusMask))];
  std::vector<std::int64_t> per_slice(static_cast<std::size_t>(vol.nz), 0);
  for (std::int64_t x = 0; x < vol.nx; ++x)
    for (std::int64_t y = 0; y < vol.ny; ++y)
      for (std::int64_t z = 0; z < vol.nz; ++z)
        per_slice[static_cast<std::size_t>(z)] += gt[static_cast<std::size_t>(vol.index(x, y, z))];
  std::int64_t zlo = -1, zhi = -1;
  for (std::int64_t z = 0; z < vol.nz; ++z) {
    if (per_slice[static_cast<std::size_t>(z)] > 0) {
      if (zlo < 0) zlo = z;
      zhi = z;
    }
  }
  if (zlo < 0) throw ValueError("sample_crops: volume has no thrombus voxels");

  std::int64_t pos_lo, pos_hi;
  if (zhi - zlo + 1 <= s) {
    pos_lo = std::max<std::int64_t>(0, zhi - s + 1);
    pos_hi = std::min(zlo, vol.nz - s);
  } else {
    std::cerr << "[clotseg] warning: thrombus spans " << (zhi - zlo + 1)
              << " slices, window of " << s << " covers a maximal sub-range\n";
    pos_lo = zlo;
    pos_hi = std::min(zhi - s + 1, vol.nz - s);
  }
  const std::int64_t pos_z = rng.uniform_int(pos_lo, pos_hi);

  std::vector<std::int64_t> negative_starts;
  for (std::int64_t z = 0; z + s <= vol.nz; ++z) {
    std::int64_t voxels = 0;
    for (std::int64_t t = 0; t < s; ++t) voxels += per_slice[static_cast<std::size_t>(z + t)];
    if (voxels == 0) negative_starts.push_back(z);
  }
  if (negative_starts.empty()) {
    throw ValueError("sample_crops: no thrombus-free window of " + std::to_string(s) +
                     " slices exists");
  }
  const std::int64_t neg_z = negative_starts[static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(negative_starts.size()) - 1))];

  auto positive = extract_crop(vol, x0, y0, pos_z, n1, s);
  auto negative = extract_crop(vol, x0, y0, neg_z, n1, s);
  return {std::move(positive), std::move(negative)};
}

Crop augment(Crop crop, Rng& rng, double flip_prob, double noise_prob, double noise_sigma) {
  const bool flip_x = rng.bernoulli(flip_prob);
  const bool flip_y = rng.bernoulli(flip_prob);
  const bool flip_z = rng.bernoulli(flip_prob);
  const bool add_noise = rng.bernoulli(noise_prob);
  const std::int64_t n1 = crop.n1, s = crop.s;

  auto flip = [&](auto& data) {
    auto copy = data;
    for (std::int64_t t = 0; t < s; ++t)
      for (std::int64_t i = 0; i < n1; ++i)
        for (std::int64_t j = 0; j < n1; ++j) {
          const std::int64_t st = flip_z ? s - 1 - t : t;
          const std::int64_t si = flip_x ? n1 - 1 - i : i;
          const std::int64_t sj = flip_y ? n1 - 1 - j : j;
          data[static_cast<std::size_t>((t * n1 + i) * n1 + j)] =
              copy[static_cast<std::size_t>((st * n1 + si) * n1 + sj)];
        }
  };
  if (flip_x || flip_y || flip_z) {
    flip(crop.dwi);
    flip(crop.swan);
    flip(crop.phase);
    flip(crop.gt);
  }
  if (add_noise) {
    for (auto* mod : {&crop.dwi, &crop.swan, &crop.phase})
      for (auto& v : *mod) v += static_cast<float>(rng.normal(0.0, noise_sigma));
  }
  return crop;
}

}  // namespace clotseg
