#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "clotseg/errors.hpp"

namespace clotseg {

inline constexpr const char* kDwi = "DWI";
inline constexpr const char* kSwan = "SWAN";
inline constexpr const char* kPhase = "PHASE";
inline constexpr const char* kThrombusMask = "thrombus";
inline constexpr const char* kLesionMask = "lesion";

/// Binary mask over a volume grid, row-major with z fastest.
struct MaskVolume {
  std::int64_t nx = 0, ny = 0, nz = 0;
  std::vector<std::uint8_t> v;

  MaskVolume() = default;
  MaskVolume(std::int64_t x, std::int64_t y, std::int64_t z)
      : nx(x), ny(y), nz(z), v(static_cast<std::size_t>(x * y * z), 0) {}

  std::int64_t size() const { return nx * ny * nz; }
  std::int64_t index(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return (x * ny + y) * nz + z;
  }
  std::uint8_t at(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return v[static_cast<std::size_t>(index(x, y, z))];
  }
  void set(std::int64_t x, std::int64_t y, std::int64_t z, std::uint8_t val) {
    v[static_cast<std::size_t>(index(x, y, z))] = val;
  }
  std::int64_t count() const {
    std::int64_t n = 0;
    for (auto b : v) n += b != 0;
    return n;
  }
  bool same_grid(const MaskVolume& o) const { return nx == o.nx && ny == o.ny && nz == o.nz; }
};

/// Per-voxel foreground probability over a volume grid.
struct ProbVolume {
  std::int64_t nx = 0, ny = 0, nz = 0;
  std::vector<float> p;

  ProbVolume() = default;
  ProbVolume(std::int64_t x, std::int64_t y, std::int64_t z)
      : nx(x), ny(y), nz(z), p(static_cast<std::size_t>(x * y * z), 0.f) {}

  std::int64_t size() const { return nx * ny * nz; }
  std::int64_t index(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return (x * ny + y) * nz + z;
  }
  float at(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return p[static_cast<std::size_t>(index(x, y, z))];
  }

  MaskVolume threshold(float t) const {
    MaskVolume m(nx, ny, nz);
    for (std::size_t i = 0; i < p.size(); ++i) m.v[i] = p[i] > t ? 1 : 0;
    return m;
  }
};

/// Multimodal volume: named intensity channels plus ground-truth masks.
/// Channels are stored row-major over (x, y, z) with z fastest. A modality
/// with presence=false is all zeros by contract.
struct Volume {
  std::int64_t nx = 0, ny = 0, nz = 0;
  std::array<float, 3> spacing{1.f, 1.f, 1.f};
  std::vector<std::string> modality_names;
  std::vector<std::vector<float>> modalities;
  std::vector<std::uint8_t> presence;
  std::vector<std::string> mask_names;
  std::vector<std::vector<std::uint8_t>> masks;

  std::int64_t voxels() const { return nx * ny * nz; }
  std::int64_t index(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return (x * ny + y) * nz + z;
  }

  /// Standard empty DWI/SWAN/PHASE volume with thrombus + lesion masks.
  static Volume standard(std::int64_t x, std::int64_t y, std::int64_t z) {
    Volume vol;
    vol.nx = x;
    vol.ny = y;
    vol.nz = z;
    vol.modality_names = {kDwi, kSwan, kPhase};
    vol.modalities.assign(3, std::vector<float>(static_cast<std::size_t>(x * y * z), 0.f));
    vol.presence.assign(3, 1);
    vol.mask_names = {kThrombusMask, kLesionMask};
    vol.masks.assign(2, std::vector<std::uint8_t>(static_cast<std::size_t>(x * y * z), 0));
    return vol;
  }

  std::int64_t modality_id(const std::string& name) const {
    for (std::size_t i = 0; i < modality_names.size(); ++i)
      if (modality_names[i] == name) return static_cast<std::int64_t>(i);
    throw ValueError("volume has no modality named '" + name + "'");
  }

  std::int64_t mask_id(const std::string& name) const {
    for (std::size_t i = 0; i < mask_names.size(); ++i)
      if (mask_names[i] == name) return static_cast<std::int64_t>(i);
    throw ValueError("volume has no mask named '" + name + "'");
  }

  std::vector<float>& modality(const std::string& name) {
    return modalities[static_cast<std::size_t>(modality_id(name))];
  }
  const std::vector<float>& modality(const std::string& name) const {
    return modalities[static_cast<std::size_t>(modality_id(name))];
  }

  MaskVolume mask(const std::string& name) const {
    MaskVolume m(nx, ny, nz);
    m.v = masks[static_cast<std::size_t>(mask_id(name))];
    return m;
  }
};

}  // namespace clotseg
