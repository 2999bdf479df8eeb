#include "clotseg/phantom.hpp"

#include <cmath>
#include <string>

#include "clotseg/errors.hpp"

namespace clotseg {
namespace {

constexpr int kMaxPlacementAttempts = 1000;

struct Sphere {
  double cx, cy, cz, r;

  bool contains(std::int64_t x, std::int64_t y, std::int64_t z) const {
    const double dx = static_cast<double>(x) - cx;
    const double dy = static_cast<double>(y) - cy;
    const double dz = static_cast<double>(z) - cz;
    return dx * dx + dy * dy + dz * dz <= r * r;
  }
};

/// Normalized ellipsoid coordinate; <= 1 means inside.
double ellipsoid_rho(double x, double y, double z, const PhantomSpec& spec) {
  const double ex = (x - static_cast<double>(spec.nx) / 2.0) / spec.brain_radii[0];
  const double ey = (y - static_cast<double>(spec.ny) / 2.0) / spec.brain_radii[1];
  const double ez = (z - static_cast<double>(spec.nz) / 2.0) / spec.brain_radii[2];
  return ex * ex + ey * ey + ez * ez;
}

/// A sphere of radius r fits inside the brain when its centre lies inside
/// the ellipsoid shrunk by r on every semi-axis.
bool sphere_inside_brain(const Sphere& s, const PhantomSpec& spec) {
  const double rx = spec.brain_radii[0] - s.r;
  const double ry = spec.brain_radii[1] - s.r;
  const double rz = spec.brain_radii[2] - s.r;
  if (rx <= 0 || ry <= 0 || rz <= 0) return false;
  const double ex = (s.cx - static_cast<double>(spec.nx) / 2.0) / rx;
  const double ey = (s.cy - static_cast<double>(spec.ny) / 2.0) / ry;
  const double ez = (s.cz - static_cast<double>(spec.nz) / 2.0) / rz;
  return ex * ex + ey * ey + ez * ez <= 1.0;
}

}  // namespace

void PhantomSpec::validate() const {
  if (nx < 4 || ny < 4 || nz < 2) throw ValueError("phantom: volume too small");
  for (double r : brain_radii) {
    if (r <= 0) throw ValueError("phantom: brain radii must be positive");
  }
  if (lesion_r_min <= 0 || lesion_r_max < lesion_r_min) {
    throw ValueError("phantom: bad lesion radius range");
  }
  if (thrombus_r_min <= 0 || thrombus_r_max < thrombus_r_min) {
    throw ValueError("phantom: bad thrombus radius range");
  }
  if (thrombus_r_max >= lesion_r_min) {
    throw ValueError("phantom: thrombus radius must stay below the lesion radius");
  }
  if (max_boundary_dist < 0) throw ValueError("phantom: boundary distance must be >= 0");
  if (noise_sigma < 0) throw ValueError("phantom: noise sigma must be >= 0");
}

Volume generate_phantom(const PhantomSpec& spec, Rng& rng, PhantomGeometry* geometry) {
  spec.validate();
  auto vol = Volume::standard(spec.nx, spec.ny, spec.nz);

  auto sample_center = [&](double margin) {
    return Sphere{rng.uniform(margin, static_cast<double>(spec.nx) - margin),
                  rng.uniform(margin, static_cast<double>(spec.ny) - margin),
                  rng.uniform(margin, static_cast<double>(spec.nz) - margin), 0.0};
  };

  Sphere lesion{0, 0, 0, rng.uniform(spec.lesion_r_min, spec.lesion_r_max)};
  bool placed = false;
  for (int attempt = 0; attempt < kMaxPlacementAttempts && !placed; ++attempt) {
    auto c = sample_center(lesion.r);
    lesion.cx = c.cx;
    lesion.cy = c.cy;
    lesion.cz = c.cz;
    placed = sphere_inside_brain(lesion, spec);
  }
  if (!placed) {
    throw ValueError("phantom: could not place a lesion of radius " + std::to_string(lesion.r) +
                     " after " + std::to_string(kMaxPlacementAttempts) + " attempts");
  }

  Sphere thrombus{0, 0, 0, rng.uniform(spec.thrombus_r_min, spec.thrombus_r_max)};
  placed = false;
  for (int attempt = 0; attempt < kMaxPlacementAttempts && !placed; ++attempt) {
    auto c = sample_center(thrombus.r);
    thrombus.cx = c.cx;
    thrombus.cy = c.cy;
    thrombus.cz = c.cz;
    if (!sphere_inside_brain(thrombus, spec)) continue;
    const double dx = thrombus.cx - lesion.cx;
    const double dy = thrombus.cy - lesion.cy;
    const double dz = thrombus.cz - lesion.cz;
    const double boundary_dist = std::abs(std::sqrt(dx * dx + dy * dy + dz * dz) - lesion.r);
    placed = boundary_dist <= spec.max_boundary_dist;
  }
  if (!placed) {
    throw ValueError("phantom: could not place a thrombus near the lesion boundary after " +
                     std::to_string(kMaxPlacementAttempts) + " attempts");
  }

  if (geometry) {
    geometry->lesion_center = {lesion.cx, lesion.cy, lesion.cz};
    geometry->lesion_radius = lesion.r;
    geometry->thrombus_center = {thrombus.cx, thrombus.cy, thrombus.cz};
    geometry->thrombus_radius = thrombus.r;
  }

  auto& dwi = vol.modality(kDwi);
  auto& swan = vol.modality(kSwan);
  auto& phase = vol.modality(kPhase);
  auto& thrombus_mask = vol.masks[static_cast<std::size_t>(vol.mask_id(kThrombusMask))];
  auto& lesion_mask = vol.masks[static_cast<std::size_t>(vol.mask_id(kLesionMask))];

  const ModalityContrast contrast[3] = {spec.dwi, spec.swan, spec.phase};
  float* channels[3] = {dwi.data(), swan.data(), phase.data()};
  for (std::int64_t x = 0; x < spec.nx; ++x)
    for (std::int64_t y = 0; y < spec.ny; ++y)
      for (std::int64_t z = 0; z < spec.nz; ++z) {
        const auto idx = static_cast<std::size_t>(vol.index(x, y, z));
        const bool in_brain = ellipsoid_rho(static_cast<double>(x), static_cast<double>(y),
                                            static_cast<double>(z), spec) <= 1.0;
        if (!in_brain) continue;  // background stays exactly zero
        const bool in_lesion = lesion.contains(x, y, z);
        const bool in_thrombus = thrombus.contains(x, y, z);
        lesion_mask[idx] = in_lesion ? 1 : 0;
        thrombus_mask[idx] = in_thrombus ? 1 : 0;
        for (int m = 0; m < 3; ++m) {
          double v = contrast[m].base;
          if (in_lesion) v += contrast[m].lesion;
          if (in_thrombus) v += contrast[m].thrombus;
          if (spec.noise_sigma > 0) v += rng.normal(0.0, spec.noise_sigma);
          channels[m][idx] = static_cast<float>(v);
        }
      }
  return vol;
}

}  // namespace clotseg
