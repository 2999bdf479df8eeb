#pragma once

#include <array>
#include <cstdint>

#include "clotseg/rng.hpp"
#include "clotseg/volume.hpp"

namespace clotseg {

/// Per-modality intensity model: brain tissue base level plus additive
/// offsets inside the lesion and thrombus blobs.
struct ModalityContrast {
  double base = 1.0;
  double lesion = 0.0;
  double thrombus = 0.0;
};

/// Synthetic multimodal head: an ellipsoidal brain on a zero background, one
/// lesion sphere visible in DWI, one smaller thrombus sphere visible in the
/// susceptibility channels, placed near the lesion boundary. Defaults make
/// PHASE carry most of the thrombus signal, mirroring the acquisition
/// asymmetry the dropout training is meant to survive.
struct PhantomSpec {
  std::uint64_t seed = 0;
  std::int64_t nx = 48, ny = 48, nz = 16;
  std::array<double, 3> brain_radii{20.0, 20.0, 6.5};
  double lesion_r_min = 5.0, lesion_r_max = 7.0;
  double thrombus_r_min = 2.0, thrombus_r_max = 3.0;
  double max_boundary_dist = 4.0;
  double noise_sigma = 0.1;
  ModalityContrast dwi{1.0, 1.5, 0.0};
  ModalityContrast swan{1.0, 0.0, 0.6};
  ModalityContrast phase{1.0, 0.0, 2.0};

  void validate() const;
};

/// Sampled blob geometry, exposed for verification.
struct PhantomGeometry {
  std::array<double, 3> lesion_center{};
  double lesion_radius = 0;
  std::array<double, 3> thrombus_center{};
  double thrombus_radius = 0;
};

/// Deterministic generation from the injected stream; rejection sampling for
/// blob placement fails with an error after 1000 attempts.
Volume generate_phantom(const PhantomSpec& spec, Rng& rng, PhantomGeometry* geometry = nullptr);

}  // namespace clotseg
