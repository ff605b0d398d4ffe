#pragma once

#include <cstdint>

#include "ldct/geometry.hpp"
#include "ldct/raster.hpp"

namespace ldct {

// Photon statistics of one scan: uniform incident count per ray plus
// zero-mean Gaussian electronic noise (variance in count^2 units).
struct NoiseModel {
  double dose = 1e4;                  // incident photons per ray
  double electronic_variance = 10.0;  // sigma_e^2, count^2
  uint64_t rng_seed = 0;

  void validate() const {
    require(dose > 0.0, "noise model: dose must be positive");
    require(electronic_variance >= 0.0, "noise model: electronic variance must be >= 0");
  }
};

struct RawCounts {
  int views = 0, bins = 0;
  std::vector<double> v;
  int64_t underflow_warnings = 0;  // rays whose expected count was clamped up to 1e-12
};

// Draws per-ray counts ~ Poisson(dose * exp(-[Ax]_i)) + N(0, sigma_e^2).
// Per-ray RNG streams are split off the seed by ray index, so results are
// bit-identical regardless of how the loop is scheduled.
RawCounts simulate_counts(const SystemMatrix& A, const Image<double>& x, const NoiseModel& nm);

// Same sampling given precomputed line integrals (used by the dataset writer
// to amortize the projection).
RawCounts simulate_counts(const Sinogram<double>& line_integrals, const NoiseModel& nm);

// Log transform y_i = ln(dose / max(counts_i, 1)). The one-count floor keeps
// the log finite; values above dose produce negative y.
Sinogram<double> counts_to_sinogram(const RawCounts& counts, const NoiseModel& nm);

}  // namespace ldct
