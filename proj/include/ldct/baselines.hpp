#pragma once

#include <vector>

#include "ldct/geometry.hpp"
#include "ldct/inversion.hpp"
#include "ldct/raster.hpp"

namespace ldct {

enum class Apodization { RamLak, Hann };

// Fan-beam filtered back-projection for the equispaced flat detector: cosine
// pre-weighting, frequency-domain ramp filtering (zero-padded to the next
// power of two >= 2*n_bins), distance-weighted backprojection with linear
// interpolation in the detector coordinate.
Image<double> fbp_reconstruct(const FanBeamGeometry& geom, const Sinogram<double>& y,
                              Apodization apo = Apodization::RamLak);

inline double soft_threshold(double v, double k) {
  if (v > k) return v - k;
  if (v < -k) return v + k;
  return 0.0;
}

struct TvSettings {
  double lambda = 0.02;  // regularization weight
  double mu = 10.0;      // ADMM penalty
  int iters = 200;
  CgSettings cg{200, 1e-8, false};

  void validate() const {
    require(lambda > 0.0, "tv: lambda must be positive");
    require(mu > 0.0, "tv: mu must be positive");
    require(iters >= 1, "tv: iters must be >= 1");
  }
};

struct TvReport {
  std::vector<double> primal_residual;  // ||grad x - z|| per iteration
  std::vector<double> dual_residual;    // mu ||grad^T (z - z_prev)||
  bool cg_failure = false;
};

// Anisotropic TV by ADMM: the x-update solves
//   (A^T A + mu grad^T grad) x = A^T y + mu grad^T (z - p/mu)
// by conjugate gradient, the z-update soft-thresholds at lambda/mu, and the
// multiplier update is p += mu (grad x - z). Circular boundary for grad.
Image<double> tv_reconstruct(const SystemMatrix& A, const Sinogram<double>& y,
                             const TvSettings& settings, TvReport* report = nullptr);

// Dose-indexed default regularization weights for the four scan dose levels.
double tv_lambda_for_dose(double dose);

}  // namespace ldct
