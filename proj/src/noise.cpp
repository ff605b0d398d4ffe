#include "ldct/noise.hpp"

#include <atomic>
#include <cmath>

#include "ldct/rng.hpp"

namespace ldct {

namespace {

// Poisson sampling: CDF inversion below mean 30, rounded normal approximation
// above. Both paths draw from the per-ray stream only, keeping the output a
// pure function of (mean, stream).
double sample_poisson(double mean, Rng& rng) {
  if (mean < 30.0) {
    double u = rng.uniform();
    double p = std::exp(-mean);
    double cum = p;
    int k = 0;
    while (u > cum && k < 1000) {
      ++k;
      p *= mean / k;
      cum += p;
    }
    return static_cast<double>(k);
  }
  double z = rng.gaussian();
  double v = std::floor(mean + std::sqrt(mean) * z + 0.5);
  return v < 0.0 ? 0.0 : v;
}

}  // namespace

RawCounts simulate_counts(const Sinogram<double>& line_integrals, const NoiseModel& nm) {
  nm.validate();
  RawCounts out;
  out.views = line_integrals.views;
  out.bins = line_integrals.bins;
  out.v.resize(line_integrals.size());
  const double sigma_e = std::sqrt(nm.electronic_variance);
  std::atomic<int64_t> warnings{0};

#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < static_cast<int64_t>(out.v.size()); ++i) {
    double mean = nm.dose * std::exp(-line_integrals.v[i]);
    if (mean < 1e-12) {
      mean = 1e-12;
      warnings.fetch_add(1, std::memory_order_relaxed);
    }
    Rng rng(Rng::mix(nm.rng_seed, static_cast<uint64_t>(i)));
    double counts = sample_poisson(mean, rng);
    if (sigma_e > 0.0) counts += sigma_e * rng.gaussian();
    out.v[i] = counts;
  }
  out.underflow_warnings = warnings.load();
  return out;
}

RawCounts simulate_counts(const SystemMatrix& A, const Image<double>& x, const NoiseModel& nm) {
  return simulate_counts(forward_project(A, x), nm);
}

Sinogram<double> counts_to_sinogram(const RawCounts& counts, const NoiseModel& nm) {
  nm.validate();
  Sinogram<double> y(counts.views, counts.bins);
  for (size_t i = 0; i < counts.v.size(); ++i)
    y.v[i] = std::log(nm.dose / std::max(counts.v[i], 1.0));
  return y;
}

}  // namespace ldct
