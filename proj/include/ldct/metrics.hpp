#pragma once

#include "ldct/raster.hpp"

namespace ldct {

struct MetricReport {
  double psnr = 0.0;  // dB; +inf sentinel when the images are identical
  double rmse = 0.0;
  double ssim = 0.0;
};

// -10 log10( ||x - xs||^2 / max_i |x_i|^2 ), the peak taken from the ground
// truth x. The numerator is the total squared error; this differs from a
// mean-normalized PSNR by exactly 10 log10(N).
double psnr(const Image<double>& truth, const Image<double>& recon);

double rmse(const Image<double>& truth, const Image<double>& recon);

// Mean of the local SSIM map over windows fully inside the image; Gaussian
// window (default 11 taps, sigma 1.5), dynamic range taken from the ground
// truth.
double ssim(const Image<double>& truth, const Image<double>& recon, int window = 11,
            double k1 = 0.01, double k2 = 0.03);

MetricReport evaluate(const Image<double>& truth, const Image<double>& recon);

}  // namespace ldct
