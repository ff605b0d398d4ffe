#include "ldct/metrics.hpp"

#include <cmath>
#include <limits>

namespace ldct {

double psnr(const Image<double>& truth, const Image<double>& recon) {
  require(truth.same_shape(recon), "psnr: shape mismatch");
  double peak = 0.0;
  for (double v : truth.v) peak = std::max(peak, std::abs(v));
  require(peak > 0.0, "psnr: ground truth is identically zero");
  double err = 0.0;
  for (size_t i = 0; i < truth.v.size(); ++i) {
    double d = truth.v[i] - recon.v[i];
    err += d * d;
  }
  if (err == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(err / (peak * peak));
}

double rmse(const Image<double>& truth, const Image<double>& recon) {
  require(truth.same_shape(recon), "rmse: shape mismatch");
  double err = 0.0;
  for (size_t i = 0; i < truth.v.size(); ++i) {
    double d = truth.v[i] - recon.v[i];
    err += d * d;
  }
  return std::sqrt(err / truth.v.size());
}

double ssim(const Image<double>& truth, const Image<double>& recon, int window, double k1,
            double k2) {
  require(truth.same_shape(recon), "ssim: shape mismatch");
  require(window <= truth.rows && window <= truth.cols, "ssim: window larger than image");
  require(window % 2 == 1, "ssim: window must be odd");

  double lo = truth.v[0], hi = truth.v[0];
  for (double v : truth.v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double range = hi - lo;
  require(range > 0.0, "ssim: ground truth has zero dynamic range");
  const double c1 = (k1 * range) * (k1 * range);
  const double c2 = (k2 * range) * (k2 * range);

  // Gaussian window, sigma 1.5, normalized to unit sum
  const int half = window / 2;
  std::vector<double> w(static_cast<size_t>(window) * window);
  double wsum = 0.0;
  for (int a = -half; a <= half; ++a)
    for (int b = -half; b <= half; ++b) {
      double g = std::exp(-(a * a + b * b) / (2.0 * 1.5 * 1.5));
      w[(a + half) * window + (b + half)] = g;
      wsum += g;
    }
  for (double& v : w) v /= wsum;

  double total = 0.0;
  int count = 0;
  for (int r = half; r < truth.rows - half; ++r) {
    for (int c = half; c < truth.cols - half; ++c) {
      double mx = 0, my = 0;
      for (int a = -half; a <= half; ++a)
        for (int b = -half; b <= half; ++b) {
          double wt = w[(a + half) * window + (b + half)];
          mx += wt * truth.at(r + a, c + b);
          my += wt * recon.at(r + a, c + b);
        }
      double vx = 0, vy = 0, cov = 0;
      for (int a = -half; a <= half; ++a)
        for (int b = -half; b <= half; ++b) {
          double wt = w[(a + half) * window + (b + half)];
          double dx = truth.at(r + a, c + b) - mx;
          double dy = recon.at(r + a, c + b) - my;
          vx += wt * dx * dx;
          vy += wt * dy * dy;
          cov += wt * dx * dy;
        }
      double num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
      double den = (mx * mx + my * my + c1) * (vx + vy + c2);
      total += num / den;
      ++count;
    }
  }
  return total / count;
}

MetricReport evaluate(const Image<double>& truth, const Image<double>& recon) {
  return {psnr(truth, recon), rmse(truth, recon), ssim(truth, recon)};
}

}  // namespace ldct
