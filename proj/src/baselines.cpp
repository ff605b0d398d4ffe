#include "ldct/baselines.hpp"

#include <fftw3.h>

#include <cmath>
#include <mutex>

#include "ldct/framelet.hpp"

namespace ldct {

namespace {

size_t next_pow2(size_t n) {
  size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

std::mutex fftw_plan_mutex;  // FFTW planning is not thread-safe

}  // namespace

Image<double> fbp_reconstruct(const FanBeamGeometry& geom, const Sinogram<double>& y,
                              Apodization apo) {
  geom.validate();
  require(y.views == geom.n_views && y.bins == geom.n_bins,
          "fbp: sinogram dimensions do not match geometry");

  const int nb = geom.n_bins, nv = geom.n_views;
  const double sid = geom.source_to_isocenter_mm;
  // detector coordinates rescaled to the isocenter line
  const double d = geom.detector_pixel_mm * sid / geom.source_to_detector_mm;
  const size_t pad = next_pow2(static_cast<size_t>(2 * nb));

  // band-limited ramp kernel h[n], wrapped into the padded buffer
  std::vector<double> h(pad, 0.0);
  h[0] = 1.0 / (4.0 * d * d);
  for (size_t n = 1; n < pad / 2; ++n) {
    if (n % 2 == 1) {
      double v = -1.0 / (M_PI * M_PI * n * n * d * d);
      h[n] = v;
      h[pad - n] = v;
    }
  }

  std::vector<fftw_complex> hf(pad / 2 + 1), sf(pad / 2 + 1);
  std::vector<double> buf(pad);
  fftw_plan fwd, bwd;
  {
    std::lock_guard<std::mutex> lock(fftw_plan_mutex);
    fwd = fftw_plan_dft_r2c_1d(static_cast<int>(pad), buf.data(), sf.data(), FFTW_ESTIMATE);
    bwd = fftw_plan_dft_c2r_1d(static_cast<int>(pad), sf.data(), buf.data(), FFTW_ESTIMATE);
  }

  std::copy(h.begin(), h.end(), buf.begin());
  fftw_execute_dft_r2c(fwd, buf.data(), hf.data());
  std::vector<double> filt(pad / 2 + 1);
  for (size_t i = 0; i < filt.size(); ++i) {
    filt[i] = hf[i][0];  // the ramp kernel is even, so its spectrum is real
    if (apo == Apodization::Hann)
      filt[i] *= 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(i) / (filt.size() - 1)));
  }

  // per-view: cosine weight, filter, keep q rows
  std::vector<double> q(static_cast<size_t>(nv) * nb);
  for (int v = 0; v < nv; ++v) {
    std::fill(buf.begin(), buf.end(), 0.0);
    for (int b = 0; b < nb; ++b) {
      double s = (b - 0.5 * (nb - 1)) * d;
      buf[b] = y.at(v, b) * sid / std::sqrt(sid * sid + s * s);
    }
    fftw_execute_dft_r2c(fwd, buf.data(), sf.data());
    for (size_t i = 0; i < filt.size(); ++i) {
      sf[i][0] *= filt[i];
      sf[i][1] *= filt[i];
    }
    fftw_execute_dft_c2r(bwd, sf.data(), buf.data());
    const double scale = d / static_cast<double>(pad);  // discrete conv step, FFT norm
    for (int b = 0; b < nb; ++b) q[static_cast<size_t>(v) * nb + b] = buf[b] * scale;
  }
  {
    std::lock_guard<std::mutex> lock(fftw_plan_mutex);
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(bwd);
  }

  // distance-weighted backprojection
  Image<double> img(geom.image_rows, geom.image_cols);
  const double p = geom.pixel_size_mm;
  const double x0 = -0.5 * geom.image_cols * p;
  const double y_top = 0.5 * geom.image_rows * p;
  const double dbeta = geom.angular_span_rad / nv;
  std::vector<double> cs(nv), sn(nv);
  for (int v = 0; v < nv; ++v) {
    cs[v] = std::cos(geom.view_angle(v));
    sn[v] = std::sin(geom.view_angle(v));
  }

#pragma omp parallel for schedule(static)
  for (int r = 0; r < geom.image_rows; ++r) {
    const double py = y_top - (r + 0.5) * p;
    for (int c = 0; c < geom.image_cols; ++c) {
      const double px = x0 + (c + 0.5) * p;
      double acc = 0.0;
      for (int v = 0; v < nv; ++v) {
        const double depth = sid - (px * cs[v] + py * sn[v]);  // along the central ray
        if (depth <= 1e-9) continue;
        const double sprime = sid * (-px * sn[v] + py * cs[v]) / depth;
        const double u = depth / sid;
        const double tb = sprime / d + 0.5 * (nb - 1);
        const int b0 = static_cast<int>(std::floor(tb));
        if (b0 < 0 || b0 + 1 >= nb) continue;
        const double frac = tb - b0;
        const double qi = (1.0 - frac) * q[static_cast<size_t>(v) * nb + b0] +
                          frac * q[static_cast<size_t>(v) * nb + b0 + 1];
        acc += qi / (u * u);
      }
      img.at(r, c) = 0.5 * dbeta * acc;  // the full orbit covers each line twice
    }
  }
  return img;
}

double tv_lambda_for_dose(double dose) {
  if (dose >= 5e4) return 0.01;
  if (dose >= 1e4) return 0.02;
  return 0.03;
}

Image<double> tv_reconstruct(const SystemMatrix& A, const Sinogram<double>& y,
                             const TvSettings& settings, TvReport* report) {
  settings.validate();
  const FilterBank<double> grad = build_filter_bank<double>(BankKind::Gradient);
  const int H = A.geom.image_rows, W = A.geom.image_cols;

  Image<double> x(H, W);
  SubbandStack<double> z(2, H, W), pmul(2, H, W), zeff(2, H, W);
  const double mu = settings.mu;
  const double thr = settings.lambda / mu;
  std::vector<double> betas = {mu, mu};
  Image<double> aty = back_project(A, y);

  for (int it = 0; it < settings.iters; ++it) {
    // x-update: (A^T A + mu grad^T grad) x = A^T y + mu grad^T (z - p/mu)
    for (size_t i = 0; i < zeff.v.size(); ++i) zeff.v[i] = z.v[i] - pmul.v[i] / mu;
    InversionProblem<double> prob{&A, &grad, &y, &zeff, betas, settings.cg};
    auto [xn, rep] = solve_inversion(prob, x, &aty);
    x = std::move(xn);
    if (report && !rep.converged) report->cg_failure = true;

    // z-update: soft threshold of grad x + p/mu at lambda/mu
    SubbandStack<double> gx = analyze(grad, x);
    SubbandStack<double> zp = z;
    for (size_t i = 0; i < z.v.size(); ++i) z.v[i] = soft_threshold(gx.v[i] + pmul.v[i] / mu, thr);

    // multiplier update
    for (size_t i = 0; i < pmul.v.size(); ++i) pmul.v[i] += mu * (gx.v[i] - z.v[i]);

    if (report) {
      double pr = 0.0;
      for (size_t i = 0; i < z.v.size(); ++i) {
        double dv = gx.v[i] - z.v[i];
        pr += dv * dv;
      }
      report->primal_residual.push_back(std::sqrt(pr));
      for (size_t i = 0; i < zp.v.size(); ++i) zp.v[i] = z.v[i] - zp.v[i];
      Image<double> dz = adjoint(grad, zp);
      report->dual_residual.push_back(mu * nrm2(dz.v));
    }
  }
  return x;
}

}  // namespace ldct
