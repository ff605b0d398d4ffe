#pragma once

// Independent reference implementations used only by tests. These must stay
// decoupled from the library code paths they check.

#include <cmath>
#include <functional>
#include <vector>

#include "ldct/framelet.hpp"
#include "ldct/geometry.hpp"
#include "ldct/rng.hpp"

namespace oracle {

// Ray-march accumulation of per-pixel lengths: walks the ray at the given
// step, detects pixel changes between consecutive sample points and bisects
// each boundary crossing down to machine precision, so the per-pixel length
// error is dominated only by missed slivers narrower than the step.
inline std::vector<double> march_ray(const ldct::FanBeamGeometry& g,
                                     const std::array<double, 2>& S,
                                     const std::array<double, 2>& P, double step_px) {
  std::vector<double> len(static_cast<size_t>(g.image_rows) * g.image_cols, 0.0);
  const double p = g.pixel_size_mm;
  const double x0 = -0.5 * g.image_cols * p;
  const double y_top = 0.5 * g.image_rows * p;
  double dx = P[0] - S[0], dy = P[1] - S[1];
  double total = std::hypot(dx, dy);
  dx /= total;
  dy /= total;

  auto cell_at = [&](double t) -> long {
    double mx = S[0] + t * dx, my = S[1] + t * dy;
    int c = static_cast<int>(std::floor((mx - x0) / p));
    int r = static_cast<int>(std::floor((y_top - my) / p));
    if (r < 0 || r >= g.image_rows || c < 0 || c >= g.image_cols) return -1;
    return static_cast<long>(r) * g.image_cols + c;
  };

  const double h = step_px * p;
  double t_seg = 0.0;              // start of the current same-pixel run
  long cell = cell_at(0.0);
  double t = 0.0;
  while (t < total) {
    double tn = std::min(total, t + h);
    long cn = cell_at(tn);
    if (cn != cell) {
      // a straight line never re-enters a pixel, so differing endpoints flag
      // every step containing a crossing; bisect the first one and resume
      // from it so multi-crossing steps are resolved crossing by crossing
      double lo = t, hi = tn;
      for (int it = 0; it < 80 && hi - lo > 1e-12; ++it) {
        double mid = 0.5 * (lo + hi);
        if (cell_at(mid) == cell)
          lo = mid;
        else
          hi = mid;
      }
      if (cell >= 0) len[cell] += hi - t_seg;
      t_seg = hi;
      cell = cell_at(hi);
      t = hi;
      continue;
    }
    t = tn;
  }
  if (cell >= 0) len[cell] += total - t_seg;
  return len;
}

// Dense matrix of one framelet channel built directly from the kernel
// definition with circular indexing (rows indexed by output pixel).
inline std::vector<double> dense_channel_matrix(const ldct::Kernel3<double>& f, int R, int C) {
  const int n = R * C;
  std::vector<double> m(static_cast<size_t>(n) * n, 0.0);
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c)
      for (int a = -1; a <= 1; ++a)
        for (int b = -1; b <= 1; ++b) {
          int sr = ((r - a) % R + R) % R;
          int sc = ((c - b) % C + C) % C;
          m[static_cast<size_t>(r * C + c) * n + (sr * C + sc)] += f[(a + 1) * 3 + (b + 1)];
        }
  return m;
}

// Central finite difference of a scalar function at x along coordinate i.
inline double central_diff(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

// Relative error between an analytic gradient vector and its finite
// difference estimate, normalized by the larger norm.
inline double grad_rel_err(const std::vector<double>& analytic, const std::vector<double>& fd) {
  double diff = 0.0, na = 0.0, nf = 0.0;
  for (size_t i = 0; i < analytic.size(); ++i) {
    double d = analytic[i] - fd[i];
    diff += d * d;
    na += analytic[i] * analytic[i];
    nf += fd[i] * fd[i];
  }
  double denom = std::max(std::sqrt(na), std::sqrt(nf));
  if (denom == 0.0) return std::sqrt(diff);
  return std::sqrt(diff) / denom;
}

inline ldct::Image<double> random_image(int rows, int cols, uint64_t seed, double lo = -1.0,
                                        double hi = 1.0) {
  ldct::Image<double> img(rows, cols);
  ldct::Rng rng(seed);
  for (auto& v : img.v) v = rng.uniform(lo, hi);
  return img;
}

}  // namespace oracle
