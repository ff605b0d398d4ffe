#include "ldct/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ldct {

void FanBeamGeometry::validate() const {
  require(n_views >= 1, "geometry: n_views must be >= 1");
  require(n_bins >= 1, "geometry: n_bins must be >= 1");
  require(image_rows >= 1 && image_cols >= 1, "geometry: image size must be positive");
  require(pixel_size_mm > 0.0, "geometry: pixel_size_mm must be positive");
  require(detector_pixel_mm > 0.0, "geometry: detector_pixel_mm must be positive");
  require(source_to_isocenter_mm > 0.0, "geometry: source_to_isocenter_mm must be positive");
  require(source_to_detector_mm > source_to_isocenter_mm,
          "geometry: source_to_detector_mm must exceed source_to_isocenter_mm");
  require(angular_span_rad > 0.0, "geometry: angular_span_rad must be positive");
}

namespace {

struct RayHits {
  std::vector<int32_t> cols;
  std::vector<double> lens;
};

// Exact cell-intersection lengths of the segment S->P with the pixel grid.
// Walks boundary crossings in order and assigns each segment to the pixel
// containing its midpoint, which is robust at corner crossings.
void trace_ray(const FanBeamGeometry& g, const std::array<double, 2>& S,
               const std::array<double, 2>& P, RayHits& out) {
  out.cols.clear();
  out.lens.clear();

  const double p = g.pixel_size_mm;
  const double x0 = -0.5 * g.image_cols * p;
  const double y_top = 0.5 * g.image_rows * p;
  const double x1 = -x0;
  const double y_bot = -y_top;

  double dx = P[0] - S[0], dy = P[1] - S[1];
  const double len = std::hypot(dx, dy);
  if (len <= 0.0) return;
  dx /= len;
  dy /= len;

  // clip [0, len] against the image bounding box
  double t_lo = 0.0, t_hi = len;
  auto clip = [&](double s, double d, double lo, double hi) {
    if (std::abs(d) < 1e-15) {
      if (s < lo || s > hi) t_lo = 1.0, t_hi = 0.0;
      return;
    }
    double ta = (lo - s) / d, tb = (hi - s) / d;
    if (ta > tb) std::swap(ta, tb);
    t_lo = std::max(t_lo, ta);
    t_hi = std::min(t_hi, tb);
  };
  clip(S[0], dx, x0, x1);
  clip(S[1], dy, y_bot, y_top);
  if (t_lo >= t_hi) return;

  double t = t_lo;
  while (t < t_hi - 1e-12) {
    // next x and y grid crossings after t
    double tx = t_hi, ty = t_hi;
    if (std::abs(dx) > 1e-15) {
      double xc = S[0] + t * dx;
      double cell = (xc - x0) / p;
      double next = dx > 0 ? std::floor(cell + 1e-9) + 1.0 : std::ceil(cell - 1e-9) - 1.0;
      tx = (x0 + next * p - S[0]) / dx;
    }
    if (std::abs(dy) > 1e-15) {
      double yc = S[1] + t * dy;
      double cell = (yc - y_bot) / p;
      double next = dy > 0 ? std::floor(cell + 1e-9) + 1.0 : std::ceil(cell - 1e-9) - 1.0;
      ty = (y_bot + next * p - S[1]) / dy;
    }
    double tn = std::min({tx, ty, t_hi});
    if (tn <= t + 1e-12) {
      t = t + 1e-12;
      continue;
    }
    double tm = 0.5 * (t + tn);
    double mx = S[0] + tm * dx, my = S[1] + tm * dy;
    int c = static_cast<int>(std::floor((mx - x0) / p));
    int r = static_cast<int>(std::floor((y_top - my) / p));
    if (r >= 0 && r < g.image_rows && c >= 0 && c < g.image_cols) {
      int32_t idx = static_cast<int32_t>(r * g.image_cols + c);
      if (!out.cols.empty() && out.cols.back() == idx)
        out.lens.back() += tn - t;  // merge slivers from corner crossings
      else {
        out.cols.push_back(idx);
        out.lens.push_back(tn - t);
      }
    }
    t = tn;
  }
}

}  // namespace

SystemMatrix build_system_matrix(const FanBeamGeometry& geom) {
  geom.validate();

  // Field-of-view rule for orbit scans: the image must fit inside the lateral
  // fan coverage. Single-view geometries are ray-tracing harnesses without a
  // reconstruction field of view and skip the check.
  const double fov = geom.fov_radius_mm();
  const double half_w = 0.5 * geom.image_cols * geom.pixel_size_mm;
  const double half_h = 0.5 * geom.image_rows * geom.pixel_size_mm;
  const double tol = 1e-9 * std::max(1.0, fov);
  if (geom.n_views > 1 && (half_w > fov + tol || half_h > fov + tol)) {
    std::ostringstream os;
    os << "geometry: image " << (half_w > fov + tol ? "cols" : "rows") << " extent "
       << 2.0 * std::max(half_w, half_h) << " mm exceeds the scanned field of view "
       << 2.0 * fov << " mm";
    throw std::invalid_argument(os.str());
  }

  SystemMatrix A;
  A.geom = geom;
  A.rows = static_cast<int64_t>(geom.n_views) * geom.n_bins;
  A.cols = static_cast<int64_t>(geom.image_rows) * geom.image_cols;
  A.row_ptr.assign(A.rows + 1, 0);

  std::vector<RayHits> hits(A.rows);
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < A.rows; ++i) {
    int view = static_cast<int>(i / geom.n_bins);
    int bin = static_cast<int>(i % geom.n_bins);
    trace_ray(geom, geom.source(view), geom.bin_center(view, bin), hits[i]);
  }

  for (int64_t i = 0; i < A.rows; ++i)
    A.row_ptr[i + 1] = A.row_ptr[i] + static_cast<int64_t>(hits[i].cols.size());
  A.col_idx.resize(A.row_ptr[A.rows]);
  A.weight.resize(A.row_ptr[A.rows]);
  for (int64_t i = 0; i < A.rows; ++i) {
    std::copy(hits[i].cols.begin(), hits[i].cols.end(), A.col_idx.begin() + A.row_ptr[i]);
    std::copy(hits[i].lens.begin(), hits[i].lens.end(), A.weight.begin() + A.row_ptr[i]);
  }

  // transpose with entries ordered by (pixel, ray)
  A.tcol_ptr.assign(A.cols + 1, 0);
  for (int32_t c : A.col_idx) A.tcol_ptr[c + 1]++;
  for (int64_t j = 0; j < A.cols; ++j) A.tcol_ptr[j + 1] += A.tcol_ptr[j];
  A.trow_idx.resize(A.nnz());
  A.tweight.resize(A.nnz());
  std::vector<int64_t> cursor(A.tcol_ptr.begin(), A.tcol_ptr.end() - 1);
  for (int64_t i = 0; i < A.rows; ++i) {
    for (int64_t k = A.row_ptr[i]; k < A.row_ptr[i + 1]; ++k) {
      int64_t dst = cursor[A.col_idx[k]]++;
      A.trow_idx[dst] = static_cast<int32_t>(i);
      A.tweight[dst] = A.weight[k];
    }
  }

  A.weight_f32 = cast_vec<float>(A.weight);
  A.tweight_f32 = cast_vec<float>(A.tweight);
  return A;
}

}  // namespace ldct
