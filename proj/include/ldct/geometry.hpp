#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ldct/raster.hpp"

namespace ldct {

// Fan-beam scan description: flat equispaced detector, source orbiting the
// isocenter, view angles evenly spaced over angular_span_rad starting at 0.
//
// Physical frame: isocenter at the origin, x to the right, y up. The image is
// centered on the isocenter; pixel (r, c) covers
//   x in [x0 + c*p, x0 + (c+1)*p],  y in [y_top - (r+1)*p, y_top - r*p]
// with x0 = -cols*p/2 and y_top = rows*p/2 (row 0 is the top of the image).
struct FanBeamGeometry {
  int n_views = 120;
  int n_bins = 128;
  int image_rows = 64;
  int image_cols = 64;
  double pixel_size_mm = 4.0;
  double detector_pixel_mm = 4.0;
  double source_to_detector_mm = 1000.0;
  double source_to_isocenter_mm = 500.0;
  double angular_span_rad = 2.0 * M_PI;

  void validate() const;

  double view_angle(int view) const { return angular_span_rad * view / n_views; }

  // Source position at a view.
  std::array<double, 2> source(int view) const {
    double a = view_angle(view);
    return {source_to_isocenter_mm * std::cos(a), source_to_isocenter_mm * std::sin(a)};
  }

  // Center of a detector bin at a view. The detector line passes through the
  // point opposite the source at distance (sdd - sid) from the isocenter and
  // is oriented along the tangential direction.
  std::array<double, 2> bin_center(int view, int bin) const {
    double a = view_angle(view);
    double ex = std::cos(a), ey = std::sin(a);
    double ux = -std::sin(a), uy = std::cos(a);
    double off = (bin - 0.5 * (n_bins - 1)) * detector_pixel_mm;
    double dx = (source_to_isocenter_mm - source_to_detector_mm) * ex;
    double dy = (source_to_isocenter_mm - source_to_detector_mm) * ey;
    return {dx + off * ux, dy + off * uy};
  }

  // Lateral half-coverage of the fan at the isocenter plane (detector half
  // width divided by the magnification). The image must fit inside this.
  double fov_radius_mm() const {
    return 0.5 * n_bins * detector_pixel_mm * source_to_isocenter_mm / source_to_detector_mm;
  }

  double magnification() const { return source_to_detector_mm / source_to_isocenter_mm; }
};

// Sparse fan-beam projector in compressed-row layout; row i holds the exact
// intersection lengths (mm) of ray i with the pixel grid. A transposed copy
// of the same entries backs the adjoint so both directions parallelize with a
// fixed summation order per output element. Immutable after construction and
// safe to share across threads.
struct SystemMatrix {
  FanBeamGeometry geom;
  int64_t rows = 0;  // n_views * n_bins
  int64_t cols = 0;  // image_rows * image_cols
  std::vector<int64_t> row_ptr;
  std::vector<int32_t> col_idx;
  std::vector<double> weight;
  std::vector<float> weight_f32;  // single-precision view of `weight`
  // transpose (entries ordered by pixel, then ray)
  std::vector<int64_t> tcol_ptr;
  std::vector<int32_t> trow_idx;
  std::vector<double> tweight;
  std::vector<float> tweight_f32;

  int64_t nnz() const { return static_cast<int64_t>(weight.size()); }

  template <class T>
  const T* weights() const;
  template <class T>
  const T* tweights() const;
};

template <>
inline const double* SystemMatrix::weights<double>() const { return weight.data(); }
template <>
inline const float* SystemMatrix::weights<float>() const { return weight_f32.data(); }
template <>
inline const double* SystemMatrix::tweights<double>() const { return tweight.data(); }
template <>
inline const float* SystemMatrix::tweights<float>() const { return tweight_f32.data(); }

// Traces every (view, bin) ray with Siddon exact cell-intersection lengths.
// Deterministic: identical geometry gives a bit-identical matrix.
SystemMatrix build_system_matrix(const FanBeamGeometry& geom);

template <class T>
Sinogram<T> forward_project(const SystemMatrix& A, const Image<T>& x) {
  require(static_cast<int64_t>(x.size()) == A.cols &&
              x.rows == A.geom.image_rows && x.cols == A.geom.image_cols,
          "forward_project: image dimensions do not match system matrix");
  Sinogram<T> y(A.geom.n_views, A.geom.n_bins);
  const T* w = A.weights<T>();
#pragma omp parallel for schedule(static) if (A.rows > 4096)
  for (int64_t i = 0; i < A.rows; ++i) {
    T acc = T(0);
    for (int64_t k = A.row_ptr[i]; k < A.row_ptr[i + 1]; ++k)
      acc += w[k] * x.v[A.col_idx[k]];
    y.v[i] = acc;
  }
  return y;
}

template <class T>
Image<T> back_project(const SystemMatrix& A, const Sinogram<T>& y) {
  require(static_cast<int64_t>(y.size()) == A.rows &&
              y.views == A.geom.n_views && y.bins == A.geom.n_bins,
          "back_project: sinogram dimensions do not match system matrix");
  Image<T> x(A.geom.image_rows, A.geom.image_cols);
  const T* w = A.tweights<T>();
#pragma omp parallel for schedule(static) if (A.cols > 4096)
  for (int64_t j = 0; j < A.cols; ++j) {
    T acc = T(0);
    for (int64_t k = A.tcol_ptr[j]; k < A.tcol_ptr[j + 1]; ++k)
      acc += w[k] * y.v[A.trow_idx[k]];
    x.v[j] = acc;
  }
  return x;
}

}  // namespace ldct
