#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace ldct {

// Dense row-major raster of attenuation values (mm^-1). Pixel (r, c) maps to
// physical center (x0 + (c+0.5)*p, y_top - (r+0.5)*p) with the image centered
// on the isocenter; see geometry.hpp.
template <class T>
struct Image {
  int rows = 0, cols = 0;
  std::vector<T> v;

  Image() = default;
  Image(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, T(0)) {}

  T& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  const T& at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
  size_t size() const { return v.size(); }
  bool same_shape(const Image& o) const { return rows == o.rows && cols == o.cols; }
};

// Log-transformed projection data, one value per (view, bin) ray.
template <class T>
struct Sinogram {
  int views = 0, bins = 0;
  std::vector<T> v;

  Sinogram() = default;
  Sinogram(int nv, int nb) : views(nv), bins(nb), v(static_cast<size_t>(nv) * nb, T(0)) {}

  T& at(int view, int bin) { return v[static_cast<size_t>(view) * bins + bin]; }
  const T& at(int view, int bin) const { return v[static_cast<size_t>(view) * bins + bin]; }
  size_t size() const { return v.size(); }
};

// A stack of per-channel images, all the same raster size.
template <class T>
struct SubbandStack {
  int channels = 0, rows = 0, cols = 0;
  std::vector<T> v;

  SubbandStack() = default;
  SubbandStack(int ch, int r, int c)
      : channels(ch), rows(r), cols(c), v(static_cast<size_t>(ch) * r * c, T(0)) {}

  T* channel(int i) { return v.data() + static_cast<size_t>(i) * rows * cols; }
  const T* channel(int i) const { return v.data() + static_cast<size_t>(i) * rows * cols; }
  size_t channel_size() const { return static_cast<size_t>(rows) * cols; }
  size_t size() const { return v.size(); }
};

template <class T>
double dot(const std::vector<T>& a, const std::vector<T>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

template <class T>
double sq_norm(const std::vector<T>& a) {
  return dot(a, a);
}

template <class T>
double nrm2(const std::vector<T>& a) {
  return std::sqrt(sq_norm(a));
}

template <class T>
void axpy(T alpha, const std::vector<T>& x, std::vector<T>& y) {
  for (size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

template <class Dst, class Src>
std::vector<Dst> cast_vec(const std::vector<Src>& s) {
  std::vector<Dst> d(s.size());
  for (size_t i = 0; i < s.size(); ++i) d[i] = static_cast<Dst>(s[i]);
  return d;
}

template <class Dst, class Src>
Image<Dst> cast_image(const Image<Src>& s) {
  Image<Dst> d(s.rows, s.cols);
  d.v = cast_vec<Dst>(s.v);
  return d;
}

template <class Dst, class Src>
Sinogram<Dst> cast_sinogram(const Sinogram<Src>& s) {
  Sinogram<Dst> d(s.views, s.bins);
  d.v = cast_vec<Dst>(s.v);
  return d;
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace ldct
