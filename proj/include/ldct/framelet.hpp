#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "ldct/raster.hpp"

namespace ldct {

enum class BankKind { BsplineLinear, Gradient, Learnable, None };

BankKind bank_kind_from_string(const std::string& s);
std::string to_string(BankKind k);

// 3x3 kernel stored row-major over offsets (-1..1, -1..1).
template <class T>
using Kernel3 = std::array<T, 9>;

// High-pass analysis filter bank applied as circular (periodic) convolution.
// BsplineLinear is the tight frame made of the eight tensor products of the
// 1D taps h0=[1/4,1/2,1/4], h1=[sqrt2/4,0,-sqrt2/4], h2=[-1/4,1/2,-1/4],
// excluding h0*h0^T which is kept as the low-pass. Gradient is the two
// finite-difference kernels. None is the identity coupling used by the
// no-filter ablation (no kernels; analyze/adjoint copy the image through a
// single channel).
template <class T>
struct FilterBank {
  BankKind kind = BankKind::BsplineLinear;
  int L = 0;  // number of stored high-pass kernels (0 for None)
  std::vector<Kernel3<T>> highpass;
  std::optional<Kernel3<T>> lowpass;

  // channel count of the coupling stack z (None couples through 1 channel)
  int channels() const { return kind == BankKind::None ? 1 : L; }
};

namespace detail {

template <class T>
std::array<T, 3> bspline_tap(int k) {
  const T r = static_cast<T>(std::sqrt(2.0) / 4.0);
  switch (k) {
    case 0: return {T(0.25), T(0.5), T(0.25)};
    case 1: return {r, T(0), -r};
    default: return {T(-0.25), T(0.5), T(-0.25)};
  }
}

template <class T>
Kernel3<T> outer3(const std::array<T, 3>& hr, const std::array<T, 3>& hc) {
  Kernel3<T> k{};
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) k[a * 3 + b] = hr[a] * hc[b];
  return k;
}

}  // namespace detail

// Builds the requested bank. Learnable banks start from the bspline kernels
// unless explicit initial kernels are supplied; passing Learnable with no
// initializer available is an error at the call sites that require one.
template <class T>
FilterBank<T> build_filter_bank(BankKind kind,
                                const std::vector<Kernel3<T>>* learnable_init = nullptr) {
  FilterBank<T> bank;
  bank.kind = kind;
  switch (kind) {
    case BankKind::BsplineLinear: {
      for (int k1 = 0; k1 < 3; ++k1)
        for (int k2 = 0; k2 < 3; ++k2) {
          if (k1 == 0 && k2 == 0) continue;
          bank.highpass.push_back(
              detail::outer3(detail::bspline_tap<T>(k1), detail::bspline_tap<T>(k2)));
        }
      bank.lowpass = detail::outer3(detail::bspline_tap<T>(0), detail::bspline_tap<T>(0));
      break;
    }
    case BankKind::Learnable: {
      require(learnable_init != nullptr,
              "build_filter_bank: learnable kind requires explicit kernel initialization");
      bank.highpass = *learnable_init;
      break;
    }
    case BankKind::Gradient: {
      Kernel3<T> h{};  // x[r,c] - x[r,c-1]
      h[1 * 3 + 1] = T(1);
      h[1 * 3 + 2] = T(-1);
      Kernel3<T> v{};  // x[r,c] - x[r-1,c]
      v[1 * 3 + 1] = T(1);
      v[2 * 3 + 1] = T(-1);
      bank.highpass = {h, v};
      break;
    }
    case BankKind::None:
      break;
  }
  bank.L = static_cast<int>(bank.highpass.size());
  return bank;
}

// z[r,c] = sum_{a,b} f[a,b] * x[(r-a) mod R, (c-b) mod C]  (true convolution)
template <class T>
void convolve_circular(const Image<T>& x, const Kernel3<T>& f, T* out) {
  const int R = x.rows, C = x.cols;
  for (int r = 0; r < R; ++r) {
    const int rm = (r - 1 + R) % R, rp = (r + 1) % R;
    const T* x0 = &x.v[static_cast<size_t>(rm) * C];
    const T* x1 = &x.v[static_cast<size_t>(r) * C];
    const T* x2 = &x.v[static_cast<size_t>(rp) * C];
    T* o = out + static_cast<size_t>(r) * C;
    for (int c = 0; c < C; ++c) {
      const int cm = (c - 1 + C) % C, cp = (c + 1) % C;
      o[c] = f[8] * x0[cm] + f[7] * x0[c] + f[6] * x0[cp] +
             f[5] * x1[cm] + f[4] * x1[c] + f[3] * x1[cp] +
             f[2] * x2[cm] + f[1] * x2[c] + f[0] * x2[cp];
    }
  }
}

// adjoint: x[r,c] += sum_{a,b} f[a,b] * z[(r+a) mod R, (c+b) mod C]
template <class T>
void correlate_circular_add(const T* z, int R, int C, const Kernel3<T>& f, T* out) {
  for (int r = 0; r < R; ++r) {
    const int rm = (r - 1 + R) % R, rp = (r + 1) % R;
    const T* z0 = z + static_cast<size_t>(rm) * C;
    const T* z1 = z + static_cast<size_t>(r) * C;
    const T* z2 = z + static_cast<size_t>(rp) * C;
    T* o = out + static_cast<size_t>(r) * C;
    for (int c = 0; c < C; ++c) {
      const int cm = (c - 1 + C) % C, cp = (c + 1) % C;
      o[c] += f[0] * z0[cm] + f[1] * z0[c] + f[2] * z0[cp] +
              f[3] * z1[cm] + f[4] * z1[c] + f[5] * z1[cp] +
              f[6] * z2[cm] + f[7] * z2[c] + f[8] * z2[cp];
    }
  }
}

template <class T>
SubbandStack<T> analyze(const FilterBank<T>& bank, const Image<T>& x) {
  require(x.rows >= 3 && x.cols >= 3, "analyze: image smaller than kernel support");
  if (bank.kind == BankKind::None) {
    SubbandStack<T> z(1, x.rows, x.cols);
    std::copy(x.v.begin(), x.v.end(), z.v.begin());
    return z;
  }
  SubbandStack<T> z(bank.L, x.rows, x.cols);
#pragma omp parallel for schedule(static) if (bank.L > 1 && x.size() > 1024)
  for (int i = 0; i < bank.L; ++i) convolve_circular(x, bank.highpass[i], z.channel(i));
  return z;
}

// F_i^T applied to one channel of the stack.
template <class T>
Image<T> adjoint_channel(const FilterBank<T>& bank, const SubbandStack<T>& z, int i) {
  require(z.channels == bank.channels(), "adjoint: channel count mismatch with bank");
  Image<T> x(z.rows, z.cols);
  if (bank.kind == BankKind::None) {
    std::copy(z.channel(0), z.channel(0) + z.channel_size(), x.v.begin());
    return x;
  }
  correlate_circular_add(z.channel(i), z.rows, z.cols, bank.highpass[i], x.v.data());
  return x;
}

// sum_i F_i^T z_i
template <class T>
Image<T> adjoint(const FilterBank<T>& bank, const SubbandStack<T>& z) {
  require(z.channels == bank.channels(), "adjoint: channel count mismatch with bank");
  Image<T> x(z.rows, z.cols);
  if (bank.kind == BankKind::None) {
    std::copy(z.channel(0), z.channel(0) + z.channel_size(), x.v.begin());
    return x;
  }
  for (int i = 0; i < bank.L; ++i)
    correlate_circular_add(z.channel(i), z.rows, z.cols, bank.highpass[i], x.v.data());
  return x;
}

// Low-pass completion H0^T H0 x; together with adjoint(analyze(x)) this is
// the identity for the bspline bank.
template <class T>
Image<T> lowpass_gram(const FilterBank<T>& bank, const Image<T>& x) {
  require(bank.lowpass.has_value(), "lowpass_gram: bank has no low-pass kernel");
  Image<T> h0x(x.rows, x.cols);
  convolve_circular(x, *bank.lowpass, h0x.v.data());
  Image<T> out(x.rows, x.cols);
  correlate_circular_add(h0x.v.data(), x.rows, x.cols, *bank.lowpass, out.v.data());
  return out;
}

template <class Dst, class Src>
FilterBank<Dst> cast_bank(const FilterBank<Src>& b) {
  FilterBank<Dst> o;
  o.kind = b.kind;
  o.L = b.L;
  for (const auto& k : b.highpass) {
    Kernel3<Dst> kd;
    for (int i = 0; i < 9; ++i) kd[i] = static_cast<Dst>(k[i]);
    o.highpass.push_back(kd);
  }
  if (b.lowpass) {
    Kernel3<Dst> kd;
    for (int i = 0; i < 9; ++i) kd[i] = static_cast<Dst>((*b.lowpass)[i]);
    o.lowpass = kd;
  }
  return o;
}

}  // namespace ldct
