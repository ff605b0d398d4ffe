#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ldct/raster.hpp"

namespace ldct {

template <class T>
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> v;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_), v(static_cast<size_t>(n_) * c_ * h_ * w_, T(0)) {}

  size_t size() const { return v.size(); }
  size_t plane() const { return static_cast<size_t>(h) * w; }
  T* at(int ni, int ci) { return v.data() + (static_cast<size_t>(ni) * c + ci) * plane(); }
  const T* at(int ni, int ci) const {
    return v.data() + (static_cast<size_t>(ni) * c + ci) * plane();
  }
  bool same_shape(const Tensor4& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
};

// ---------------------------------------------------------------------------
// 2D convolution, 3x3 kernels, zero padding 1, stride 1 (cross-correlation in
// the usual deep-learning sense). kernels shaped (cout, cin, 3, 3).
// ---------------------------------------------------------------------------

template <class T>
void conv2d_forward(const Tensor4<T>& in, const Tensor4<T>& kernels, const std::vector<T>& bias,
                    Tensor4<T>& out) {
  require(kernels.h == 3 && kernels.w == 3, "conv2d: kernels must be 3x3");
  require(kernels.c == in.c, "conv2d: input channel mismatch");
  require(static_cast<int>(bias.size()) == kernels.n, "conv2d: bias size mismatch");
  const int H = in.h, W = in.w, PH = H + 2, PW = W + 2;
  out = Tensor4<T>(in.n, kernels.n, H, W);

  std::vector<T> padded(static_cast<size_t>(in.c) * PH * PW);
  for (int ni = 0; ni < in.n; ++ni) {
    for (int ic = 0; ic < in.c; ++ic) {
      T* p = padded.data() + static_cast<size_t>(ic) * PH * PW;
      std::fill(p, p + static_cast<size_t>(PH) * PW, T(0));
      const T* src = in.at(ni, ic);
      for (int r = 0; r < H; ++r)
        std::copy(src + static_cast<size_t>(r) * W, src + static_cast<size_t>(r + 1) * W,
                  p + static_cast<size_t>(r + 1) * PW + 1);
    }
#pragma omp parallel for schedule(static) if (kernels.n > 1)
    for (int oc = 0; oc < kernels.n; ++oc) {
      T* o = out.at(ni, oc);
      std::fill(o, o + out.plane(), bias[oc]);
      for (int ic = 0; ic < in.c; ++ic) {
        const T* k = kernels.at(oc, ic);
        const T* p = padded.data() + static_cast<size_t>(ic) * PH * PW;
        for (int r = 0; r < H; ++r) {
          const T* p0 = p + static_cast<size_t>(r) * PW;
          const T* p1 = p0 + PW;
          const T* p2 = p1 + PW;
          T* orow = o + static_cast<size_t>(r) * W;
          for (int c = 0; c < W; ++c) {
            orow[c] += k[0] * p0[c] + k[1] * p0[c + 1] + k[2] * p0[c + 2] +
                       k[3] * p1[c] + k[4] * p1[c + 1] + k[5] * p1[c + 2] +
                       k[6] * p2[c] + k[7] * p2[c + 1] + k[8] * p2[c + 2];
          }
        }
      }
    }
  }
}

template <class T>
void conv2d_backward(const Tensor4<T>& in, const Tensor4<T>& kernels, const Tensor4<T>& grad_out,
                     Tensor4<T>& grad_in, Tensor4<T>& grad_kernels, std::vector<T>& grad_bias) {
  require(grad_out.c == kernels.n && grad_out.h == in.h && grad_out.w == in.w &&
              grad_out.n == in.n,
          "conv2d_backward: grad shape mismatch");
  const int H = in.h, W = in.w, PH = H + 2, PW = W + 2;
  grad_in = Tensor4<T>(in.n, in.c, H, W);
  grad_kernels = Tensor4<T>(kernels.n, kernels.c, 3, 3);
  grad_bias.assign(kernels.n, T(0));

  std::vector<T> padded_in(static_cast<size_t>(in.c) * PH * PW);
  std::vector<T> padded_go(static_cast<size_t>(kernels.n) * PH * PW);
  for (int ni = 0; ni < in.n; ++ni) {
    for (int ic = 0; ic < in.c; ++ic) {
      T* p = padded_in.data() + static_cast<size_t>(ic) * PH * PW;
      std::fill(p, p + static_cast<size_t>(PH) * PW, T(0));
      const T* src = in.at(ni, ic);
      for (int r = 0; r < H; ++r)
        std::copy(src + static_cast<size_t>(r) * W, src + static_cast<size_t>(r + 1) * W,
                  p + static_cast<size_t>(r + 1) * PW + 1);
    }
    for (int oc = 0; oc < kernels.n; ++oc) {
      T* p = padded_go.data() + static_cast<size_t>(oc) * PH * PW;
      std::fill(p, p + static_cast<size_t>(PH) * PW, T(0));
      const T* src = grad_out.at(ni, oc);
      for (int r = 0; r < H; ++r)
        std::copy(src + static_cast<size_t>(r) * W, src + static_cast<size_t>(r + 1) * W,
                  p + static_cast<size_t>(r + 1) * PW + 1);
    }

#pragma omp parallel for schedule(static) if (kernels.n > 1)
    for (int oc = 0; oc < kernels.n; ++oc) {
      const T* go = grad_out.at(ni, oc);
      double gb = 0.0;
      for (size_t i = 0; i < grad_out.plane(); ++i) gb += static_cast<double>(go[i]);
      grad_bias[oc] += static_cast<T>(gb);
      for (int ic = 0; ic < in.c; ++ic) {
        const T* p = padded_in.data() + static_cast<size_t>(ic) * PH * PW;
        T* gk = grad_kernels.at(oc, ic);
        for (int a = 0; a < 3; ++a) {
          for (int b = 0; b < 3; ++b) {
            double s = 0.0;
            for (int r = 0; r < H; ++r) {
              const T* prow = p + static_cast<size_t>(r + a) * PW + b;
              const T* grow = go + static_cast<size_t>(r) * W;
              for (int c = 0; c < W; ++c) s += static_cast<double>(grow[c]) * prow[c];
            }
            gk[a * 3 + b] += static_cast<T>(s);
          }
        }
      }
    }

#pragma omp parallel for schedule(static) if (in.c > 1)
    for (int ic = 0; ic < in.c; ++ic) {
      T* gi = grad_in.at(ni, ic);
      for (int oc = 0; oc < kernels.n; ++oc) {
        const T* k = kernels.at(oc, ic);
        const T* p = padded_go.data() + static_cast<size_t>(oc) * PH * PW;
        for (int r = 0; r < H; ++r) {
          // correlation with the 180-degree flipped kernel
          const T* p0 = p + static_cast<size_t>(r) * PW;
          const T* p1 = p0 + PW;
          const T* p2 = p1 + PW;
          T* grow = gi + static_cast<size_t>(r) * W;
          for (int c = 0; c < W; ++c) {
            grow[c] += k[8] * p0[c] + k[7] * p0[c + 1] + k[6] * p0[c + 2] +
                       k[5] * p1[c] + k[4] * p1[c + 1] + k[3] * p1[c + 2] +
                       k[2] * p2[c] + k[1] * p2[c + 1] + k[0] * p2[c + 2];
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Batch normalization (per channel over batch x rows x cols), eps 1e-5,
// running stats updated with momentum 0.1 in training mode.
// ---------------------------------------------------------------------------

enum class BnMode { Training, Inference };

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

template <class T>
struct BnCache {
  std::vector<T> mean, invstd;  // per channel, saved by the training forward
  std::vector<T> batch_var;     // biased batch variance (for running updates)
};

template <class T>
void batchnorm_forward(const Tensor4<T>& in, const std::vector<T>& scale,
                       const std::vector<T>& shift, BnMode mode,
                       const std::vector<T>& running_mean, const std::vector<T>& running_var,
                       Tensor4<T>& out, BnCache<T>* cache) {
  require(in.n >= 1, "batchnorm: batch must be nonempty");
  require(static_cast<int>(scale.size()) == in.c && static_cast<int>(shift.size()) == in.c,
          "batchnorm: scale/shift size mismatch");
  out = Tensor4<T>(in.n, in.c, in.h, in.w);
  const size_t plane = in.plane();
  const double count = static_cast<double>(in.n) * plane;

  for (int ci = 0; ci < in.c; ++ci) {
    double mean, var;
    if (mode == BnMode::Training) {
      double s = 0.0;
      for (int ni = 0; ni < in.n; ++ni) {
        const T* x = in.at(ni, ci);
        for (size_t i = 0; i < plane; ++i) s += x[i];
      }
      mean = s / count;
      double sv = 0.0;
      for (int ni = 0; ni < in.n; ++ni) {
        const T* x = in.at(ni, ci);
        for (size_t i = 0; i < plane; ++i) {
          double d = x[i] - mean;
          sv += d * d;
        }
      }
      var = sv / count;
    } else {
      mean = running_mean[ci];
      var = running_var[ci];
    }
    const double invstd = 1.0 / std::sqrt(var + kBnEps);
    const T a = static_cast<T>(scale[ci] * invstd);
    const T b = static_cast<T>(shift[ci] - scale[ci] * invstd * mean);
    for (int ni = 0; ni < in.n; ++ni) {
      const T* x = in.at(ni, ci);
      T* y = out.at(ni, ci);
      for (size_t i = 0; i < plane; ++i) y[i] = a * x[i] + b;
    }
    if (cache) {
      if (cache->mean.empty()) {
        cache->mean.assign(in.c, T(0));
        cache->invstd.assign(in.c, T(0));
        cache->batch_var.assign(in.c, T(0));
      }
      cache->mean[ci] = static_cast<T>(mean);
      cache->invstd[ci] = static_cast<T>(invstd);
      cache->batch_var[ci] = static_cast<T>(var);
    }
  }
}

// Applies the momentum update to running statistics from a saved cache.
// Separated from the forward so forward passes stay side-effect free.
template <class T>
void batchnorm_update_running(const BnCache<T>& cache, std::vector<T>& running_mean,
                              std::vector<T>& running_var) {
  for (size_t c = 0; c < running_mean.size(); ++c) {
    running_mean[c] = static_cast<T>((1.0 - kBnMomentum) * running_mean[c] +
                                     kBnMomentum * cache.mean[c]);
    running_var[c] = static_cast<T>((1.0 - kBnMomentum) * running_var[c] +
                                    kBnMomentum * cache.batch_var[c]);
  }
}

template <class T>
void batchnorm_backward(const Tensor4<T>& in, const std::vector<T>& scale,
                        const BnCache<T>& cache, const Tensor4<T>& grad_out, Tensor4<T>& grad_in,
                        std::vector<T>& grad_scale, std::vector<T>& grad_shift) {
  grad_in = Tensor4<T>(in.n, in.c, in.h, in.w);
  grad_scale.assign(in.c, T(0));
  grad_shift.assign(in.c, T(0));
  const size_t plane = in.plane();
  const double count = static_cast<double>(in.n) * plane;

  for (int ci = 0; ci < in.c; ++ci) {
    const double mean = cache.mean[ci], invstd = cache.invstd[ci];
    double sum_g = 0.0, sum_gx = 0.0;
    for (int ni = 0; ni < in.n; ++ni) {
      const T* x = in.at(ni, ci);
      const T* g = grad_out.at(ni, ci);
      for (size_t i = 0; i < plane; ++i) {
        double xh = (x[i] - mean) * invstd;
        sum_g += g[i];
        sum_gx += g[i] * xh;
      }
    }
    grad_shift[ci] = static_cast<T>(sum_g);
    grad_scale[ci] = static_cast<T>(sum_gx);
    const double mg = sum_g / count, mgx = sum_gx / count;
    const double a = scale[ci] * invstd;
    for (int ni = 0; ni < in.n; ++ni) {
      const T* x = in.at(ni, ci);
      const T* g = grad_out.at(ni, ci);
      T* gi = grad_in.at(ni, ci);
      for (size_t i = 0; i < plane; ++i) {
        double xh = (x[i] - mean) * invstd;
        gi[i] = static_cast<T>(a * (g[i] - mg - xh * mgx));
      }
    }
  }
}

// ---------------------------------------------------------------------------
// ReLU (subgradient 0 at 0) and fully connected layers on flat vectors.
// ---------------------------------------------------------------------------

template <class T>
void relu_forward(const std::vector<T>& x, std::vector<T>& y) {
  y.resize(x.size());
  for (size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <class T>
void relu_backward(const std::vector<T>& x, const std::vector<T>& grad_y, std::vector<T>& grad_x) {
  require(x.size() == grad_y.size(), "relu_backward: shape mismatch");
  grad_x.resize(x.size());
  for (size_t i = 0; i < x.size(); ++i) grad_x[i] = x[i] > T(0) ? grad_y[i] : T(0);
}

// weight is (out x in) row-major
template <class T>
void dense_forward(const std::vector<T>& x, const std::vector<T>& weight,
                   const std::vector<T>& bias, int out_dim, std::vector<T>& y) {
  const int in_dim = static_cast<int>(x.size());
  require(weight.size() == static_cast<size_t>(out_dim) * in_dim, "dense: weight shape mismatch");
  require(bias.size() == static_cast<size_t>(out_dim), "dense: bias shape mismatch");
  y.assign(out_dim, T(0));
  for (int o = 0; o < out_dim; ++o) {
    double s = bias[o];
    const T* w = weight.data() + static_cast<size_t>(o) * in_dim;
    for (int i = 0; i < in_dim; ++i) s += static_cast<double>(w[i]) * x[i];
    y[o] = static_cast<T>(s);
  }
}

template <class T>
void dense_backward(const std::vector<T>& x, const std::vector<T>& weight, int out_dim,
                    const std::vector<T>& grad_y, std::vector<T>& grad_x,
                    std::vector<T>& grad_weight, std::vector<T>& grad_bias) {
  const int in_dim = static_cast<int>(x.size());
  require(grad_y.size() == static_cast<size_t>(out_dim), "dense_backward: shape mismatch");
  grad_x.assign(in_dim, T(0));
  grad_weight.assign(weight.size(), T(0));
  grad_bias = grad_y;
  for (int o = 0; o < out_dim; ++o) {
    T* gw = grad_weight.data() + static_cast<size_t>(o) * in_dim;
    const T g = grad_y[o];
    for (int i = 0; i < in_dim; ++i) gw[i] = g * x[i];
  }
  for (int i = 0; i < in_dim; ++i) {
    double s = 0.0;
    for (int o = 0; o < out_dim; ++o) s += static_cast<double>(weight[static_cast<size_t>(o) * in_dim + i]) * grad_y[o];
    grad_x[i] = static_cast<T>(s);
  }
}

// ---------------------------------------------------------------------------
// Parameter storage with per-tensor Adam moments and one shared step counter.
// ---------------------------------------------------------------------------

template <class T>
struct Param {
  std::string name;
  std::vector<int> shape;  // logical dims, rank 0..4
  std::vector<T> value, grad, m, v;
  bool trainable = true;

  size_t size() const { return value.size(); }
};

template <class T>
struct ParamSet {
  std::vector<Param<T>> items;
  int64_t step = 0;

  Param<T>& add(const std::string& name, std::vector<int> shape, bool trainable = true) {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    Param<T> p;
    p.name = name;
    p.shape = std::move(shape);
    p.value.assign(n, T(0));
    p.grad.assign(n, T(0));
    if (trainable) {
      p.m.assign(n, T(0));
      p.v.assign(n, T(0));
    }
    p.trainable = trainable;
    items.push_back(std::move(p));
    return items.back();
  }

  Param<T>* find(const std::string& name) {
    for (auto& p : items)
      if (p.name == name) return &p;
    return nullptr;
  }
  const Param<T>* find(const std::string& name) const {
    for (auto& p : items)
      if (p.name == name) return &p;
    return nullptr;
  }

  void zero_grads() {
    for (auto& p : items) std::fill(p.grad.begin(), p.grad.end(), T(0));
  }
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard Adam with bias correction; skips non-trainable tensors and
// advances the shared step counter once.
template <class T>
void adam_step(ParamSet<T>& ps, const AdamConfig& cfg = {}) {
  ps.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(ps.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(ps.step));
  for (auto& p : ps.items) {
    if (!p.trainable) continue;
    for (size_t i = 0; i < p.value.size(); ++i) {
      double g = p.grad[i];
      double m = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g;
      double v = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g * g;
      p.m[i] = static_cast<T>(m);
      p.v[i] = static_cast<T>(v);
      double mh = m / bc1, vh = v / bc2;
      p.value[i] -= static_cast<T>(cfg.lr * mh / (std::sqrt(vh) + cfg.eps));
    }
  }
}

// Orthogonal initialization of an (out x in) matrix via QR of a seeded
// Gaussian; rows are orthonormal when out <= in, columns when out > in.
// Implemented in src/nn.cpp (uses Eigen).
void orthogonal_matrix(int out_dim, int in_dim, uint64_t seed, std::vector<double>& w);

template <class T>
void orthogonal_init(std::vector<T>& w, int out_dim, int in_dim, uint64_t seed) {
  std::vector<double> tmp;
  orthogonal_matrix(out_dim, in_dim, seed, tmp);
  w.resize(tmp.size());
  for (size_t i = 0; i < tmp.size(); ++i) w[i] = static_cast<T>(tmp[i]);
}

}  // namespace ldct
