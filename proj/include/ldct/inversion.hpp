#pragma once

#include <vector>

#include "ldct/framelet.hpp"
#include "ldct/geometry.hpp"
#include "ldct/raster.hpp"

namespace ldct {

struct CgSettings {
  int max_iters = 100;
  double rel_tolerance = 1e-6;
  bool record_history = false;

  void validate() const {
    require(max_iters >= 1, "cg: max_iters must be >= 1");
    require(rel_tolerance > 0.0 && rel_tolerance < 1.0, "cg: rel_tolerance must be in (0,1)");
  }
};

// Verification-grade settings used by oracles and gradient checks.
inline CgSettings verification_cg() { return {2000, 1e-10, false}; }

struct CgReport {
  int iterations = 0;
  double rel_residual = 0.0;
  bool converged = false;
  std::vector<double> history;  // residual 2-norms per iteration (when recorded)
  // quadratic objective 0.5 x^T M x - b^T x per iteration (when recorded);
  // its decrease is equivalent to the decrease of the M-norm error, which is
  // the monotone quantity of conjugate gradients (the 2-norm residual is not)
  std::vector<double> energy_history;
};

// One instance of the normal equations
//   (A^T A + sum_i beta_i F_i^T F_i) x = A^T y + sum_i beta_i F_i^T z_i.
// For the identity coupling (bank kind None) the regularizer is beta_0 * I.
template <class T>
struct InversionProblem {
  const SystemMatrix* A = nullptr;
  const FilterBank<T>* bank = nullptr;
  const Sinogram<T>* y = nullptr;
  const SubbandStack<T>* z = nullptr;
  std::vector<T> betas;
  CgSettings cg;

  void validate() const {
    require(A && bank && y && z, "inversion: missing operand");
    require(static_cast<int>(betas.size()) == bank->channels(),
            "inversion: beta count must match bank channels");
    for (T b : betas) require(b > T(0), "inversion: betas must be positive");
    require(z->channels == bank->channels(), "inversion: stack channels mismatch");
    require(z->rows == A->geom.image_rows && z->cols == A->geom.image_cols,
            "inversion: stack raster mismatch");
    require(y->views == A->geom.n_views && y->bins == A->geom.n_bins,
            "inversion: sinogram mismatch");
    cg.validate();
  }
};

// M v = A^T A v + sum_i beta_i F_i^T F_i v  (symmetric positive definite)
template <class T>
Image<T> apply_normal_operator(const InversionProblem<T>& p, const Image<T>& v) {
  Image<T> out = back_project(*p.A, forward_project(*p.A, v));
  if (p.bank->kind == BankKind::None) {
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += p.betas[0] * v.v[i];
    return out;
  }
  const int L = p.bank->L;
  SubbandStack<T> fv = analyze(*p.bank, v);
  for (int i = 0; i < L; ++i) {
    T* ch = fv.channel(i);
    for (size_t k = 0; k < fv.channel_size(); ++k) ch[k] *= p.betas[i];
    correlate_circular_add(ch, v.rows, v.cols, p.bank->highpass[i], out.v.data());
  }
  return out;
}

// Right-hand side b = A^T y + sum_i beta_i F_i^T z_i. A precomputed A^T y
// can be supplied to avoid the back-projection.
template <class T>
Image<T> inversion_rhs(const InversionProblem<T>& p, const Image<T>* aty = nullptr) {
  Image<T> b = aty ? *aty : back_project(*p.A, *p.y);
  if (p.bank->kind == BankKind::None) {
    const T* z0 = p.z->channel(0);
    for (size_t i = 0; i < b.v.size(); ++i) b.v[i] += p.betas[0] * z0[i];
    return b;
  }
  for (int i = 0; i < p.bank->L; ++i) {
    std::vector<T> scaled(p.z->channel(i), p.z->channel(i) + p.z->channel_size());
    for (T& s : scaled) s *= p.betas[i];
    correlate_circular_add(scaled.data(), b.rows, b.cols, p.bank->highpass[i], b.v.data());
  }
  return b;
}

// Conjugate gradient on M x = rhs. Stops on ||rhs - M x|| <= tol * ||rhs||
// (relative to the right-hand side, so warm starts do not loosen the
// criterion). Non-convergence returns the best iterate seen with
// converged=false; callers treat that as a flagged result, not an error.
template <class T>
std::pair<Image<T>, CgReport> cg_solve(const InversionProblem<T>& p, const Image<T>& rhs,
                                       const Image<T>& x0) {
  CgReport rep;
  const double bnorm = nrm2(rhs.v);
  Image<T> x = x0;
  if (x.rows != rhs.rows || x.cols != rhs.cols) x = Image<T>(rhs.rows, rhs.cols);
  if (bnorm == 0.0) {
    rep.converged = true;
    return {Image<T>(rhs.rows, rhs.cols), rep};
  }

  Image<T> r = apply_normal_operator(p, x);
  for (size_t i = 0; i < r.v.size(); ++i) r.v[i] = rhs.v[i] - r.v[i];
  Image<T> d = r;
  double rr = sq_norm(r.v);

  auto energy = [&]() {  // 0.5 x^T M x - b^T x = -0.5 (b + r)^T x
    double s = 0.0;
    for (size_t i = 0; i < x.v.size(); ++i)
      s += (static_cast<double>(rhs.v[i]) + r.v[i]) * x.v[i];
    return -0.5 * s;
  };

  Image<T> best = x;
  double best_res = std::sqrt(rr);
  if (p.cg.record_history) {
    rep.history.push_back(best_res);
    rep.energy_history.push_back(energy());
  }

  const double stop = p.cg.rel_tolerance * bnorm;
  int it = 0;
  while (std::sqrt(rr) > stop && it < p.cg.max_iters) {
    Image<T> md = apply_normal_operator(p, d);
    double dmd = dot(d.v, md.v);
    if (dmd <= 0.0) break;  // loss of positive definiteness in finite precision
    T alpha = static_cast<T>(rr / dmd);
    for (size_t i = 0; i < x.v.size(); ++i) x.v[i] += alpha * d.v[i];
    for (size_t i = 0; i < r.v.size(); ++i) r.v[i] -= alpha * md.v[i];
    double rr_new = sq_norm(r.v);
    T gamma = static_cast<T>(rr_new / rr);
    for (size_t i = 0; i < d.v.size(); ++i) d.v[i] = r.v[i] + gamma * d.v[i];
    rr = rr_new;
    ++it;
    double res = std::sqrt(rr);
    if (p.cg.record_history) {
      rep.history.push_back(res);
      rep.energy_history.push_back(energy());
    }
    if (res < best_res) {
      best_res = res;
      best = x;
    }
  }

  rep.iterations = it;
  double final_res = std::sqrt(rr);
  if (final_res <= best_res) {
    best = x;
    best_res = final_res;
  }
  rep.rel_residual = best_res / bnorm;
  rep.converged = best_res <= stop;
  return {best, rep};
}

template <class T>
std::pair<Image<T>, CgReport> solve_inversion(const InversionProblem<T>& p, const Image<T>& x0,
                                              const Image<T>* aty = nullptr) {
  p.validate();
  return cg_solve(p, inversion_rhs(p, aty), x0);
}

template <class T>
struct InversionBackward {
  SubbandStack<T> grad_z;
  std::vector<T> grad_beta;
  Image<T> minv_grad_x;  // s = M^{-1} grad_x, shared by both gradients and by
                         // the caller's hyper-parameter residual paths
  CgReport report;
  // d/d kernel entries of the solve (filled when requested): the lag-m
  // derivative through both the operator and the right-hand side.
  std::vector<Kernel3<T>> grad_kernels;
};

// circular cross-correlation at the nine 3x3 lags: out[m] += sum_n u[n] w[n-m]
template <class T>
void accumulate_lag_correlation(const T* u, const T* w, int R, int C, Kernel3<T>& out) {
  for (int a = -1; a <= 1; ++a) {
    for (int b = -1; b <= 1; ++b) {
      double s = 0.0;
      for (int r = 0; r < R; ++r) {
        const int rs = (r - a + R) % R;
        const T* urow = u + static_cast<size_t>(r) * C;
        const T* wrow = w + static_cast<size_t>(rs) * C;
        for (int c = 0; c < C; ++c) s += static_cast<double>(urow[c]) * wrow[(c - b + C) % C];
      }
      out[(a + 1) * 3 + (b + 1)] += static_cast<T>(s);
    }
  }
}

// Backward pass of the solve: with s = M^{-1} grad_x,
//   grad_z_i    = beta_i * F_i s
//   grad_beta_i = <z_i - F_i x_sol, F_i s>
// The gradient through y is not produced (measurements are data leaves), and
// the warm start does not carry gradient because the returned solution is
// start-independent at the solver tolerance.
template <class T>
InversionBackward<T> backward_inversion(const InversionProblem<T>& p, const Image<T>& x_sol,
                                        const Image<T>& grad_x, bool want_kernel_grads = false) {
  p.validate();
  InversionBackward<T> out;
  auto [s, rep] = cg_solve(p, grad_x, Image<T>(grad_x.rows, grad_x.cols));
  out.minv_grad_x = s;
  out.report = rep;

  const int ch = p.bank->channels();
  out.grad_z = SubbandStack<T>(ch, grad_x.rows, grad_x.cols);
  out.grad_beta.assign(ch, T(0));

  if (p.bank->kind == BankKind::None) {
    const T* z0 = p.z->channel(0);
    double gb = 0.0;
    T* gz = out.grad_z.channel(0);
    for (size_t i = 0; i < s.v.size(); ++i) {
      gz[i] = p.betas[0] * s.v[i];
      gb += static_cast<double>(z0[i] - x_sol.v[i]) * s.v[i];
    }
    out.grad_beta[0] = static_cast<T>(gb);
    return out;
  }

  SubbandStack<T> fs = analyze(*p.bank, s);
  SubbandStack<T> fx = analyze(*p.bank, x_sol);
  if (want_kernel_grads) out.grad_kernels.assign(p.bank->L, Kernel3<T>{});
  for (int i = 0; i < p.bank->L; ++i) {
    const T* fsi = fs.channel(i);
    const T* fxi = fx.channel(i);
    const T* zi = p.z->channel(i);
    T* gz = out.grad_z.channel(i);
    double gb = 0.0;
    for (size_t k = 0; k < fs.channel_size(); ++k) {
      gz[k] = p.betas[i] * fsi[k];
      gb += static_cast<double>(zi[k] - fxi[k]) * fsi[k];
    }
    out.grad_beta[i] = static_cast<T>(gb);
    if (want_kernel_grads) {
      // d/df_i[m] [ s^T b - s^T M x ] =
      //   beta_i * ( corr(z_i - F_i x, s)[m] - corr(F_i s, x)[m] )
      std::vector<T> resid(fs.channel_size());
      for (size_t k = 0; k < resid.size(); ++k) resid[k] = zi[k] - fxi[k];
      Kernel3<T> g{};
      accumulate_lag_correlation(resid.data(), s.v.data(), s.rows, s.cols, g);
      Kernel3<T> g2{};
      accumulate_lag_correlation(fsi, x_sol.v.data(), s.rows, s.cols, g2);
      for (int m = 0; m < 9; ++m) out.grad_kernels[i][m] = p.betas[i] * (g[m] - g2[m]);
    }
  }
  return out;
}

}  // namespace ldct
