#include "ldct/model.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "ldct/io.hpp"
#include "ldct/metrics.hpp"
#include "ldct/rng.hpp"

namespace ldct {

ModelVariant variant_from_string(const std::string& s) {
  if (s == "none" || s.empty()) return ModelVariant::None;
  if (s == "no-filter") return ModelVariant::NoFilter;
  if (s == "gradient") return ModelVariant::Gradient;
  if (s == "learnable-filters") return ModelVariant::LearnableFilters;
  if (s == "learnable-hp") return ModelVariant::LearnableHp;
  throw std::invalid_argument("unknown model variant: " + s);
}

std::string to_string(ModelVariant v) {
  switch (v) {
    case ModelVariant::NoFilter: return "no-filter";
    case ModelVariant::Gradient: return "gradient";
    case ModelVariant::LearnableFilters: return "learnable-filters";
    case ModelVariant::LearnableHp: return "learnable-hp";
    default: return "none";
  }
}

HpMode hp_mode_from_string(const std::string& s) {
  if (s == "mlp") return HpMode::Mlp;
  if (s == "learnable-constant") return HpMode::LearnableConstant;
  throw std::invalid_argument("unknown hp mode: " + s);
}

std::string to_string(HpMode m) {
  return m == HpMode::Mlp ? "mlp" : "learnable-constant";
}

ModelConfig apply_variant(ModelConfig base, ModelVariant v) {
  switch (v) {
    case ModelVariant::None:
      break;
    case ModelVariant::NoFilter:
      // identity coupling with one learnable weight per stage (MoDL form)
      base.bank_kind = BankKind::None;
      base.hp_mode = HpMode::LearnableConstant;
      break;
    case ModelVariant::Gradient:
      base.bank_kind = BankKind::Gradient;
      base.hp_mode = HpMode::Mlp;
      break;
    case ModelVariant::LearnableFilters:
      base.bank_kind = BankKind::Learnable;
      base.hp_mode = HpMode::Mlp;
      break;
    case ModelVariant::LearnableHp:
      base.bank_kind = BankKind::BsplineLinear;
      base.hp_mode = HpMode::LearnableConstant;
      break;
  }
  return base;
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

namespace {

std::string dname(int s, const std::string& rest) {
  return "d" + std::to_string(s) + "." + rest;
}
std::string pname(int k, const std::string& rest) {
  return "p" + std::to_string(k) + "." + rest;
}

}  // namespace

template <class T>
ModelParams<T> init_model(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  ModelParams<T> model;
  model.cfg = cfg;
  const int K = cfg.stages;
  const int ch = model.coupling_channels();
  const int D = cfg.cnn_depth;
  const int C = cfg.cnn_channels;

  uint64_t tensor_id = 0;
  for (int s = 0; s < K; ++s) {
    const int in0 = s + 1;  // one channel per prior estimate
    for (int l = 0; l < D; ++l) {
      const int cin = (l == 0) ? in0 : C;
      const int cout = (l == D - 1) ? 1 : C;
      Param<T>& w = model.ps.add(dname(s, "conv" + std::to_string(l) + ".weight"),
                                 {cout, cin, 3, 3});
      orthogonal_init(w.value, cout, cin * 9, Rng::mix(seed, ++tensor_id));
      model.ps.add(dname(s, "conv" + std::to_string(l) + ".bias"), {cout});
      if (l > 0 && l < D - 1) {
        Param<T>& sc = model.ps.add(dname(s, "bn" + std::to_string(l) + ".scale"), {cout});
        std::fill(sc.value.begin(), sc.value.end(), T(1));
        model.ps.add(dname(s, "bn" + std::to_string(l) + ".shift"), {cout});
        model.ps.add(dname(s, "bn" + std::to_string(l) + ".rmean"), {cout}, false);
        Param<T>& rv = model.ps.add(dname(s, "bn" + std::to_string(l) + ".rvar"), {cout}, false);
        std::fill(rv.value.begin(), rv.value.end(), T(1));
      }
    }
  }

  if (cfg.hp_mode == HpMode::Mlp) {
    const int dims[4] = {ch + 1, cfg.mlp_hidden1, cfg.mlp_hidden2, ch};
    for (int k = 1; k <= K; ++k) {
      for (int l = 0; l < 3; ++l) {
        Param<T>& w = model.ps.add(pname(k, "fc" + std::to_string(l) + ".weight"),
                                   {dims[l + 1], dims[l]});
        std::fill(w.value.begin(), w.value.end(), T(1));
        model.ps.add(pname(k, "fc" + std::to_string(l) + ".bias"), {dims[l + 1]});
      }
    }
  } else {
    for (int k = 1; k <= K; ++k) {
      Param<T>& b = model.ps.add("beta" + std::to_string(k), {ch});
      std::fill(b.value.begin(), b.value.end(), static_cast<T>(cfg.beta0));
    }
  }

  if (cfg.bank_kind == BankKind::Learnable) {
    FilterBank<T> init = build_filter_bank<T>(BankKind::BsplineLinear);
    for (int i = 0; i < 8; ++i) {
      Param<T>& k = model.ps.add("bank.k" + std::to_string(i), {3, 3});
      std::copy(init.highpass[i].begin(), init.highpass[i].end(), k.value.begin());
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// Hyper-parameter predictor
// ---------------------------------------------------------------------------

template <class T>
std::vector<T> predict_betas(const ModelParams<T>& model, int stage_k,
                             const std::vector<T>& residual_sq, MlpTrace<T>* trace,
                             std::vector<T>* raw_out) {
  const int ch = model.coupling_channels();
  std::vector<T> raw;
  if (model.cfg.hp_mode == HpMode::LearnableConstant) {
    const Param<T>* b = model.ps.find("beta" + std::to_string(stage_k));
    require(b != nullptr, "predict_betas: missing per-stage constants");
    raw = b->value;
  } else {
    require(static_cast<int>(residual_sq.size()) == ch + 1,
            "predict_betas: input must hold L+1 residual square-norms");
    const int dims[4] = {ch + 1, model.cfg.mlp_hidden1, model.cfg.mlp_hidden2, ch};
    std::vector<T> cur = residual_sq;
    if (trace) trace->input = residual_sq;
    for (int l = 0; l < 3; ++l) {
      const Param<T>* w = model.ps.find(pname(stage_k, "fc" + std::to_string(l) + ".weight"));
      const Param<T>* b = model.ps.find(pname(stage_k, "fc" + std::to_string(l) + ".bias"));
      std::vector<T> pre, post;
      dense_forward(cur, w->value, b->value, dims[l + 1], pre);
      relu_forward(pre, post);
      if (trace) {
        trace->pre.push_back(pre);
        trace->post.push_back(post);
      }
      cur = std::move(post);
    }
    raw = std::move(cur);
  }
  if (raw_out) *raw_out = raw;
  std::vector<T> beta = raw;
  const T floor = static_cast<T>(model.cfg.beta_floor);
  for (T& b : beta) b = std::max(b, floor);
  return beta;
}

// Backprop through the predictor; accumulates parameter grads and returns the
// gradient w.r.t. the residual square-norm input.
template <class T>
std::vector<T> mlp_backward(ModelParams<T>& model, int stage_k, const MlpTrace<T>& tr,
                            const std::vector<T>& grad_raw) {
  std::vector<T> g = grad_raw;
  for (int l = 2; l >= 0; --l) {
    std::vector<T> gpre;
    relu_backward(tr.pre[l], g, gpre);
    const std::vector<T>& input = (l == 0) ? tr.input : tr.post[l - 1];
    Param<T>* w = model.ps.find(pname(stage_k, "fc" + std::to_string(l) + ".weight"));
    Param<T>* b = model.ps.find(pname(stage_k, "fc" + std::to_string(l) + ".bias"));
    std::vector<T> gx, gw, gb;
    dense_backward(input, w->value, static_cast<int>(gpre.size()), gpre, gx, gw, gb);
    for (size_t i = 0; i < gw.size(); ++i) w->grad[i] += gw[i];
    for (size_t i = 0; i < gb.size(); ++i) b->grad[i] += gb[i];
    g = std::move(gx);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Denoiser
// ---------------------------------------------------------------------------

template <class T>
std::pair<Image<T>, SubbandStack<T>> denoise_stage(const ModelParams<T>& model,
                                                   const FilterBank<T>& bank, int stage_k,
                                                   const std::vector<const Image<T>*>& history,
                                                   BnMode mode, CnnTrace<T>* trace) {
  require(!history.empty(), "denoise_stage: history must be nonempty");
  require(static_cast<int>(history.size()) == stage_k,
          "denoise_stage: history length must equal the stage index");
  const int D = model.cfg.cnn_depth;
  const int H = history[0]->rows, W = history[0]->cols;
  const std::string d = "d" + std::to_string(stage_k - 1) + ".";

  Tensor4<T> cur(1, stage_k, H, W);
  for (int j = 0; j < stage_k; ++j)
    std::copy(history[j]->v.begin(), history[j]->v.end(), cur.at(0, j));
  if (trace) trace->input = cur;

  for (int l = 0; l < D; ++l) {
    const Param<T>* w = model.ps.find(d + "conv" + std::to_string(l) + ".weight");
    const Param<T>* b = model.ps.find(d + "conv" + std::to_string(l) + ".bias");
    Tensor4<T> kt(w->shape[0], w->shape[1], 3, 3);
    kt.v = w->value;
    Tensor4<T> conv;
    conv2d_forward(cur, kt, b->value, conv);
    if (trace) trace->conv_out.push_back(conv);

    const bool has_bn = (l > 0 && l < D - 1);
    Tensor4<T> t;
    if (has_bn) {
      const Param<T>* sc = model.ps.find(d + "bn" + std::to_string(l) + ".scale");
      const Param<T>* sh = model.ps.find(d + "bn" + std::to_string(l) + ".shift");
      const Param<T>* rm = model.ps.find(d + "bn" + std::to_string(l) + ".rmean");
      const Param<T>* rv = model.ps.find(d + "bn" + std::to_string(l) + ".rvar");
      BnCache<T> cache;
      batchnorm_forward(conv, sc->value, sh->value, mode, rm->value, rv->value, t,
                        mode == BnMode::Training ? &cache : nullptr);
      if (trace) {
        trace->bn_out.push_back(t);
        trace->bn_cache.push_back(std::move(cache));
      }
    } else {
      t = std::move(conv);
      if (trace) {
        trace->bn_out.emplace_back();
        trace->bn_cache.emplace_back();
      }
    }

    if (l < D - 1) {  // the last block is a bare convolution
      for (T& v : t.v) v = v > T(0) ? v : T(0);
    }
    if (trace) trace->act_out.push_back(t);
    cur = std::move(t);
  }

  Image<T> xt(H, W);
  xt.v = cur.v;
  return {xt, analyze(bank, xt)};
}

// Backprop through the denoiser; accumulates parameter grads and returns the
// gradient w.r.t. the stacked history input.
template <class T>
Tensor4<T> cnn_backward(ModelParams<T>& model, int stage_k, const CnnTrace<T>& tr,
                        const Image<T>& grad_xt) {
  const int D = model.cfg.cnn_depth;
  const std::string d = "d" + std::to_string(stage_k - 1) + ".";
  Tensor4<T> g(1, 1, grad_xt.rows, grad_xt.cols);
  g.v = grad_xt.v;

  for (int l = D - 1; l >= 0; --l) {
    const bool has_bn = (l > 0 && l < D - 1);
    if (l < D - 1) {
      const Tensor4<T>& rin = has_bn ? tr.bn_out[l] : tr.conv_out[l];
      for (size_t i = 0; i < g.v.size(); ++i)
        if (rin.v[i] <= T(0)) g.v[i] = T(0);
    }
    if (has_bn) {
      Param<T>* sc = model.ps.find(d + "bn" + std::to_string(l) + ".scale");
      Param<T>* sh = model.ps.find(d + "bn" + std::to_string(l) + ".shift");
      Tensor4<T> gi;
      std::vector<T> gs, gb;
      batchnorm_backward(tr.conv_out[l], sc->value, tr.bn_cache[l], g, gi, gs, gb);
      for (size_t i = 0; i < gs.size(); ++i) sc->grad[i] += gs[i];
      for (size_t i = 0; i < gb.size(); ++i) sh->grad[i] += gb[i];
      g = std::move(gi);
    }
    Param<T>* w = model.ps.find(d + "conv" + std::to_string(l) + ".weight");
    Param<T>* b = model.ps.find(d + "conv" + std::to_string(l) + ".bias");
    Tensor4<T> kt(w->shape[0], w->shape[1], 3, 3);
    kt.v = w->value;
    const Tensor4<T>& lin = (l == 0) ? tr.input : tr.act_out[l - 1];
    Tensor4<T> gin, gk;
    std::vector<T> gb2;
    conv2d_backward(lin, kt, g, gin, gk, gb2);
    for (size_t i = 0; i < gk.v.size(); ++i) w->grad[i] += gk.v[i];
    for (size_t i = 0; i < gb2.size(); ++i) b->grad[i] += gb2[i];
    g = std::move(gin);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

template <class T>
ForwardTrace<T> forward(const ModelParams<T>& model, const SystemMatrix& A, const Sinogram<T>& y,
                        BnMode mode, SampleCache<T>* cache) {
  model.cfg.validate();
  const FilterBank<T> bank = model.bank();
  const int ch = bank.channels();
  const int H = A.geom.image_rows, W = A.geom.image_cols;
  const int K = model.cfg.stages;
  ForwardTrace<T> tr;

  Image<T> aty;
  if (cache && cache->has_aty) {
    aty = cache->aty;
  } else {
    aty = back_project(A, y);
    if (cache) {
      cache->aty = aty;
      cache->has_aty = true;
    }
  }

  // stage 0: data-only inversion with the constant hyper-parameters; its
  // output never depends on the learnable weights (except learnable kernels)
  const bool cacheable_x0 = model.cfg.bank_kind != BankKind::Learnable;
  if (cache && cache->has_x0 && cacheable_x0) {
    tr.x0 = cache->x0;
    tr.cg0 = cache->cg0;
  } else {
    SubbandStack<T> z0(ch, H, W);
    std::vector<T> beta0(ch, static_cast<T>(model.cfg.beta0));
    InversionProblem<T> p0{&A, &bank, &y, &z0, beta0, model.cfg.cg};
    auto [x0, rep0] = solve_inversion(p0, Image<T>(H, W), &aty);
    tr.x0 = std::move(x0);
    tr.cg0 = rep0;
    if (!tr.cg0.converged) tr.cg_failure = true;
    if (cache && cacheable_x0) {
      cache->x0 = tr.x0;
      cache->cg0 = tr.cg0;
      cache->has_x0 = true;
    }
  }

  for (int k = 1; k <= K; ++k) {
    StageTrace<T> st;
    std::vector<const Image<T>*> history;
    history.push_back(&tr.x0);
    for (int j = 1; j < k; ++j) history.push_back(&tr.stages[j - 1].x);

    auto [xt, z] = denoise_stage(model, bank, k, history, mode, &st.cnn);
    st.x_tilde = std::move(xt);
    st.z = std::move(z);

    const Image<T>& xprev = (k == 1) ? tr.x0 : tr.stages[k - 2].x;

    if (model.cfg.hp_mode == HpMode::Mlp) {
      Sinogram<T> ax = forward_project(A, xprev);
      st.r0 = y;
      for (size_t i = 0; i < st.r0.v.size(); ++i) st.r0.v[i] -= ax.v[i];
      SubbandStack<T> fx = analyze(bank, xprev);
      st.r = st.z;
      for (size_t i = 0; i < st.r.v.size(); ++i) st.r.v[i] -= fx.v[i];
      st.residual_sq.resize(ch + 1);
      st.residual_sq[0] = static_cast<T>(sq_norm(st.r0.v));
      for (int i = 0; i < ch; ++i) {
        const T* ri = st.r.channel(i);
        double s = 0.0;
        for (size_t j = 0; j < st.r.channel_size(); ++j) s += static_cast<double>(ri[j]) * ri[j];
        st.residual_sq[i + 1] = static_cast<T>(s);
      }
      st.beta = predict_betas(model, k, st.residual_sq, &st.mlp, &st.beta_raw);
    } else {
      st.beta = predict_betas(model, k, std::vector<T>{}, static_cast<MlpTrace<T>*>(nullptr),
                              &st.beta_raw);
    }

    InversionProblem<T> p{&A, &bank, &y, &st.z, st.beta, model.cfg.cg};
    auto [xk, rep] = solve_inversion(p, xprev, &aty);
    st.x = std::move(xk);
    st.cg = rep;
    if (!rep.converged) tr.cg_failure = true;
    tr.stages.push_back(std::move(st));
  }
  return tr;
}

// ---------------------------------------------------------------------------
// Loss and backward
// ---------------------------------------------------------------------------

template <class T>
double loss(const ForwardTrace<T>& trace, const Image<T>& truth, double mu) {
  const int K = static_cast<int>(trace.stages.size());
  require(K >= 1, "loss: trace has no stages");
  double total = 0.0;
  for (int k = 1; k <= K; ++k) {
    const Image<T>& xk = trace.stages[k - 1].x;
    require(xk.same_shape(truth), "loss: shape mismatch");
    double e = 0.0;
    for (size_t i = 0; i < xk.v.size(); ++i) {
      double d = static_cast<double>(xk.v[i]) - truth.v[i];
      e += d * d;
    }
    total += (k == K ? 1.0 : mu) * e;
  }
  return total;
}

template <class T>
double backward(ModelParams<T>& model, const SystemMatrix& A, const Sinogram<T>& y,
                const ForwardTrace<T>& trace, const Image<T>& truth) {
  const ModelConfig& cfg = model.cfg;
  const FilterBank<T> bank = model.bank();
  const int K = cfg.stages;
  const int ch = bank.channels();
  require(static_cast<int>(trace.stages.size()) == K, "backward: trace is incomplete");
  const int H = truth.rows, W = truth.cols;
  const double lval = loss(trace, truth, cfg.mu);

  const bool learn_kernels = cfg.bank_kind == BankKind::Learnable;
  std::vector<Kernel3<T>> kgrad;
  if (learn_kernels) kgrad.assign(8, Kernel3<T>{});

  std::vector<Image<T>> dx(K + 1, Image<T>(H, W));
  for (int k = 1; k <= K; ++k) {
    const double wk = (k == K) ? 1.0 : cfg.mu;
    const Image<T>& xk = trace.stages[k - 1].x;
    for (size_t i = 0; i < dx[k].v.size(); ++i)
      dx[k].v[i] = static_cast<T>(2.0 * wk * (static_cast<double>(xk.v[i]) - truth.v[i]));
  }

  for (int k = K; k >= 1; --k) {
    const StageTrace<T>& st = trace.stages[k - 1];
    const Image<T>& xprev = (k == 1) ? trace.x0 : trace.stages[k - 2].x;

    InversionProblem<T> p{&A, &bank, &y, &st.z, st.beta, cfg.cg};
    auto bwd = backward_inversion(p, st.x, dx[k], learn_kernels);
    SubbandStack<T> gz = std::move(bwd.grad_z);
    if (learn_kernels)
      for (int i = 0; i < 8; ++i)
        for (int m = 0; m < 9; ++m) kgrad[i][m] += bwd.grad_kernels[i][m];

    // hyper-parameter path
    const T floor = static_cast<T>(cfg.beta_floor);
    if (cfg.hp_mode == HpMode::Mlp) {
      std::vector<T> graw(ch);
      for (int i = 0; i < ch; ++i)
        graw[i] = st.beta_raw[i] > floor ? bwd.grad_beta[i] : T(0);
      std::vector<T> drn = mlp_backward(model, k, st.mlp, graw);
      if (cfg.hp_grad_path == HpGradPath::Full) {
        // ||r0||^2 term: d/dx^{k-1} = -2 A^T r0
        Sinogram<T> sr0 = st.r0;
        const T c0 = T(2) * drn[0];
        for (T& v : sr0.v) v *= c0;
        Image<T> gx0 = back_project(A, sr0);
        for (size_t i = 0; i < dx[k - 1].v.size(); ++i) dx[k - 1].v[i] -= gx0.v[i];
        // ||r_i||^2 terms: d/dz_i = 2 r_i, d/dx^{k-1} = -2 F_i^T r_i
        SubbandStack<T> sr(ch, H, W);
        for (int i = 0; i < ch; ++i) {
          const T ci = T(2) * drn[i + 1];
          const T* ri = st.r.channel(i);
          T* gzi = gz.channel(i);
          T* sri = sr.channel(i);
          for (size_t j = 0; j < sr.channel_size(); ++j) {
            const T t = ci * ri[j];
            gzi[j] += t;
            sri[j] = t;
          }
          if (learn_kernels) {
            // r_i = z_i - F_i x^{k-1}: lag derivative of -<2 drn_i r_i, F_i x>
            Kernel3<T> c{};
            accumulate_lag_correlation(ri, xprev.v.data(), H, W, c);
            for (int m = 0; m < 9; ++m) kgrad[i][m] -= ci * c[m];
          }
        }
        Image<T> gxp = adjoint(bank, sr);
        for (size_t i = 0; i < dx[k - 1].v.size(); ++i) dx[k - 1].v[i] -= gxp.v[i];
      }
    } else {
      Param<T>* bp = model.ps.find("beta" + std::to_string(k));
      for (int i = 0; i < ch; ++i)
        if (bp->value[i] > floor) bp->grad[i] += bwd.grad_beta[i];
    }

    // coupling path z -> x_tilde -> CNN
    if (learn_kernels) {
      for (int i = 0; i < 8; ++i) {
        Kernel3<T> c{};
        accumulate_lag_correlation(gz.channel(i), st.x_tilde.v.data(), H, W, c);
        for (int m = 0; m < 9; ++m) kgrad[i][m] += c[m];
      }
    }
    Image<T> gxt = adjoint(bank, gz);
    Tensor4<T> gin = cnn_backward(model, k, st.cnn, gxt);
    for (int j = 0; j < k; ++j) {
      const T* src = gin.at(0, j);
      for (size_t i = 0; i < dx[j].v.size(); ++i) dx[j].v[i] += src[i];
    }
  }

  if (learn_kernels) {
    // the stage-0 solve also depends on the kernels through its regularizer
    bool any = false;
    for (T v : dx[0].v)
      if (v != T(0)) {
        any = true;
        break;
      }
    if (any) {
      SubbandStack<T> z0(ch, H, W);
      std::vector<T> beta0(ch, static_cast<T>(cfg.beta0));
      InversionProblem<T> p0{&A, &bank, &y, &z0, beta0, cfg.cg};
      auto bwd0 = backward_inversion(p0, trace.x0, dx[0], true);
      for (int i = 0; i < 8; ++i)
        for (int m = 0; m < 9; ++m) kgrad[i][m] += bwd0.grad_kernels[i][m];
    }
    for (int i = 0; i < 8; ++i) {
      Param<T>* kp = model.ps.find("bank.k" + std::to_string(i));
      for (int m = 0; m < 9; ++m) kp->grad[m] += kgrad[i][m];
    }
  }
  return lval;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

void apply_bn_running_updates(ModelParams<float>& model, const ForwardTrace<float>& tr) {
  const int D = model.cfg.cnn_depth;
  for (int k = 1; k <= static_cast<int>(tr.stages.size()); ++k) {
    const CnnTrace<float>& ct = tr.stages[k - 1].cnn;
    const std::string d = "d" + std::to_string(k - 1) + ".";
    for (int l = 1; l < D - 1; ++l) {
      if (ct.bn_cache[l].mean.empty()) continue;
      Param<float>* rm = model.ps.find(d + "bn" + std::to_string(l) + ".rmean");
      Param<float>* rv = model.ps.find(d + "bn" + std::to_string(l) + ".rvar");
      batchnorm_update_running(ct.bn_cache[l], rm->value, rv->value);
    }
  }
}

}  // namespace

TrainReport train(ModelParams<float>& model, const SystemMatrix& A,
                  const std::vector<TrainSample>& data, const TrainConfig& cfg) {
  require(!data.empty(), "train: dataset is empty");
  model.cfg.validate();
  TrainReport report;

  const int n = static_cast<int>(data.size());
  const int nval = std::min(cfg.val_count, n - 1);
  const int ntrain = n - nval;
  std::vector<SampleCache<float>> caches(n);

  std::ofstream csv;
  if (!cfg.csv_path.empty()) {
    csv.open(cfg.csv_path);
    csv << "epoch,loss,val_psnr,wall_sec\n";
  }
  const auto t_start = std::chrono::steady_clock::now();

  std::vector<int> order(ntrain);
  for (int i = 0; i < ntrain; ++i) order[i] = i;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng rng(Rng::mix(cfg.seed, static_cast<uint64_t>(epoch)));
    for (int i = ntrain - 1; i > 0; --i)
      std::swap(order[i], order[rng.uniform_int(0, i)]);

    double epoch_loss = 0.0;
    int counted = 0;
    for (int start = 0; start < ntrain; start += cfg.batch) {
      const int bs = std::min(cfg.batch, ntrain - start);
      std::vector<ForwardTrace<float>> traces(bs);
      std::vector<double> losses(bs, 0.0);
      // per-sample gradients into private model clones; the reduction below
      // runs in sample order so results do not depend on the thread count
      std::vector<ModelParams<float>> clones(bs, model);
#pragma omp parallel for schedule(dynamic, 1)
      for (int bi = 0; bi < bs; ++bi) {
        const TrainSample& s = data[order[start + bi]];
        clones[bi].ps.zero_grads();
        traces[bi] =
            forward(clones[bi], A, s.sino, BnMode::Training, &caches[order[start + bi]]);
        losses[bi] = backward(clones[bi], A, s.sino, traces[bi], s.truth);
      }
      std::string bad_ids;
      for (int bi = 0; bi < bs; ++bi) {
        if (!std::isfinite(losses[bi])) bad_ids += data[order[start + bi]].id + " ";
        epoch_loss += losses[bi];
        ++counted;
      }
      if (!bad_ids.empty()) {
        report.aborted = true;
        report.abort_reason = "non-finite loss on sample(s): " + bad_ids;
        return report;
      }
      model.ps.zero_grads();
      const float inv = 1.0f / static_cast<float>(bs);
      for (size_t pi = 0; pi < model.ps.items.size(); ++pi) {
        auto& dst = model.ps.items[pi].grad;
        for (int bi = 0; bi < bs; ++bi) {
          const auto& src = clones[bi].ps.items[pi].grad;
          for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        }
        for (auto& g : dst) g *= inv;
      }
      for (int bi = 0; bi < bs; ++bi) apply_bn_running_updates(model, traces[bi]);
      adam_step(model.ps, cfg.adam);
    }
    epoch_loss /= std::max(counted, 1);

    double val_psnr = 0.0;
    if (nval > 0) {
      std::vector<double> vp(nval, 0.0);
#pragma omp parallel for schedule(dynamic, 1)
      for (int vi = ntrain; vi < n; ++vi) {
        const TrainSample& s = data[vi];
        ForwardTrace<float> tr = forward(model, A, s.sino, BnMode::Inference, &caches[vi]);
        vp[vi - ntrain] = psnr(cast_image<double>(s.truth), cast_image<double>(tr.output()));
      }
      for (double v : vp) val_psnr += v;
      val_psnr /= nval;
    }

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    report.epochs.push_back({epoch, epoch_loss, val_psnr, wall});
    if (csv.is_open()) {
      csv << epoch << "," << epoch_loss << "," << val_psnr << "," << wall << "\n";
      csv.flush();
    }
    if (cfg.verbose)
      std::fprintf(stderr, "epoch %3d  loss %.6e  val_psnr %.3f  wall %.1fs\n", epoch,
                   epoch_loss, val_psnr, wall);

    if (!cfg.checkpoint_dir.empty() &&
        (epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs)) {
      std::filesystem::create_directories(cfg.checkpoint_dir);
      char name[64];
      std::snprintf(name, sizeof(name), "epoch_%04d.ckpt", epoch);
      save_checkpoint(cfg.checkpoint_dir + "/" + name, model.ps);
      save_checkpoint(cfg.checkpoint_dir + "/final.ckpt", model.ps);
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Explicit instantiations (float for training, double for verification).
// ---------------------------------------------------------------------------

template ModelParams<float> init_model<float>(const ModelConfig&, uint64_t);
template ModelParams<double> init_model<double>(const ModelConfig&, uint64_t);

template std::vector<float> predict_betas<float>(const ModelParams<float>&, int,
                                                 const std::vector<float>&, MlpTrace<float>*,
                                                 std::vector<float>*);
template std::vector<double> predict_betas<double>(const ModelParams<double>&, int,
                                                   const std::vector<double>&, MlpTrace<double>*,
                                                   std::vector<double>*);

template std::pair<Image<float>, SubbandStack<float>> denoise_stage<float>(
    const ModelParams<float>&, const FilterBank<float>&, int,
    const std::vector<const Image<float>*>&, BnMode, CnnTrace<float>*);
template std::pair<Image<double>, SubbandStack<double>> denoise_stage<double>(
    const ModelParams<double>&, const FilterBank<double>&, int,
    const std::vector<const Image<double>*>&, BnMode, CnnTrace<double>*);

template ForwardTrace<float> forward<float>(const ModelParams<float>&, const SystemMatrix&,
                                            const Sinogram<float>&, BnMode, SampleCache<float>*);
template ForwardTrace<double> forward<double>(const ModelParams<double>&, const SystemMatrix&,
                                              const Sinogram<double>&, BnMode,
                                              SampleCache<double>*);

template double loss<float>(const ForwardTrace<float>&, const Image<float>&, double);
template double loss<double>(const ForwardTrace<double>&, const Image<double>&, double);

template double backward<float>(ModelParams<float>&, const SystemMatrix&, const Sinogram<float>&,
                                const ForwardTrace<float>&, const Image<float>&);
template double backward<double>(ModelParams<double>&, const SystemMatrix&,
                                 const Sinogram<double>&, const ForwardTrace<double>&,
                                 const Image<double>&);

}  // namespace ldct
