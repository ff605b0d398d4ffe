#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ldct/framelet.hpp"
#include "ldct/geometry.hpp"
#include "ldct/inversion.hpp"
#include "ldct/nn.hpp"
#include "ldct/raster.hpp"

namespace ldct {

enum class HpMode { Mlp, LearnableConstant };
enum class HpGradPath {
  Full,     // propagate the hyper-parameter dependence on x^{k-1} and z^k
            // through the residual norms (mathematically complete)
  Detached  // treat the residual norms as constants in the backward pass
};
enum class ModelVariant { None, NoFilter, Gradient, LearnableFilters, LearnableHp };

ModelVariant variant_from_string(const std::string& s);
std::string to_string(ModelVariant v);
HpMode hp_mode_from_string(const std::string& s);
std::string to_string(HpMode m);

struct ModelConfig {
  int stages = 3;  // K
  BankKind bank_kind = BankKind::BsplineLinear;
  HpMode hp_mode = HpMode::Mlp;
  int cnn_depth = 17;
  int cnn_channels = 64;
  int mlp_hidden1 = 16;
  int mlp_hidden2 = 16;
  double beta0 = 0.005;    // stage-0 constant hyper-parameter
  double mu = 0.8;         // intermediate loss weight
  double beta_floor = 1e-6;
  HpGradPath hp_grad_path = HpGradPath::Full;
  CgSettings cg{100, 1e-6, false};

  void validate() const {
    require(stages >= 1, "model: stages must be >= 1");
    require(cnn_depth >= 2, "model: cnn_depth must be >= 2");
    require(cnn_channels >= 1, "model: cnn_channels must be >= 1");
    require(beta0 > 0.0, "model: beta0 must be positive");
    require(mu >= 0.0, "model: mu must be >= 0");
    cg.validate();
  }
};

// Switches the configuration to one of the ablation variants.
ModelConfig apply_variant(ModelConfig base, ModelVariant v);

// ---------------------------------------------------------------------------
// Parameters. All tensors live in one ParamSet so the optimizer, checkpoints
// and gradient checks can treat the model uniformly; names are stable:
//   d{s}.conv{l}.weight|bias          denoiser s (used at stage s+1)
//   d{s}.bn{l}.scale|shift|rmean|rvar middle-layer batch norm
//   p{k}.fc{l}.weight|bias            hyper-parameter MLP of stage k (1-based)
//   beta{k}                           per-stage constants (learnable-hp mode)
//   bank.k{i}                         learnable filter kernels
// ---------------------------------------------------------------------------
template <class T>
struct ModelParams {
  ModelConfig cfg;
  ParamSet<T> ps;

  int coupling_channels() const {
    return cfg.bank_kind == BankKind::None ? 1 : (cfg.bank_kind == BankKind::Gradient ? 2 : 8);
  }

  // The bank currently in effect (reads learnable kernels out of the params).
  FilterBank<T> bank() const {
    if (cfg.bank_kind != BankKind::Learnable)
      return build_filter_bank<T>(cfg.bank_kind);
    std::vector<Kernel3<T>> ks;
    for (int i = 0; i < 8; ++i) {
      const Param<T>* p = ps.find("bank.k" + std::to_string(i));
      Kernel3<T> k{};
      for (int m = 0; m < 9; ++m) k[m] = p->value[m];
      ks.push_back(k);
    }
    return build_filter_bank<T>(BankKind::Learnable, &ks);
  }
};

template <class T>
ModelParams<T> init_model(const ModelConfig& cfg, uint64_t seed);

// ---------------------------------------------------------------------------
// Forward trace: everything the backward pass needs, so no forward CG solve
// is ever repeated.
// ---------------------------------------------------------------------------

template <class T>
struct CnnTrace {
  Tensor4<T> input;
  std::vector<Tensor4<T>> conv_out;  // pre-activation per layer
  std::vector<Tensor4<T>> bn_out;    // after BN (middle layers only; else unused)
  std::vector<Tensor4<T>> act_out;   // layer outputs (input to the next layer)
  std::vector<BnCache<T>> bn_cache;
};

template <class T>
struct MlpTrace {
  std::vector<T> input;
  std::vector<std::vector<T>> pre;   // dense outputs per layer
  std::vector<std::vector<T>> post;  // after ReLU
};

template <class T>
struct StageTrace {
  Image<T> x;                  // x^k
  Image<T> x_tilde;            // denoiser output
  SubbandStack<T> z;           // coupling estimate fed to the inversion
  Sinogram<T> r0;              // y - A x^{k-1}            (MLP mode)
  SubbandStack<T> r;           // z - F x^{k-1}            (MLP mode)
  std::vector<T> residual_sq;  // [||r0||^2, ||r_i||^2...] (MLP mode)
  std::vector<T> beta;         // floored values used by the inversion
  std::vector<T> beta_raw;     // predictor output before the floor
  CgReport cg;
  CnnTrace<T> cnn;
  MlpTrace<T> mlp;
};

template <class T>
struct ForwardTrace {
  Image<T> x0;
  CgReport cg0;
  std::vector<StageTrace<T>> stages;
  bool cg_failure = false;

  const Image<T>& output() const { return stages.empty() ? x0 : stages.back().x; }
};

// Per-sample quantities that stay fixed across epochs (A^T y, and the
// weight-independent stage-0 solution whenever the bank is not learnable).
template <class T>
struct SampleCache {
  Image<T> aty;
  Image<T> x0;
  CgReport cg0;
  bool has_aty = false;
  bool has_x0 = false;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// 3-layer MLP on the stacked residual square-norms; returns the floored
// hyper-parameters. In learnable-constant mode the stored per-stage values
// are returned directly (input must still be sized L+1 when provided).
template <class T>
std::vector<T> predict_betas(const ModelParams<T>& model, int stage_k,
                             const std::vector<T>& residual_sq, MlpTrace<T>* trace = nullptr,
                             std::vector<T>* raw_out = nullptr);

// Runs the stage denoiser on the history [x^0..x^{k-1}] and couples the
// result through the bank: returns x_tilde and z = analyze(bank, x_tilde).
template <class T>
std::pair<Image<T>, SubbandStack<T>> denoise_stage(const ModelParams<T>& model,
                                                   const FilterBank<T>& bank, int stage_k,
                                                   const std::vector<const Image<T>*>& history,
                                                   BnMode mode, CnnTrace<T>* trace = nullptr);

template <class T>
ForwardTrace<T> forward(const ModelParams<T>& model, const SystemMatrix& A, const Sinogram<T>& y,
                        BnMode mode = BnMode::Training, SampleCache<T>* cache = nullptr);

// || x^K - truth ||^2 + sum_{k=1}^{K-1} mu * || x^k - truth ||^2
template <class T>
double loss(const ForwardTrace<T>& trace, const Image<T>& truth, double mu);

// Reverse-mode gradients of loss() accumulated (+=) into model.ps grads.
// Returns the loss value of the trace.
template <class T>
double backward(ModelParams<T>& model, const SystemMatrix& A, const Sinogram<T>& y,
                const ForwardTrace<T>& trace, const Image<T>& truth);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainSample {
  Image<float> truth;
  Sinogram<float> sino;
  double dose = 0.0;
  std::string id;
};

struct TrainConfig {
  int epochs = 30;
  int batch = 4;
  AdamConfig adam;
  uint64_t seed = 7;
  int val_count = 0;             // taken from the end of the dataset
  std::string csv_path;          // per-epoch report (empty = none)
  std::string checkpoint_dir;    // empty = no checkpoints
  int checkpoint_every = 10;
  bool verbose = false;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_psnr = 0.0;
  double wall_sec = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  bool aborted = false;
  std::string abort_reason;
};

TrainReport train(ModelParams<float>& model, const SystemMatrix& A,
                  const std::vector<TrainSample>& data, const TrainConfig& cfg);

}  // namespace ldct
