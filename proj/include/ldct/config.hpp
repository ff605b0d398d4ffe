#pragma once

#include <string>
#include <vector>

#include "ldct/geometry.hpp"
#include "ldct/model.hpp"

namespace ldct {

// Fully resolved run configuration. JSON blocks: geometry, noise, model,
// train, paths. Unknown keys in a config file are errors.
struct RunConfig {
  FanBeamGeometry geometry;

  struct Noise {
    std::vector<double> doses = {1e4};
    double electronic_variance = 10.0;
    uint64_t seed = 1;
    int count = 8;
    std::string phantom_kind = "random-ellipses";
  } noise;

  struct Model {
    int stages = 3;
    std::string bank = "bspline-linear";
    std::string hp_mode = "mlp";
    std::string variant = "none";
    int cnn_depth = 5;
    int cnn_channels = 32;
    int mlp_hidden1 = 16;
    int mlp_hidden2 = 16;
    double beta0 = 0.005;
    double mu = 0.8;
    std::string hp_grad_path = "full";  // or "detached"
    double cg_tolerance = 1e-6;
    int cg_max_iters = 100;
  } model;

  struct Train {
    int epochs = 30;
    int batch = 4;
    double lr = 1e-4;
    uint64_t seed = 7;
    int val_count = 0;
    int checkpoint_every = 10;
  } train;

  struct Paths {
    std::string dataset;
    std::string checkpoints;
    std::string output;
  } paths;

  ModelConfig model_config() const;
};

RunConfig load_run_config(const std::string& path);

// key paths are dotted: e.g. "noise.doses" (comma list), "model.stages"
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

std::string run_config_to_json(const RunConfig& cfg);
void echo_config(const RunConfig& cfg, const std::string& out_dir);

}  // namespace ldct
