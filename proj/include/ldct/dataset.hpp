#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ldct/geometry.hpp"
#include "ldct/model.hpp"
#include "ldct/noise.hpp"

namespace ldct {

struct SimulateConfig {
  int count = 8;
  std::vector<double> doses = {1e4};  // one entry = fixed dose; several = per-sample draw
  double electronic_variance = 10.0;
  uint64_t seed = 1;
  std::string phantom_kind = "random-ellipses";
};

// Writes <id>_phantom.f32r / <id>_sino.f32r pairs plus manifest.json into the
// directory. Per-sample seeds are split off the base seed by index, so the
// output is byte-identical regardless of generation order.
void write_dataset(const std::string& dir, const SystemMatrix& A, const SimulateConfig& cfg);

struct LoadedDataset {
  std::vector<TrainSample> samples;
  FanBeamGeometry geom;
  double electronic_variance = 10.0;
};

LoadedDataset load_dataset(const std::string& dir);

}  // namespace ldct
