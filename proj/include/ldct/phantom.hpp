#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ldct/raster.hpp"

namespace ldct {

// Ellipse in normalized coordinates: the image square maps to [-1,1]^2.
// `additive` ellipses add their value onto the raster (Shepp-Logan style);
// painted ellipses overwrite what is underneath.
struct Ellipse {
  double cx = 0, cy = 0;      // center
  double a = 0, b = 0;        // semi-axes
  double angle_rad = 0;
  double value = 0;           // attenuation, mm^-1
  bool additive = false;
};

struct Phantom {
  Image<double> image;  // attenuation in [0, 0.1] mm^-1
  std::vector<Ellipse> parts;
  std::string descriptor;
};

// Presets: "shepp-logan" (classic ellipse set scaled to attenuation units),
// "disk" (uniform water disk, 0.02 mm^-1, radius 0.45 of the image), and
// "random-ellipses" (3..8 tissue ellipses painted on a water disk).
// Deterministic given the seed. Unknown preset names throw.
Phantom generate_phantom(const std::string& kind, int rows, int cols, uint64_t seed);

}  // namespace ldct
