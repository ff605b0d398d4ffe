#include "ldct/phantom.hpp"

#include <cmath>

#include "ldct/rng.hpp"

namespace ldct {

namespace {

// Classic head phantom ellipses (normalized coordinates, modified contrast
// values), scaled so the summed attenuation peaks at 0.04 mm^-1 in the shell.
const double kSheppScale = 0.04;
const Ellipse kShepp[] = {
    // cx     cy      a       b       angle(deg -> rad below)  value
    {0.0, 0.0, 0.69, 0.92, 0.0, 1.0, true},
    {0.0, -0.0184, 0.6624, 0.874, 0.0, -0.8, true},
    {0.22, 0.0, 0.11, 0.31, -18.0, -0.2, true},
    {-0.22, 0.0, 0.16, 0.41, 18.0, -0.2, true},
    {0.0, 0.35, 0.21, 0.25, 0.0, 0.1, true},
    {0.0, 0.1, 0.046, 0.046, 0.0, 0.1, true},
    {0.0, -0.1, 0.046, 0.046, 0.0, 0.1, true},
    {-0.08, -0.605, 0.046, 0.023, 0.0, 0.1, true},
    {0.0, -0.605, 0.023, 0.023, 0.0, 0.1, true},
    {0.06, -0.605, 0.023, 0.046, 0.0, 0.1, true},
};

void rasterize(Phantom& ph) {
  const int rows = ph.image.rows, cols = ph.image.cols;
  for (const Ellipse& e : ph.parts) {
    const double ca = std::cos(e.angle_rad), sa = std::sin(e.angle_rad);
    for (int r = 0; r < rows; ++r) {
      // normalized coordinates with y up (row 0 at the top of the image)
      double y = 1.0 - 2.0 * (r + 0.5) / rows;
      for (int c = 0; c < cols; ++c) {
        double x = 2.0 * (c + 0.5) / cols - 1.0;
        double dx = x - e.cx, dy = y - e.cy;
        double u = (dx * ca + dy * sa) / e.a;
        double w = (-dx * sa + dy * ca) / e.b;
        if (u * u + w * w <= 1.0) {
          if (e.additive)
            ph.image.at(r, c) += e.value;
          else
            ph.image.at(r, c) = e.value;
        }
      }
    }
  }
  for (double& v : ph.image.v) v = std::min(std::max(v, 0.0), 0.1);
}

}  // namespace

Phantom generate_phantom(const std::string& kind, int rows, int cols, uint64_t seed) {
  require(rows >= 16 && cols >= 16, "generate_phantom: size must be at least 16x16");
  Phantom ph;
  ph.image = Image<double>(rows, cols);
  ph.descriptor = kind;

  if (kind == "shepp-logan") {
    for (Ellipse e : kShepp) {
      e.angle_rad = e.angle_rad * M_PI / 180.0;
      e.value *= kSheppScale;
      ph.parts.push_back(e);
    }
  } else if (kind == "disk") {
    ph.parts.push_back({0, 0, 0.9, 0.9, 0, 0.02, false});
  } else if (kind == "random-ellipses") {
    Rng rng(Rng::mix(seed, 0x70686e746dULL));
    ph.parts.push_back({0, 0, 0.9, 0.9, 0, 0.02, false});  // water disk
    int n = static_cast<int>(rng.uniform_int(3, 8));
    for (int i = 0; i < n; ++i) {
      Ellipse e;
      double rad = rng.uniform(0.0, 0.55);
      double ang = rng.uniform(0.0, 2.0 * M_PI);
      e.cx = rad * std::cos(ang);
      e.cy = rad * std::sin(ang);
      e.a = rng.uniform(0.05, 0.3);
      e.b = rng.uniform(0.05, 0.3);
      e.angle_rad = rng.uniform(0.0, M_PI);
      e.value = rng.uniform(0.005, 0.04);
      ph.parts.push_back(e);
    }
  } else {
    throw std::invalid_argument("generate_phantom: unknown preset '" + kind + "'");
  }

  rasterize(ph);

  if (kind == "random-ellipses") {
    // keep tissue inside the water disk support
    const double rr = 0.9;
    for (int r = 0; r < rows; ++r) {
      double y = 1.0 - 2.0 * (r + 0.5) / rows;
      for (int c = 0; c < cols; ++c) {
        double x = 2.0 * (c + 0.5) / cols - 1.0;
        if (x * x + y * y > rr * rr) ph.image.at(r, c) = 0.0;
      }
    }
  }
  return ph;
}

}  // namespace ldct
