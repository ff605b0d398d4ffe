#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ldct/nn.hpp"
#include "ldct/raster.hpp"

namespace ldct {

// ---------------------------------------------------------------------------
// .f32r raster: magic "F32R", u32 LE width, u32 LE height, then width*height
// IEEE-754 LE 32-bit floats, row-major.
// ---------------------------------------------------------------------------

struct RasterF32 {
  uint32_t width = 0, height = 0;  // width = cols, height = rows
  std::vector<float> v;
};

void write_f32r(const std::string& path, uint32_t width, uint32_t height, const float* data);
RasterF32 read_f32r(const std::string& path);

template <class T>
void write_f32r(const std::string& path, const Image<T>& img) {
  std::vector<float> tmp = cast_vec<float>(img.v);
  write_f32r(path, static_cast<uint32_t>(img.cols), static_cast<uint32_t>(img.rows), tmp.data());
}

template <class T>
void write_f32r(const std::string& path, const Sinogram<T>& s) {
  std::vector<float> tmp = cast_vec<float>(s.v);
  write_f32r(path, static_cast<uint32_t>(s.bins), static_cast<uint32_t>(s.views), tmp.data());
}

Image<float> read_f32r_image(const std::string& path);
Sinogram<float> read_f32r_sinogram(const std::string& path);

// ---------------------------------------------------------------------------
// Checkpoint: magic "AHPC", u32 version (=1), u32 tensor count; per tensor
// u16 name length + UTF-8 name, u8 rank, rank x u32 dims, then LE f32 payload.
// Adam moments are stored under "<name>.adam_m" / "<name>.adam_v" and the
// shared step counter under "adam.step".
// ---------------------------------------------------------------------------

void save_checkpoint(const std::string& path, const ParamSet<float>& ps);
void load_checkpoint(const std::string& path, ParamSet<float>& ps);

// Raw tensor view of a checkpoint (used by round-trip tests and inspection).
struct NamedTensor {
  std::string name;
  std::vector<uint32_t> dims;
  std::vector<float> v;
};
void save_tensors(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_tensors(const std::string& path);

// ---------------------------------------------------------------------------
// 8-bit grayscale PNG (zlib-compressed), for human inspection only.
// ---------------------------------------------------------------------------

void write_png_gray8(const std::string& path, int rows, int cols, const uint8_t* pixels);

// Attenuation -> display window. HU = 1000 (mu - mu_water)/mu_water with
// mu_water = 0.02 mm^-1, clamped to the [-150, 150] HU window.
std::vector<uint8_t> window_hu(const Image<float>& img, double hu_lo = -150.0,
                               double hu_hi = 150.0, double mu_water = 0.02);

}  // namespace ldct
