#include "ldct/io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace ldct {

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                  static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u16(std::ostream& os, uint16_t v) {
  uint8_t b[2] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

uint32_t get_u32(std::istream& is) {
  uint8_t b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint16_t get_u16(std::istream& is) {
  uint8_t b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

void put_f32_le(std::ostream& os, const float* data, size_t n) {
  // this code targets little-endian hosts; the formats are LE on disk
  os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * 4));
}

void get_f32_le(std::istream& is, float* data, size_t n) {
  is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * 4));
}

}  // namespace

// ---------------------------------------------------------------------------
// .f32r
// ---------------------------------------------------------------------------

void write_f32r(const std::string& path, uint32_t width, uint32_t height, const float* data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write("F32R", 4);
  put_u32(os, width);
  put_u32(os, height);
  put_f32_le(os, data, static_cast<size_t>(width) * height);
  if (!os) throw std::runtime_error("write failed: " + path);
}

RasterF32 read_f32r(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "F32R", 4) != 0)
    throw std::runtime_error("not an .f32r file: " + path);
  RasterF32 r;
  r.width = get_u32(is);
  r.height = get_u32(is);
  r.v.resize(static_cast<size_t>(r.width) * r.height);
  get_f32_le(is, r.v.data(), r.v.size());
  if (!is) throw std::runtime_error("truncated .f32r file: " + path);
  return r;
}

Image<float> read_f32r_image(const std::string& path) {
  RasterF32 r = read_f32r(path);
  Image<float> img(static_cast<int>(r.height), static_cast<int>(r.width));
  img.v = std::move(r.v);
  return img;
}

Sinogram<float> read_f32r_sinogram(const std::string& path) {
  RasterF32 r = read_f32r(path);
  Sinogram<float> s(static_cast<int>(r.height), static_cast<int>(r.width));
  s.v = std::move(r.v);
  return s;
}

// ---------------------------------------------------------------------------
// checkpoint
// ---------------------------------------------------------------------------

void save_tensors(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write("AHPC", 4);
  put_u32(os, 1);  // version
  put_u32(os, static_cast<uint32_t>(tensors.size()));
  for (const NamedTensor& t : tensors) {
    require(t.name.size() < 65536, "checkpoint: tensor name too long");
    put_u16(os, static_cast<uint16_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    os.put(static_cast<char>(t.dims.size()));
    size_t n = 1;
    for (uint32_t d : t.dims) {
      put_u32(os, d);
      n *= d;
    }
    require(n == t.v.size(), "checkpoint: dim/payload mismatch for " + t.name);
    put_f32_le(os, t.v.data(), t.v.size());
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

std::vector<NamedTensor> load_tensors(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "AHPC", 4) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  uint32_t version = get_u32(is);
  if (version != 1) throw std::runtime_error("unsupported checkpoint version");
  uint32_t count = get_u32(is);
  std::vector<NamedTensor> out(count);
  for (uint32_t i = 0; i < count; ++i) {
    uint16_t len = get_u16(is);
    out[i].name.resize(len);
    is.read(out[i].name.data(), len);
    int rank = is.get();
    if (rank < 0 || rank > 8) throw std::runtime_error("corrupt checkpoint tensor rank");
    out[i].dims.resize(rank);
    size_t n = 1;
    for (int d = 0; d < rank; ++d) {
      out[i].dims[d] = get_u32(is);
      n *= out[i].dims[d];
    }
    out[i].v.resize(n);
    get_f32_le(is, out[i].v.data(), n);
    if (!is) throw std::runtime_error("truncated checkpoint: " + path);
  }
  return out;
}

void save_checkpoint(const std::string& path, const ParamSet<float>& ps) {
  std::vector<NamedTensor> ts;
  auto dims_of = [](const Param<float>& p) {
    std::vector<uint32_t> d;
    for (int s : p.shape) d.push_back(static_cast<uint32_t>(s));
    return d;
  };
  for (const Param<float>& p : ps.items) {
    ts.push_back({p.name, dims_of(p), p.value});
    if (p.trainable) {
      ts.push_back({p.name + ".adam_m", dims_of(p), p.m});
      ts.push_back({p.name + ".adam_v", dims_of(p), p.v});
    }
  }
  ts.push_back({"adam.step", {}, {static_cast<float>(ps.step)}});
  save_tensors(path, ts);
}

void load_checkpoint(const std::string& path, ParamSet<float>& ps) {
  std::vector<NamedTensor> ts = load_tensors(path);
  for (const NamedTensor& t : ts) {
    if (t.name == "adam.step") {
      ps.step = static_cast<int64_t>(t.v.at(0));
      continue;
    }
    std::string base = t.name;
    int slot = 0;  // 0 value, 1 m, 2 v
    if (base.size() > 7 && base.substr(base.size() - 7) == ".adam_m") {
      base = base.substr(0, base.size() - 7);
      slot = 1;
    } else if (base.size() > 7 && base.substr(base.size() - 7) == ".adam_v") {
      base = base.substr(0, base.size() - 7);
      slot = 2;
    }
    Param<float>* p = ps.find(base);
    if (!p) throw std::runtime_error("checkpoint tensor has no matching parameter: " + t.name);
    std::vector<float>& dst = slot == 0 ? p->value : (slot == 1 ? p->m : p->v);
    if (dst.size() != t.v.size())
      throw std::runtime_error("checkpoint tensor size mismatch: " + t.name);
    dst = t.v;
  }
}

// ---------------------------------------------------------------------------
// PNG
// ---------------------------------------------------------------------------

namespace {

uint32_t crc32_of(const uint8_t* data, size_t n, uint32_t seed = 0) {
  return static_cast<uint32_t>(::crc32(seed, data, static_cast<uInt>(n)));
}

void put_chunk(std::ostream& os, const char type[4], const std::vector<uint8_t>& payload) {
  uint32_t len = static_cast<uint32_t>(payload.size());
  uint8_t lb[4] = {static_cast<uint8_t>(len >> 24), static_cast<uint8_t>(len >> 16),
                   static_cast<uint8_t>(len >> 8), static_cast<uint8_t>(len)};
  os.write(reinterpret_cast<const char*>(lb), 4);
  os.write(type, 4);
  if (!payload.empty()) os.write(reinterpret_cast<const char*>(payload.data()), payload.size());
  uint32_t crc = crc32_of(reinterpret_cast<const uint8_t*>(type), 4);
  if (!payload.empty()) crc = crc32_of(payload.data(), payload.size(), crc);
  uint8_t cb[4] = {static_cast<uint8_t>(crc >> 24), static_cast<uint8_t>(crc >> 16),
                   static_cast<uint8_t>(crc >> 8), static_cast<uint8_t>(crc)};
  os.write(reinterpret_cast<const char*>(cb), 4);
}

}  // namespace

void write_png_gray8(const std::string& path, int rows, int cols, const uint8_t* pixels) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  static const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  os.write(reinterpret_cast<const char*>(sig), 8);

  std::vector<uint8_t> ihdr(13);
  uint32_t w = static_cast<uint32_t>(cols), h = static_cast<uint32_t>(rows);
  ihdr[0] = w >> 24; ihdr[1] = w >> 16; ihdr[2] = w >> 8; ihdr[3] = w;
  ihdr[4] = h >> 24; ihdr[5] = h >> 16; ihdr[6] = h >> 8; ihdr[7] = h;
  ihdr[8] = 8;   // bit depth
  ihdr[9] = 0;   // grayscale
  ihdr[10] = ihdr[11] = ihdr[12] = 0;
  put_chunk(os, "IHDR", ihdr);

  // raw scanlines with filter byte 0
  std::vector<uint8_t> raw(static_cast<size_t>(rows) * (cols + 1));
  for (int r = 0; r < rows; ++r) {
    raw[static_cast<size_t>(r) * (cols + 1)] = 0;
    std::memcpy(&raw[static_cast<size_t>(r) * (cols + 1) + 1],
                pixels + static_cast<size_t>(r) * cols, cols);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> comp(bound);
  if (compress2(comp.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
    throw std::runtime_error("png: zlib compression failed");
  comp.resize(bound);
  put_chunk(os, "IDAT", comp);
  put_chunk(os, "IEND", {});
  if (!os) throw std::runtime_error("write failed: " + path);
}

std::vector<uint8_t> window_hu(const Image<float>& img, double hu_lo, double hu_hi,
                               double mu_water) {
  std::vector<uint8_t> out(img.size());
  for (size_t i = 0; i < img.v.size(); ++i) {
    double hu = 1000.0 * (static_cast<double>(img.v[i]) - mu_water) / mu_water;
    double t = (hu - hu_lo) / (hu_hi - hu_lo);
    t = std::min(std::max(t, 0.0), 1.0);
    out[i] = static_cast<uint8_t>(std::lround(t * 255.0));
  }
  return out;
}

}  // namespace ldct
