#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ldct/dataset.hpp"
#include "ldct/io.hpp"
#include "ldct/rng.hpp"

using namespace ldct;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("io");

TEST_CASE("f32r round trip is bit exact over random rasters") {
  Rng rng(1);
  for (int t = 0; t < 500; ++t) {
    int rows = static_cast<int>(rng.uniform_int(1, 40));
    int cols = static_cast<int>(rng.uniform_int(1, 40));
    Image<float> img(rows, cols);
    for (auto& v : img.v) v = static_cast<float>(rng.uniform(-1e6, 1e6));
    write_f32r("/tmp/ldct_io_test.f32r", img);
    Image<float> back = read_f32r_image("/tmp/ldct_io_test.f32r");
    REQUIRE(back.rows == rows);
    REQUIRE(back.cols == cols);
    CHECK(back.v == img.v);
  }
}

TEST_CASE("f32r header layout: magic, width, height, payload") {
  Image<float> img(2, 3);
  img.v = {1.0f, 2.0f, 3.0f, 4.0f, 5.0f, 6.0f};
  write_f32r("/tmp/ldct_io_hdr.f32r", img);
  std::ifstream is("/tmp/ldct_io_hdr.f32r", std::ios::binary);
  char buf[12];
  is.read(buf, 12);
  CHECK(std::string(buf, 4) == "F32R");
  CHECK(static_cast<uint8_t>(buf[4]) == 3);  // width = cols, little endian
  CHECK(static_cast<uint8_t>(buf[8]) == 2);  // height = rows
  float first;
  is.read(reinterpret_cast<char*>(&first), 4);
  CHECK(first == 1.0f);

  CHECK_THROWS(read_f32r("/tmp/does_not_exist.f32r"));
}

TEST_CASE("checkpoint round trip is bit exact over random tensors") {
  Rng rng(2);
  std::vector<NamedTensor> ts;
  for (int t = 0; t < 500; ++t) {
    NamedTensor nt;
    nt.name = "tensor_" + std::to_string(t);
    int rank = static_cast<int>(rng.uniform_int(0, 4));
    size_t n = 1;
    for (int d = 0; d < rank; ++d) {
      uint32_t dim = static_cast<uint32_t>(rng.uniform_int(1, 6));
      nt.dims.push_back(dim);
      n *= dim;
    }
    nt.v.resize(n);
    for (auto& v : nt.v) v = static_cast<float>(rng.uniform(-1e8, 1e8));
    ts.push_back(std::move(nt));
  }
  save_tensors("/tmp/ldct_io_test.ckpt", ts);
  std::vector<NamedTensor> back = load_tensors("/tmp/ldct_io_test.ckpt");
  REQUIRE(back.size() == ts.size());
  for (size_t i = 0; i < ts.size(); ++i) {
    CHECK(back[i].name == ts[i].name);
    CHECK(back[i].dims == ts[i].dims);
    CHECK(back[i].v == ts[i].v);
  }
}

TEST_CASE("param set save/load preserves values, moments and step") {
  ParamSet<float> ps;
  Rng rng(3);
  Param<float>& a = ps.add("layer.weight", {4, 3});
  Param<float>& b = ps.add("layer.stats", {3}, false);
  for (auto& v : a.value) v = static_cast<float>(rng.uniform(-1, 1));
  for (auto& v : a.m) v = static_cast<float>(rng.uniform(-1, 1));
  for (auto& v : a.v) v = static_cast<float>(rng.uniform(0, 1));
  for (auto& v : b.value) v = static_cast<float>(rng.uniform(-1, 1));
  ps.step = 123;
  save_checkpoint("/tmp/ldct_ps.ckpt", ps);

  ParamSet<float> fresh;
  fresh.add("layer.weight", {4, 3});
  fresh.add("layer.stats", {3}, false);
  load_checkpoint("/tmp/ldct_ps.ckpt", fresh);
  CHECK(fresh.step == 123);
  CHECK(fresh.items[0].value == ps.items[0].value);
  CHECK(fresh.items[0].m == ps.items[0].m);
  CHECK(fresh.items[0].v == ps.items[0].v);
  CHECK(fresh.items[1].value == ps.items[1].value);

  ParamSet<float> wrong;
  wrong.add("other.weight", {4, 3});
  CHECK_THROWS(load_checkpoint("/tmp/ldct_ps.ckpt", wrong));
}

TEST_CASE("png export writes a parseable grayscale file") {
  Image<float> img(32, 48);
  for (int r = 0; r < 32; ++r)
    for (int c = 0; c < 48; ++c) img.at(r, c) = 0.02f * (0.5f + 0.5f * (c / 48.0f));
  std::vector<uint8_t> px = window_hu(img);
  write_png_gray8("/tmp/ldct_io_test.png", 32, 48, px.data());
  std::ifstream is("/tmp/ldct_io_test.png", std::ios::binary);
  uint8_t sig[8];
  is.read(reinterpret_cast<char*>(sig), 8);
  CHECK(sig[0] == 137);
  CHECK(sig[1] == 'P');
  CHECK(sig[2] == 'N');
  CHECK(sig[3] == 'G');
  // IHDR length 13 and type
  uint8_t hdr[8];
  is.read(reinterpret_cast<char*>(hdr), 8);
  CHECK(hdr[3] == 13);
  CHECK(std::string(reinterpret_cast<char*>(hdr) + 4, 4) == "IHDR");
}

TEST_CASE("hu windowing maps water to mid gray and clamps") {
  Image<float> img(1, 3);
  img.v = {0.02f, 0.0f, 0.1f};  // water, air, dense
  std::vector<uint8_t> px = window_hu(img);
  // 0 HU sits mid-window; float storage of 0.02 rounds to either side of 127.5
  CHECK(px[0] >= 127);
  CHECK(px[0] <= 128);
  CHECK(px[1] == 0);    // -1000 HU clamps low
  CHECK(px[2] == 255);  // far above 150 HU clamps high
}

TEST_CASE("dataset simulate twice with the same seed is byte-identical") {
  FanBeamGeometry g;
  g.n_views = 30;
  g.n_bins = 32;
  g.image_rows = 16;
  g.image_cols = 16;
  SystemMatrix A = build_system_matrix(g);
  SimulateConfig cfg;
  cfg.count = 4;
  cfg.doses = {1e4};
  cfg.seed = 7;

  for (const char* dir : {"/tmp/ldct_ds_a", "/tmp/ldct_ds_b"}) {
    fs::remove_all(dir);
    write_dataset(dir, A, cfg);
  }
  for (const auto& entry : fs::directory_iterator("/tmp/ldct_ds_a")) {
    std::ifstream a(entry.path(), std::ios::binary);
    std::ifstream b("/tmp/ldct_ds_b/" + entry.path().filename().string(), std::ios::binary);
    REQUIRE(b.good());
    std::string ca((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string cb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(ca == cb);
  }

  LoadedDataset ds = load_dataset("/tmp/ldct_ds_a");
  CHECK(ds.samples.size() == 4);
  CHECK(ds.geom.n_views == 30);
  CHECK(ds.samples[0].dose == 1e4);
  CHECK(ds.samples[0].truth.rows == 16);
  CHECK(ds.samples[0].sino.views == 30);
}

TEST_CASE("mixed-dose datasets draw every dose from the set") {
  FanBeamGeometry g;
  g.n_views = 30;
  g.n_bins = 32;
  g.image_rows = 16;
  g.image_cols = 16;
  SystemMatrix A = build_system_matrix(g);
  SimulateConfig cfg;
  cfg.count = 64;
  cfg.doses = {1e5, 5e4, 1e4};
  cfg.seed = 11;
  fs::remove_all("/tmp/ldct_ds_mix");
  write_dataset("/tmp/ldct_ds_mix", A, cfg);
  LoadedDataset ds = load_dataset("/tmp/ldct_ds_mix");
  int seen[3] = {0, 0, 0};
  for (const auto& s : ds.samples) {
    if (s.dose == 1e5) seen[0]++;
    if (s.dose == 5e4) seen[1]++;
    if (s.dose == 1e4) seen[2]++;
  }
  CHECK(seen[0] > 0);
  CHECK(seen[1] > 0);
  CHECK(seen[2] > 0);
  CHECK(seen[0] + seen[1] + seen[2] == 64);
}

TEST_SUITE_END();
