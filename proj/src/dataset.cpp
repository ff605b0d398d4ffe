#include "ldct/dataset.hpp"

#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "ldct/io.hpp"
#include "ldct/phantom.hpp"
#include "ldct/rng.hpp"

namespace ldct {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

ordered_json geometry_to_json(const FanBeamGeometry& g) {
  ordered_json j;
  j["n_views"] = g.n_views;
  j["n_bins"] = g.n_bins;
  j["image_rows"] = g.image_rows;
  j["image_cols"] = g.image_cols;
  j["pixel_size_mm"] = g.pixel_size_mm;
  j["detector_pixel_mm"] = g.detector_pixel_mm;
  j["source_to_detector_mm"] = g.source_to_detector_mm;
  j["source_to_isocenter_mm"] = g.source_to_isocenter_mm;
  j["angular_span_rad"] = g.angular_span_rad;
  return j;
}

FanBeamGeometry geometry_from_json(const ordered_json& j) {
  FanBeamGeometry g;
  g.n_views = j.at("n_views").get<int>();
  g.n_bins = j.at("n_bins").get<int>();
  g.image_rows = j.at("image_rows").get<int>();
  g.image_cols = j.at("image_cols").get<int>();
  g.pixel_size_mm = j.at("pixel_size_mm").get<double>();
  g.detector_pixel_mm = j.at("detector_pixel_mm").get<double>();
  g.source_to_detector_mm = j.at("source_to_detector_mm").get<double>();
  g.source_to_isocenter_mm = j.at("source_to_isocenter_mm").get<double>();
  g.angular_span_rad = j.at("angular_span_rad").get<double>();
  return g;
}

std::string sample_id(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d", i);
  return buf;
}

}  // namespace

void write_dataset(const std::string& dir, const SystemMatrix& A, const SimulateConfig& cfg) {
  require(cfg.count >= 1, "simulate: count must be >= 1");
  require(!cfg.doses.empty(), "simulate: at least one dose level required");
  for (double d : cfg.doses) require(d > 0.0, "simulate: dose must be positive");
  fs::create_directories(dir);

  ordered_json manifest;
  manifest["geometry"] = geometry_to_json(A.geom);
  manifest["electronic_variance"] = cfg.electronic_variance;
  manifest["phantom_kind"] = cfg.phantom_kind;
  manifest["items"] = ordered_json::array();

  for (int i = 0; i < cfg.count; ++i) {
    const uint64_t item_seed = Rng::mix(cfg.seed, static_cast<uint64_t>(i));
    double dose = cfg.doses[0];
    if (cfg.doses.size() > 1) {
      Rng pick(Rng::mix(item_seed, 0xd05eULL));
      dose = cfg.doses[pick.uniform_int(0, static_cast<int64_t>(cfg.doses.size()) - 1)];
    }
    Phantom ph = generate_phantom(cfg.phantom_kind, A.geom.image_rows, A.geom.image_cols,
                                  item_seed);
    NoiseModel nm{dose, cfg.electronic_variance, Rng::mix(item_seed, 0xc0117ULL)};
    RawCounts counts = simulate_counts(A, ph.image, nm);
    Sinogram<double> sino = counts_to_sinogram(counts, nm);

    const std::string id = sample_id(i);
    write_f32r(dir + "/" + id + "_phantom.f32r", ph.image);
    write_f32r(dir + "/" + id + "_sino.f32r", sino);
    ordered_json item;
    item["id"] = id;
    item["dose"] = dose;
    item["seed"] = item_seed;
    manifest["items"].push_back(item);
  }

  std::ofstream os(dir + "/manifest.json");
  os << manifest.dump(2) << "\n";
  if (!os) throw std::runtime_error("cannot write manifest: " + dir);
}

LoadedDataset load_dataset(const std::string& dir) {
  std::ifstream is(dir + "/manifest.json");
  if (!is) throw std::runtime_error("cannot open manifest: " + dir + "/manifest.json");
  ordered_json manifest = ordered_json::parse(is);

  LoadedDataset out;
  out.geom = geometry_from_json(manifest.at("geometry"));
  out.electronic_variance = manifest.value("electronic_variance", 10.0);
  for (const auto& item : manifest.at("items")) {
    TrainSample s;
    s.id = item.at("id").get<std::string>();
    s.dose = item.at("dose").get<double>();
    s.truth = read_f32r_image(dir + "/" + s.id + "_phantom.f32r");
    s.sino = read_f32r_sinogram(dir + "/" + s.id + "_sino.f32r");
    require(s.truth.rows == out.geom.image_rows && s.truth.cols == out.geom.image_cols,
            "dataset: phantom raster does not match manifest geometry");
    require(s.sino.views == out.geom.n_views && s.sino.bins == out.geom.n_bins,
            "dataset: sinogram raster does not match manifest geometry");
    out.samples.push_back(std::move(s));
  }
  return out;
}

}  // namespace ldct
