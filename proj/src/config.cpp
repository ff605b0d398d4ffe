#include "ldct/config.hpp"

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

namespace ldct {

using ordered_json = nlohmann::ordered_json;

namespace {

void check_keys(const ordered_json& j, const std::set<std::string>& allowed,
                const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key()))
      throw std::invalid_argument("config: unknown key '" + where + it.key() + "'");
  }
}

std::vector<double> parse_dose_list(const ordered_json& j) {
  std::vector<double> out;
  if (j.is_number()) {
    out.push_back(j.get<double>());
  } else if (j.is_array()) {
    for (const auto& v : j) out.push_back(v.get<double>());
  } else {
    throw std::invalid_argument("config: noise.doses must be a number or an array");
  }
  return out;
}

}  // namespace

ModelConfig RunConfig::model_config() const {
  ModelConfig mc;
  mc.stages = model.stages;
  mc.bank_kind = bank_kind_from_string(model.bank);
  mc.hp_mode = hp_mode_from_string(model.hp_mode);
  mc.cnn_depth = model.cnn_depth;
  mc.cnn_channels = model.cnn_channels;
  mc.mlp_hidden1 = model.mlp_hidden1;
  mc.mlp_hidden2 = model.mlp_hidden2;
  mc.beta0 = model.beta0;
  mc.mu = model.mu;
  if (model.hp_grad_path == "full")
    mc.hp_grad_path = HpGradPath::Full;
  else if (model.hp_grad_path == "detached")
    mc.hp_grad_path = HpGradPath::Detached;
  else
    throw std::invalid_argument("config: model.hp_grad_path must be 'full' or 'detached'");
  mc.cg.rel_tolerance = model.cg_tolerance;
  mc.cg.max_iters = model.cg_max_iters;
  mc = apply_variant(mc, variant_from_string(model.variant));
  mc.validate();
  return mc;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config: " + path);
  ordered_json j = ordered_json::parse(is);
  RunConfig cfg;

  check_keys(j, {"geometry", "noise", "model", "train", "paths"}, "");

  if (j.contains("geometry")) {
    const auto& g = j["geometry"];
    check_keys(g,
               {"n_views", "n_bins", "image_rows", "image_cols", "pixel_size_mm",
                "detector_pixel_mm", "source_to_detector_mm", "source_to_isocenter_mm",
                "angular_span_rad"},
               "geometry.");
    auto& gg = cfg.geometry;
    gg.n_views = g.value("n_views", gg.n_views);
    gg.n_bins = g.value("n_bins", gg.n_bins);
    gg.image_rows = g.value("image_rows", gg.image_rows);
    gg.image_cols = g.value("image_cols", gg.image_cols);
    gg.pixel_size_mm = g.value("pixel_size_mm", gg.pixel_size_mm);
    gg.detector_pixel_mm = g.value("detector_pixel_mm", gg.detector_pixel_mm);
    gg.source_to_detector_mm = g.value("source_to_detector_mm", gg.source_to_detector_mm);
    gg.source_to_isocenter_mm = g.value("source_to_isocenter_mm", gg.source_to_isocenter_mm);
    gg.angular_span_rad = g.value("angular_span_rad", gg.angular_span_rad);
  }
  if (j.contains("noise")) {
    const auto& n = j["noise"];
    check_keys(n, {"doses", "electronic_variance", "seed", "count", "phantom_kind"}, "noise.");
    if (n.contains("doses")) cfg.noise.doses = parse_dose_list(n["doses"]);
    cfg.noise.electronic_variance = n.value("electronic_variance", cfg.noise.electronic_variance);
    cfg.noise.seed = n.value("seed", cfg.noise.seed);
    cfg.noise.count = n.value("count", cfg.noise.count);
    cfg.noise.phantom_kind = n.value("phantom_kind", cfg.noise.phantom_kind);
  }
  if (j.contains("model")) {
    const auto& m = j["model"];
    check_keys(m,
               {"stages", "bank", "hp_mode", "variant", "cnn_depth", "cnn_channels",
                "mlp_hidden1", "mlp_hidden2", "beta0", "mu", "hp_grad_path", "cg_tolerance",
                "cg_max_iters"},
               "model.");
    auto& mm = cfg.model;
    mm.stages = m.value("stages", mm.stages);
    mm.bank = m.value("bank", mm.bank);
    mm.hp_mode = m.value("hp_mode", mm.hp_mode);
    mm.variant = m.value("variant", mm.variant);
    mm.cnn_depth = m.value("cnn_depth", mm.cnn_depth);
    mm.cnn_channels = m.value("cnn_channels", mm.cnn_channels);
    mm.mlp_hidden1 = m.value("mlp_hidden1", mm.mlp_hidden1);
    mm.mlp_hidden2 = m.value("mlp_hidden2", mm.mlp_hidden2);
    mm.beta0 = m.value("beta0", mm.beta0);
    mm.mu = m.value("mu", mm.mu);
    mm.hp_grad_path = m.value("hp_grad_path", mm.hp_grad_path);
    mm.cg_tolerance = m.value("cg_tolerance", mm.cg_tolerance);
    mm.cg_max_iters = m.value("cg_max_iters", mm.cg_max_iters);
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    check_keys(t, {"epochs", "batch", "lr", "seed", "val_count", "checkpoint_every"}, "train.");
    auto& tt = cfg.train;
    tt.epochs = t.value("epochs", tt.epochs);
    tt.batch = t.value("batch", tt.batch);
    tt.lr = t.value("lr", tt.lr);
    tt.seed = t.value("seed", tt.seed);
    tt.val_count = t.value("val_count", tt.val_count);
    tt.checkpoint_every = t.value("checkpoint_every", tt.checkpoint_every);
  }
  if (j.contains("paths")) {
    const auto& p = j["paths"];
    check_keys(p, {"dataset", "checkpoints", "output"}, "paths.");
    cfg.paths.dataset = p.value("dataset", cfg.paths.dataset);
    cfg.paths.checkpoints = p.value("checkpoints", cfg.paths.checkpoints);
    cfg.paths.output = p.value("output", cfg.paths.output);
  }
  return cfg;
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
  auto as_int = [&] { return std::stoi(value); };
  auto as_u64 = [&] { return static_cast<uint64_t>(std::stoull(value)); };
  auto as_double = [&] { return std::stod(value); };
  auto as_doses = [&] {
    std::vector<double> out;
    std::stringstream ss(value);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
    return out;
  };

  if (key == "geometry.n_views") cfg.geometry.n_views = as_int();
  else if (key == "geometry.n_bins") cfg.geometry.n_bins = as_int();
  else if (key == "geometry.image_rows") cfg.geometry.image_rows = as_int();
  else if (key == "geometry.image_cols") cfg.geometry.image_cols = as_int();
  else if (key == "geometry.pixel_size_mm") cfg.geometry.pixel_size_mm = as_double();
  else if (key == "geometry.detector_pixel_mm") cfg.geometry.detector_pixel_mm = as_double();
  else if (key == "geometry.source_to_detector_mm") cfg.geometry.source_to_detector_mm = as_double();
  else if (key == "geometry.source_to_isocenter_mm") cfg.geometry.source_to_isocenter_mm = as_double();
  else if (key == "geometry.angular_span_rad") cfg.geometry.angular_span_rad = as_double();
  else if (key == "noise.doses") cfg.noise.doses = as_doses();
  else if (key == "noise.electronic_variance") cfg.noise.electronic_variance = as_double();
  else if (key == "noise.seed") cfg.noise.seed = as_u64();
  else if (key == "noise.count") cfg.noise.count = as_int();
  else if (key == "noise.phantom_kind") cfg.noise.phantom_kind = value;
  else if (key == "model.stages") cfg.model.stages = as_int();
  else if (key == "model.bank") cfg.model.bank = value;
  else if (key == "model.hp_mode") cfg.model.hp_mode = value;
  else if (key == "model.variant") cfg.model.variant = value;
  else if (key == "model.cnn_depth") cfg.model.cnn_depth = as_int();
  else if (key == "model.cnn_channels") cfg.model.cnn_channels = as_int();
  else if (key == "model.mlp_hidden1") cfg.model.mlp_hidden1 = as_int();
  else if (key == "model.mlp_hidden2") cfg.model.mlp_hidden2 = as_int();
  else if (key == "model.beta0") cfg.model.beta0 = as_double();
  else if (key == "model.mu") cfg.model.mu = as_double();
  else if (key == "model.hp_grad_path") cfg.model.hp_grad_path = value;
  else if (key == "model.cg_tolerance") cfg.model.cg_tolerance = as_double();
  else if (key == "model.cg_max_iters") cfg.model.cg_max_iters = as_int();
  else if (key == "train.epochs") cfg.train.epochs = as_int();
  else if (key == "train.batch") cfg.train.batch = as_int();
  else if (key == "train.lr") cfg.train.lr = as_double();
  else if (key == "train.seed") cfg.train.seed = as_u64();
  else if (key == "train.val_count") cfg.train.val_count = as_int();
  else if (key == "train.checkpoint_every") cfg.train.checkpoint_every = as_int();
  else if (key == "paths.dataset") cfg.paths.dataset = value;
  else if (key == "paths.checkpoints") cfg.paths.checkpoints = value;
  else if (key == "paths.output") cfg.paths.output = value;
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

std::string run_config_to_json(const RunConfig& cfg) {
  ordered_json j;
  auto& g = cfg.geometry;
  j["geometry"] = {{"n_views", g.n_views},
                   {"n_bins", g.n_bins},
                   {"image_rows", g.image_rows},
                   {"image_cols", g.image_cols},
                   {"pixel_size_mm", g.pixel_size_mm},
                   {"detector_pixel_mm", g.detector_pixel_mm},
                   {"source_to_detector_mm", g.source_to_detector_mm},
                   {"source_to_isocenter_mm", g.source_to_isocenter_mm},
                   {"angular_span_rad", g.angular_span_rad}};
  j["noise"] = {{"doses", cfg.noise.doses},
                {"electronic_variance", cfg.noise.electronic_variance},
                {"seed", cfg.noise.seed},
                {"count", cfg.noise.count},
                {"phantom_kind", cfg.noise.phantom_kind}};
  j["model"] = {{"stages", cfg.model.stages},
                {"bank", cfg.model.bank},
                {"hp_mode", cfg.model.hp_mode},
                {"variant", cfg.model.variant},
                {"cnn_depth", cfg.model.cnn_depth},
                {"cnn_channels", cfg.model.cnn_channels},
                {"mlp_hidden1", cfg.model.mlp_hidden1},
                {"mlp_hidden2", cfg.model.mlp_hidden2},
                {"beta0", cfg.model.beta0},
                {"mu", cfg.model.mu},
                {"hp_grad_path", cfg.model.hp_grad_path},
                {"cg_tolerance", cfg.model.cg_tolerance},
                {"cg_max_iters", cfg.model.cg_max_iters}};
  j["train"] = {{"epochs", cfg.train.epochs},
                {"batch", cfg.train.batch},
                {"lr", cfg.train.lr},
                {"seed", cfg.train.seed},
                {"val_count", cfg.train.val_count},
                {"checkpoint_every", cfg.train.checkpoint_every}};
  j["paths"] = {{"dataset", cfg.paths.dataset},
                {"checkpoints", cfg.paths.checkpoints},
                {"output", cfg.paths.output}};
  return j.dump(2);
}

void echo_config(const RunConfig& cfg, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::ofstream os(out_dir + "/config_resolved.json");
  os << run_config_to_json(cfg) << "\n";
}

}  // namespace ldct
