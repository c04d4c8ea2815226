#include "nsmae/config.hpp"

#include <fstream>
#include <stdexcept>

namespace nsmae::config {

using nlohmann::json;

json default_config_json() {
  return json{
      {"seed", 1},
      {"grid",
       {{"x_min", -4.0},
        {"x_max", 4.0},
        {"y_min", -4.0},
        {"y_max", 4.0},
        {"z_min", -2.0},
        {"z_max", 2.0},
        {"voxel_size", 0.5}}},
      {"net",
       {{"c_img", 4},
        {"c_lidar", 4},
        {"conv_hidden", 8},
        {"render_hidden", 16},
        {"pe_freqs", 4},
        {"use_camera", true},
        {"use_lidar", true}}},
      {"mask",
       {{"image", {{"ratio", 0.5}, {"patch", 8}}},
        {"voxel", {{"ratio", 0.8}, {"mode", "uniform"}}}}},
      {"render",
       {{"delta_per", 0.8}, {"samples_per", 64}, {"t_near_per", 0.5}, {"delta_bev", 0.2}}},
      {"rays", {{"color", 32}, {"depth", 32}, {"bev", 64}}},
      {"loss",
       {{"color", {{"p", 2.0}, {"lambda", 1e4}}},
        {"depth_per", {{"p", 1.0}, {"lambda", 1e-2}}},
        {"depth_bev", {{"p", 1.0}, {"lambda", 1e-2}}}}},
      {"optim",
       {{"lr", 1e-4}, {"beta1", 0.9}, {"beta2", 0.999}, {"eps", 1e-8}, {"weight_decay", 0.01}}},
      {"schedule", {{"warmup_frac", 0.3}, {"div_factor", 25.0}, {"final_div_factor", 1e4}}},
      {"train", {{"steps", 2000}, {"batch", 4}, {"checkpoint_every", 500}}},
      {"synth",
       {{"n_scenes", 32},
        {"count_min", 2},
        {"count_max", 4},
        {"image_width", 64},
        {"image_height", 64},
        {"n_cameras", 2},
        {"lidar_azimuth", 24},
        {"lidar_elevation", 6},
        {"lidar_noise_points", 0},
        {"density_min", 1.5},
        {"density_max", 5.0},
        {"t_max", 30.0}}},
  };
}

namespace {

bool type_compatible(const json& base, const json& over) {
  if (base.is_number() && over.is_number()) return true;
  return base.type() == over.type();
}

void merge_into(json& base, const json& overlay, const std::string& path) {
  if (!overlay.is_object())
    throw std::runtime_error("config: expected object at '" + (path.empty() ? "." : path) + "'");
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    std::string child = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw std::runtime_error("config: unknown key '" + child + "'");
    json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_into(slot, it.value(), child);
    } else {
      if (!type_compatible(slot, it.value()))
        throw std::runtime_error("config: type mismatch at '" + child + "' (expected " +
                                 std::string(slot.type_name()) + ", got " +
                                 std::string(it.value().type_name()) + ")");
      slot = it.value();
    }
  }
}

}  // namespace

json merge_config(json base, const json& overlay) {
  merge_into(base, overlay, "");
  return base;
}

json apply_override(json base, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw std::runtime_error("config: override '" + assignment + "' is not key=value");
  std::string path = assignment.substr(0, eq);
  std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;  // bare strings, e.g. mode=range_aware

  // walk the dotted path, building the nested overlay
  json overlay = value;
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    auto dot = path.find('.', start);
    parts.push_back(path.substr(start, dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) overlay = json{{*it, overlay}};
  return merge_config(std::move(base), overlay);
}

std::uint64_t fnv1a_hash(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

AppConfig make_app_config(const json& j) {
  AppConfig app;
  train::TrainConfig& t = app.train;

  t.seed = j.at("seed").get<std::uint64_t>();

  const json& g = j.at("grid");
  t.grid.x_min = g.at("x_min");
  t.grid.x_max = g.at("x_max");
  t.grid.y_min = g.at("y_min");
  t.grid.y_max = g.at("y_max");
  t.grid.z_min = g.at("z_min");
  t.grid.z_max = g.at("z_max");
  double vox = g.at("voxel_size");
  t.grid.size_x = t.grid.size_y = t.grid.size_z = vox;
  t.grid.validate();

  const json& n = j.at("net");
  t.net.c_img = n.at("c_img");
  t.net.c_lidar = n.at("c_lidar");
  t.net.conv_hidden = n.at("conv_hidden");
  t.net.render_hidden = n.at("render_hidden");
  t.net.pe_freqs = n.at("pe_freqs");
  t.net.use_camera = n.at("use_camera");
  t.net.use_lidar = n.at("use_lidar");

  const json& m = j.at("mask");
  t.image_mask_ratio = m.at("image").at("ratio");
  t.net.patch = m.at("image").at("patch");
  t.voxel_mask_ratio = m.at("voxel").at("ratio");
  std::string mode = m.at("voxel").at("mode");
  if (mode == "uniform")
    t.voxel_mask_mode = mask::VoxelMaskMode::kUniform;
  else if (mode == "range_aware")
    t.voxel_mask_mode = mask::VoxelMaskMode::kRangeAware;
  else
    throw std::runtime_error("config: mask.voxel.mode must be 'uniform' or 'range_aware', got '" +
                             mode + "'");

  const json& r = j.at("render");
  t.delta_per = r.at("delta_per");
  t.samples_per = r.at("samples_per");
  t.t_near_per = r.at("t_near_per");
  t.delta_bev = r.at("delta_bev");

  const json& rs = j.at("rays");
  t.color_rays = rs.at("color");
  t.depth_rays = rs.at("depth");
  t.bev_ray_count = rs.at("bev");

  const json& l = j.at("loss");
  t.loss.targets.clear();
  t.loss.targets.push_back({"C", l.at("color").at("p"), l.at("color").at("lambda")});
  t.loss.targets.push_back({"D_PER", l.at("depth_per").at("p"), l.at("depth_per").at("lambda")});
  t.loss.targets.push_back({"D_BEV", l.at("depth_bev").at("p"), l.at("depth_bev").at("lambda")});

  const json& o = j.at("optim");
  t.optim.lr_max = o.at("lr");
  t.optim.beta1 = o.at("beta1");
  t.optim.beta2 = o.at("beta2");
  t.optim.eps = o.at("eps");
  t.optim.weight_decay = o.at("weight_decay");

  const json& s = j.at("schedule");
  t.warmup_frac = s.at("warmup_frac");
  t.div_factor = s.at("div_factor");
  t.final_div_factor = s.at("final_div_factor");

  const json& tr = j.at("train");
  t.steps = tr.at("steps").get<std::uint64_t>();
  t.batch = tr.at("batch");
  t.checkpoint_every = tr.at("checkpoint_every").get<std::uint64_t>();

  const json& sy = j.at("synth");
  app.synth.n_scenes = sy.at("n_scenes");
  app.synth.count_min = sy.at("count_min");
  app.synth.count_max = sy.at("count_max");
  app.synth.image_width = sy.at("image_width");
  app.synth.image_height = sy.at("image_height");
  app.synth.n_cameras = sy.at("n_cameras");
  app.synth.lidar_azimuth = sy.at("lidar_azimuth");
  app.synth.lidar_elevation = sy.at("lidar_elevation");
  app.synth.lidar_noise_points = sy.at("lidar_noise_points");
  app.synth.density_min = sy.at("density_min");
  app.synth.density_max = sy.at("density_max");
  app.synth.t_max = sy.at("t_max");
  app.synth.seed = t.seed;

  app.hash = fnv1a_hash(j.dump());
  t.config_hash = app.hash;
  return app;
}

AppConfig load_config(const std::string& config_path, const std::vector<std::string>& overrides) {
  json full = default_config_json();
  if (!config_path.empty()) {
    std::ifstream f(config_path);
    if (!f) throw std::runtime_error("config: cannot open " + config_path);
    json file_json = json::parse(f, nullptr, true, /*ignore_comments=*/false);
    full = merge_config(std::move(full), file_json);
  }
  for (const auto& ov : overrides) full = apply_override(std::move(full), ov);
  return make_app_config(full);
}

}  // namespace nsmae::config
