#include "nsmae/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>

#include <json.hpp>

namespace nsmae::synth {

namespace {

constexpr double kLnTwo = 0.6931471805599453;

double luminance(const std::array<double, 3>& c) {
  return 0.2126 * c[0] + 0.7152 * c[1] + 0.0722 * c[2];
}

}  // namespace

bool Primitive::contains(const geom::Vec3& p) const {
  geom::Vec3 d = p - center;
  if (kind == ShapeKind::kBox)
    return std::abs(d.x) <= half_extent.x && std::abs(d.y) <= half_extent.y &&
           std::abs(d.z) <= half_extent.z;
  return d.norm() <= half_extent.x;
}

bool Primitive::intersect(const geom::Vec3& o, const geom::Vec3& d, double& t_in,
                          double& t_out) const {
  if (kind == ShapeKind::kBox) {
    // slab test
    double t0 = -std::numeric_limits<double>::infinity();
    double t1 = std::numeric_limits<double>::infinity();
    const double oc[3] = {o.x - center.x, o.y - center.y, o.z - center.z};
    const double dir[3] = {d.x, d.y, d.z};
    const double he[3] = {half_extent.x, half_extent.y, half_extent.z};
    for (int a = 0; a < 3; ++a) {
      if (dir[a] == 0.0) {
        if (std::abs(oc[a]) > he[a]) return false;
        continue;
      }
      double ta = (-he[a] - oc[a]) / dir[a];
      double tb = (he[a] - oc[a]) / dir[a];
      if (ta > tb) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
      if (t0 > t1) return false;
    }
    t_in = t0;
    t_out = t1;
    return true;
  }
  // sphere
  geom::Vec3 oc = o - center;
  double r = half_extent.x;
  double b = oc.dot(d);
  double c = oc.dot(oc) - r * r;
  double disc = b * b - c;
  if (disc < 0) return false;
  double s = std::sqrt(disc);
  t_in = -b - s;
  t_out = -b + s;
  return true;
}

SceneSpec generate_scene(std::uint64_t seed, int count_min, int count_max,
                         const geom::GridSpec& grid, double density_min, double density_max) {
  if (count_min < 1 || count_max < count_min) throw std::runtime_error("generate_scene: bad count");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> count_dist(count_min, count_max);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  SceneSpec scene;
  scene.seed = seed;
  double span = std::min({grid.x_max - grid.x_min, grid.y_max - grid.y_min,
                          grid.z_max - grid.z_min});
  double ext_lo = 0.08 * span, ext_hi = 0.22 * span;

  int count = count_dist(rng);
  for (int i = 0; i < count; ++i) {
    Primitive p;
    p.kind = unit(rng) < 0.5 ? ShapeKind::kBox : ShapeKind::kSphere;
    if (p.kind == ShapeKind::kBox) {
      p.half_extent = {ext_lo + unit(rng) * (ext_hi - ext_lo),
                       ext_lo + unit(rng) * (ext_hi - ext_lo),
                       ext_lo + unit(rng) * (ext_hi - ext_lo)};
    } else {
      double r = ext_lo + unit(rng) * (ext_hi - ext_lo);
      p.half_extent = {r, r, r};
    }
    auto place = [&](double lo, double hi, double he) {
      double a = lo + he, b = hi - he;
      return a + unit(rng) * (b - a);
    };
    p.center = {place(grid.x_min, grid.x_max, p.half_extent.x),
                place(grid.y_min, grid.y_max, p.half_extent.y),
                place(grid.z_min, grid.z_max, p.half_extent.z)};
    p.density = density_min + unit(rng) * (density_max - density_min);
    p.color = {0.15 + 0.85 * unit(rng), 0.15 + 0.85 * unit(rng), 0.15 + 0.85 * unit(rng)};
    scene.primitives.push_back(p);
  }
  return scene;
}

std::vector<RaySegment> ray_segments(const SceneSpec& scene, const geom::Vec3& origin,
                                     const geom::Vec3& dir, double t_min, double t_max) {
  struct Event {
    double t;
    int prim;
    bool enter;
  };
  std::vector<Event> events;
  for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
    double t0, t1;
    if (!scene.primitives[i].intersect(origin, dir, t0, t1)) continue;
    t0 = std::max(t0, t_min);
    t1 = std::min(t1, t_max);
    if (t0 >= t1) continue;
    events.push_back({t0, static_cast<int>(i), true});
    events.push_back({t1, static_cast<int>(i), false});
  }
  std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) { return a.t < b.t; });

  std::vector<RaySegment> segs;
  std::vector<int> active;
  double prev = t_min;
  std::size_t e = 0;
  auto emit = [&](double a, double b) {
    if (b <= a) return;
    RaySegment s;
    s.t0 = a;
    s.t1 = b;
    for (int i : active) {
      const Primitive& p = scene.primitives[static_cast<std::size_t>(i)];
      s.sigma += p.density;
      for (int c = 0; c < 3; ++c) s.color[c] += p.density * p.color[c];
    }
    if (s.sigma > 0)
      for (int c = 0; c < 3; ++c) s.color[c] /= s.sigma;
    segs.push_back(s);
  };
  while (e < events.size()) {
    double t = events[e].t;
    emit(prev, t);
    while (e < events.size() && events[e].t == t) {
      if (events[e].enter)
        active.push_back(events[e].prim);
      else
        active.erase(std::find(active.begin(), active.end(), events[e].prim));
      ++e;
    }
    prev = t;
  }
  emit(prev, t_max);
  return segs;
}

OracleResult oracle_render(const geom::Ray& ray, const SceneSpec& scene) {
  double t_max = ray.t_near + ray.sample_count * ray.delta;
  OracleResult res;
  double log_t = 0.0;  // accumulated optical depth
  for (const RaySegment& s : ray_segments(scene, ray.origin, ray.direction, ray.t_near, t_max)) {
    if (s.sigma <= 0) continue;
    double len = s.t1 - s.t0;
    double t_in = std::exp(-log_t);
    double e = std::exp(-s.sigma * len);
    double mass = t_in * (1.0 - e);
    for (int c = 0; c < 3; ++c) res.color[c] += mass * s.color[c];
    // int_0^L u sigma T du with T = T_in e^{-sigma u}
    res.depth += (s.t0 - ray.t_near) * mass +
                 t_in * (1.0 - e * (1.0 + s.sigma * len)) / s.sigma;
    log_t += s.sigma * len;
  }
  res.transmittance = std::exp(-log_t);
  return res;
}

double oracle_transmittance_at(const SceneSpec& scene, const geom::Vec3& origin,
                               const geom::Vec3& dir, double t_near, double t) {
  double log_t = 0.0;
  for (const RaySegment& s : ray_segments(scene, origin, dir, t_near, t))
    log_t += s.sigma * (s.t1 - s.t0);
  return std::exp(-log_t);
}

double oracle_depth_staircase(const geom::Ray& ray, const SceneSpec& scene) {
  double t_max = ray.t_near + ray.sample_count * ray.delta;
  auto segs = ray_segments(scene, ray.origin, ray.direction, ray.t_near, t_max);
  // optical depth at each sample-interval boundary, walked once
  std::vector<double> tau(static_cast<std::size_t>(ray.sample_count) + 1, 0.0);
  for (int i = 1; i <= ray.sample_count; ++i) {
    double b = ray.t_near + i * ray.delta;
    double acc = 0.0;
    for (const RaySegment& s : segs) {
      if (s.t0 >= b) break;
      acc += s.sigma * (std::min(s.t1, b) - s.t0);
    }
    tau[static_cast<std::size_t>(i)] = acc;
  }
  double depth = 0.0;
  for (int i = 0; i < ray.sample_count; ++i) {
    double mass = std::exp(-tau[static_cast<std::size_t>(i)]) -
                  std::exp(-tau[static_cast<std::size_t>(i) + 1]);
    depth += mass * (i * ray.delta);
  }
  return depth;
}

bool first_surface(const SceneSpec& scene, const geom::Vec3& origin, const geom::Vec3& dir,
                   double t_max, double& t_hit, std::array<double, 3>& color_hit) {
  double remaining = kLnTwo;
  for (const RaySegment& s : ray_segments(scene, origin, dir, 0.0, t_max)) {
    if (s.sigma <= 0) continue;
    double depth_here = s.sigma * (s.t1 - s.t0);
    if (depth_here >= remaining) {
      t_hit = s.t0 + remaining / s.sigma;
      color_hit = s.color;
      return true;
    }
    remaining -= depth_here;
  }
  return false;
}

data::PointCloud sample_lidar(const SceneSpec& scene, const geom::Vec3& origin, int n_azimuth,
                              int n_elevation, double elevation_min, double elevation_max,
                              double t_max) {
  if (n_azimuth < 1 || n_elevation < 1) throw std::runtime_error("sample_lidar: counts must be >= 1");
  data::PointCloud cloud;
  for (int e = 0; e < n_elevation; ++e) {
    double el = n_elevation == 1 ? 0.5 * (elevation_min + elevation_max)
                                 : elevation_min + (elevation_max - elevation_min) * e /
                                                       (n_elevation - 1);
    for (int a = 0; a < n_azimuth; ++a) {
      double az = 2.0 * M_PI * a / n_azimuth;
      geom::Vec3 dir{std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
      double t_hit;
      std::array<double, 3> color;
      if (!first_surface(scene, origin, dir, t_max, t_hit, color)) continue;
      geom::Vec3 p = origin + dir * t_hit;
      cloud.points.push_back({p.x, p.y, p.z, luminance(color)});
    }
  }
  return cloud;
}

data::ImageFrame rasterize_image(const SceneSpec& scene, const geom::CameraModel& camera,
                                 double t_max) {
  camera.validate();
  data::ImageFrame img = data::ImageFrame::zeros(camera.width, camera.height);
  for (int v = 0; v < camera.height; ++v)
    for (int u = 0; u < camera.width; ++u) {
      geom::Ray ray;
      ray.origin = camera.translation;
      ray.direction = camera.pixel_direction(u + 0.5, v + 0.5);
      ray.t_near = 0.0;
      ray.delta = t_max;
      ray.sample_count = 1;
      OracleResult res = oracle_render(ray, scene);
      for (int c = 0; c < 3; ++c) img.at(v, u, c) = res.color[static_cast<std::size_t>(c)];
    }
  return img;
}

std::vector<std::uint8_t> occupancy_labels(const SceneSpec& scene, const geom::GridSpec& grid) {
  std::vector<std::uint8_t> labels(grid.num_voxels(), 0);
  for (std::size_t ix = 0; ix < grid.extent_x(); ++ix)
    for (std::size_t iy = 0; iy < grid.extent_y(); ++iy)
      for (std::size_t iz = 0; iz < grid.extent_z(); ++iz) {
        geom::Vec3 c = grid.voxel_center(ix, iy, iz);
        for (const Primitive& p : scene.primitives)
          if (p.contains(c)) {
            labels[grid.flat_index(ix, iy, iz)] = 1;
            break;
          }
      }
  return labels;
}

SceneSpec load_scene_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("synth: cannot open " + path);
  nlohmann::json j;
  f >> j;
  SceneSpec scene;
  scene.seed = j.value("seed", 0ULL);
  for (const auto& pj : j.at("primitives")) {
    Primitive p;
    p.kind = pj.at("shape") == "sphere" ? ShapeKind::kSphere : ShapeKind::kBox;
    auto c = pj.at("center");
    p.center = {c.at(0), c.at(1), c.at(2)};
    auto h = pj.at("half_extent");
    p.half_extent = {h.at(0), h.at(1), h.at(2)};
    p.density = pj.at("density");
    auto col = pj.at("color");
    p.color = {col.at(0), col.at(1), col.at(2)};
    scene.primitives.push_back(p);
  }
  return scene;
}

void save_scene_json(const SceneSpec& scene, const std::string& path) {
  nlohmann::json j;
  j["seed"] = scene.seed;
  j["primitives"] = nlohmann::json::array();
  for (const Primitive& p : scene.primitives) {
    nlohmann::json pj;
    pj["shape"] = p.kind == ShapeKind::kSphere ? "sphere" : "box";
    pj["center"] = {p.center.x, p.center.y, p.center.z};
    pj["half_extent"] = {p.half_extent.x, p.half_extent.y, p.half_extent.z};
    pj["density"] = p.density;
    pj["color"] = {p.color[0], p.color[1], p.color[2]};
    j["primitives"].push_back(pj);
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("synth: cannot write " + path);
  f << j.dump(2) << "\n";
}

std::vector<geom::CameraModel> default_cameras(const geom::GridSpec& grid, int n, int width,
                                               int height) {
  double cx_w = 0.5 * (grid.x_min + grid.x_max);
  double cy_w = 0.5 * (grid.y_min + grid.y_max);
  double cz_w = 0.5 * (grid.z_min + grid.z_max);
  double radius = 0.85 * std::hypot(grid.x_max - grid.x_min, grid.y_max - grid.y_min);
  std::vector<geom::CameraModel> cams;
  for (int k = 0; k < n; ++k) {
    double ang = 2.0 * M_PI * k / std::max(1, n);
    geom::CameraModel cam;
    cam.width = width;
    cam.height = height;
    cam.fx = cam.fy = 0.75 * width;
    cam.cx = width / 2.0;
    cam.cy = height / 2.0;
    cam.translation = {cx_w + radius * std::cos(ang), cy_w + radius * std::sin(ang), cz_w + 1.0};
    geom::Vec3 fwd = (geom::Vec3{cx_w, cy_w, cz_w} - cam.translation).normalized();
    geom::Vec3 up{0, 0, 1};
    geom::Vec3 right{fwd.y * up.z - fwd.z * up.y, fwd.z * up.x - fwd.x * up.z,
                     fwd.x * up.y - fwd.y * up.x};
    right = right.normalized();
    geom::Vec3 down{fwd.y * right.z - fwd.z * right.y, fwd.z * right.x - fwd.x * right.z,
                    fwd.x * right.y - fwd.y * right.x};
    cam.rotation.m = {right.x, down.x, fwd.x, right.y, down.y, fwd.y, right.z, down.z, fwd.z};
    cam.validate();
    cams.push_back(cam);
  }
  return cams;
}

data::Manifest write_synth_dataset(const SynthDatasetParams& params, const geom::GridSpec& grid,
                                   const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  geom::Vec3 sensor{0.5 * (grid.x_min + grid.x_max), 0.5 * (grid.y_min + grid.y_max),
                    0.5 * (grid.z_min + grid.z_max) + 0.25};
  auto cameras = default_cameras(grid, params.n_cameras, params.image_width, params.image_height);

  data::Manifest manifest;
  manifest.grid = grid;
  for (int s = 0; s < params.n_scenes; ++s) {
    // retry seeds until the sensors actually see the scene: training needs
    // lidar returns and at least one camera-visible depth pixel
    SceneSpec scene;
    data::PointCloud cloud;
    std::uint64_t scene_seed = params.seed * 1000003ULL + static_cast<std::uint64_t>(s);
    for (int attempt = 0;; ++attempt) {
      if (attempt >= 1000)
        throw std::runtime_error("write_synth_dataset: cannot place a visible scene");
      scene = generate_scene(scene_seed + 7919ULL * static_cast<std::uint64_t>(attempt),
                             params.count_min, params.count_max, grid, params.density_min,
                             params.density_max);
      cloud = sample_lidar(scene, sensor, params.lidar_azimuth, params.lidar_elevation,
                           params.lidar_elevation_min, params.lidar_elevation_max, params.t_max);
      if (cloud.points.size() < 20) continue;
      bool seen = true;
      for (const auto& cam : cameras) {
        auto dm = data::make_perspective_depth_target(cloud, cam);
        std::size_t n_valid = 0;
        for (auto v : dm.valid) n_valid += v;
        if (n_valid < 4) seen = false;
      }
      if (seen) break;
    }
    if (params.lidar_noise_points > 0) {
      // spurious returns uniform over the grid volume, mimicking sensor noise
      std::mt19937_64 nrng(scene_seed ^ 0x9e3779b97f4a7c15ULL);
      std::uniform_real_distribution<double> ux(grid.x_min, grid.x_max);
      std::uniform_real_distribution<double> uy(grid.y_min, grid.y_max);
      std::uniform_real_distribution<double> uz(grid.z_min, grid.z_max);
      std::uniform_real_distribution<double> ur(0.0, 1.0);
      for (int k = 0; k < params.lidar_noise_points; ++k) {
        data::Point p;
        p.x = ux(nrng);
        p.y = uy(nrng);
        p.z = uz(nrng);
        p.r = ur(nrng);
        cloud.points.push_back(p);
      }
    }
    std::string base = out_dir + "/scene_" + std::to_string(s);
    save_scene_json(scene, base + ".json");
    data::save_point_cloud_bin(cloud, base + ".bin");
    data::SampleRecord rec;
    rec.cloud_path = base + ".bin";
    rec.scene_path = base + ".json";
    for (std::size_t c = 0; c < cameras.size(); ++c) {
      std::string img_path = base + "_cam" + std::to_string(c) + ".ppm";
      data::save_image_ppm(rasterize_image(scene, cameras[c], params.t_max), img_path);
      rec.image_paths.push_back(img_path);
      rec.cameras.push_back(cameras[c]);
    }
    manifest.samples.push_back(std::move(rec));
  }
  save_manifest(manifest, out_dir + "/manifest.json");
  return manifest;
}

}  // namespace nsmae::synth
