#include "nsmae/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

namespace nsmae::data {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error("dataio: " + msg); }

std::vector<char> read_all(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail("cannot open " + path);
  return std::vector<char>(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

void write_all(const std::string& path, const char* data, std::size_t n) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail("cannot write " + path);
  f.write(data, static_cast<std::streamsize>(n));
  if (!f) fail("short write to " + path);
}

float to_le_float(float v) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts unsupported");
  return v;
}

}  // namespace

PointCloud load_point_cloud_bin(const std::string& path) {
  std::vector<char> raw = read_all(path);
  if (raw.size() % 16 != 0)
    fail("truncated point cloud " + path + ": " + std::to_string(raw.size()) +
         " bytes is not a multiple of 16 (offset " + std::to_string(raw.size() - raw.size() % 16) +
         ")");
  PointCloud cloud;
  cloud.points.resize(raw.size() / 16);
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    float q[4];
    std::memcpy(q, raw.data() + i * 16, 16);
    cloud.points[i] = {static_cast<double>(q[0]), static_cast<double>(q[1]),
                       static_cast<double>(q[2]), static_cast<double>(q[3])};
  }
  return cloud;
}

void save_point_cloud_bin(const PointCloud& cloud, const std::string& path) {
  std::vector<char> raw(cloud.points.size() * 16);
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const Point& p = cloud.points[i];
    float q[4] = {to_le_float(static_cast<float>(p.x)), to_le_float(static_cast<float>(p.y)),
                  to_le_float(static_cast<float>(p.z)), to_le_float(static_cast<float>(p.r))};
    std::memcpy(raw.data() + i * 16, q, 16);
  }
  write_all(path, raw.data(), raw.size());
}

VoxelGrid voxelize(const PointCloud& cloud, const geom::GridSpec& grid) {
  grid.validate();
  VoxelGrid out;
  out.grid = grid;
  for (const Point& p : cloud.points) {
    auto idx = grid.voxel_of({p.x, p.y, p.z});
    if (!idx) {
      ++out.dropped;
      continue;
    }
    auto [ix, iy, iz] = *idx;
    geom::Vec3 center = grid.voxel_center(ix, iy, iz);
    VoxelFeature& f = out.occupied[grid.flat_index(ix, iy, iz)];
    double n = f.count + 1.0;
    f.mean_dx += (p.x - center.x - f.mean_dx) / n;
    f.mean_dy += (p.y - center.y - f.mean_dy) / n;
    f.mean_dz += (p.z - center.z - f.mean_dz) / n;
    f.mean_intensity += (p.r - f.mean_intensity) / n;
    f.count = n;
  }
  return out;
}

std::vector<geom::ProjectedPoint> project_points(const PointCloud& cloud,
                                                 const geom::CameraModel& camera) {
  camera.validate();
  std::vector<geom::ProjectedPoint> out;
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const Point& p = cloud.points[i];
    auto [u, v, depth] = camera.project({p.x, p.y, p.z});
    if (!(depth > 0)) continue;
    if (u < 0 || u >= camera.width || v < 0 || v >= camera.height) continue;
    out.push_back({u, v, depth, i});
  }
  return out;
}

DepthMap make_perspective_depth_target(const PointCloud& cloud, const geom::CameraModel& camera) {
  DepthMap map = DepthMap::invalid_map(camera.width, camera.height);
  for (const auto& pp : project_points(cloud, camera)) {
    int u = static_cast<int>(std::floor(pp.u));
    int v = static_cast<int>(std::floor(pp.v));
    std::size_t i = map.idx(v, u);
    if (!map.valid[i] || pp.depth < map.depth[i]) {
      map.depth[i] = pp.depth;
      map.valid[i] = 1;
    }
  }
  return map;
}

DepthMap make_bev_depth_target(const PointCloud& cloud, const geom::GridSpec& grid) {
  grid.validate();
  int w = static_cast<int>(grid.extent_x());
  int h = static_cast<int>(grid.extent_y());
  DepthMap map = DepthMap::invalid_map(w, h);
  // map cell (ix, iy) stored with v = iy, u = ix
  std::vector<double> highest(static_cast<std::size_t>(w) * h,
                              -std::numeric_limits<double>::infinity());
  for (const Point& p : cloud.points) {
    double fx = std::floor((p.x - grid.x_min) / grid.size_x);
    double fy = std::floor((p.y - grid.y_min) / grid.size_y);
    if (fx < 0 || fy < 0 || fx >= w || fy >= h) continue;
    if (p.z < grid.z_min || p.z > grid.z_max) continue;
    std::size_t i = map.idx(static_cast<int>(fy), static_cast<int>(fx));
    if (p.z > highest[i]) highest[i] = p.z;
    map.valid[i] = 1;
  }
  for (std::size_t i = 0; i < map.depth.size(); ++i)
    if (map.valid[i]) map.depth[i] = grid.z_max - highest[i];
  return map;
}

ImageFrame load_image_ppm(const std::string& path) {
  std::vector<char> raw = read_all(path);
  // header: "P6" ws W ws H ws MAXVAL single-ws
  std::size_t pos = 0;
  auto token = [&]() -> std::string {
    while (pos < raw.size() && std::isspace(static_cast<unsigned char>(raw[pos]))) ++pos;
    if (pos < raw.size() && raw[pos] == '#') {  // comment line
      while (pos < raw.size() && raw[pos] != '\n') ++pos;
      while (pos < raw.size() && std::isspace(static_cast<unsigned char>(raw[pos]))) ++pos;
    }
    std::size_t start = pos;
    while (pos < raw.size() && !std::isspace(static_cast<unsigned char>(raw[pos]))) ++pos;
    return std::string(raw.begin() + start, raw.begin() + pos);
  };
  std::string magic = token();
  if (magic != "P6") fail("PPM " + path + ": bad magic \"" + magic + "\"");
  std::string ws = token(), hs = token(), ms = token();
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(ws);
    h = std::stoi(hs);
    maxval = std::stoi(ms);
  } catch (...) {
    fail("PPM " + path + ": malformed header tokens \"" + ws + " " + hs + " " + ms + "\"");
  }
  if (maxval != 255) fail("PPM " + path + ": unsupported maxval " + ms);
  if (w <= 0 || h <= 0) fail("PPM " + path + ": bad dimensions");
  ++pos;  // single whitespace after maxval
  std::size_t need = static_cast<std::size_t>(w) * h * 3;
  if (raw.size() - pos < need) fail("PPM " + path + ": truncated pixel data");
  ImageFrame img = ImageFrame::zeros(w, h);
  for (std::size_t i = 0; i < need; ++i)
    img.values[i] = static_cast<unsigned char>(raw[pos + i]) / 255.0;
  return img;
}

void save_image_ppm(const ImageFrame& img, const std::string& path) {
  std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) +
                       "\n255\n";
  std::vector<char> raw(header.begin(), header.end());
  raw.reserve(raw.size() + img.values.size());
  for (double v : img.values) {
    double c = std::clamp(v, 0.0, 1.0);
    raw.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0))));
  }
  write_all(path, raw.data(), raw.size());
}

DepthMap load_depth_pfm(const std::string& path) {
  std::vector<char> raw = read_all(path);
  std::size_t pos = 0;
  auto token = [&]() -> std::string {
    while (pos < raw.size() && std::isspace(static_cast<unsigned char>(raw[pos]))) ++pos;
    std::size_t start = pos;
    while (pos < raw.size() && !std::isspace(static_cast<unsigned char>(raw[pos]))) ++pos;
    return std::string(raw.begin() + start, raw.begin() + pos);
  };
  std::string magic = token();
  if (magic != "Pf") fail("PFM " + path + ": bad magic \"" + magic + "\" (only grayscale Pf)");
  int w = 0, h = 0;
  double scale = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    scale = std::stod(token());
  } catch (...) {
    fail("PFM " + path + ": malformed header");
  }
  if (scale >= 0) fail("PFM " + path + ": big-endian scale " + std::to_string(scale) +
                       " unsupported");
  if (w <= 0 || h <= 0) fail("PFM " + path + ": bad dimensions");
  ++pos;
  std::size_t need = static_cast<std::size_t>(w) * h * 4;
  if (raw.size() - pos < need) fail("PFM " + path + ": truncated pixel data");
  DepthMap map = DepthMap::invalid_map(w, h);
  for (int row = 0; row < h; ++row) {
    int v = h - 1 - row;  // PFM rows are bottom-up
    for (int u = 0; u < w; ++u) {
      float f;
      std::memcpy(&f, raw.data() + pos + (static_cast<std::size_t>(row) * w + u) * 4, 4);
      std::size_t i = map.idx(v, u);
      map.depth[i] = f;
      map.valid[i] = f > 0 ? 1 : 0;
    }
  }
  return map;
}

void save_depth_pfm(const DepthMap& map, const std::string& path) {
  std::string header = "Pf\n" + std::to_string(map.width) + " " + std::to_string(map.height) +
                       "\n-1.0\n";
  std::vector<char> raw(header.begin(), header.end());
  raw.resize(raw.size() + static_cast<std::size_t>(map.width) * map.height * 4);
  char* px = raw.data() + header.size();
  for (int row = 0; row < map.height; ++row) {
    int v = map.height - 1 - row;
    for (int u = 0; u < map.width; ++u) {
      float f = map.valid[map.idx(v, u)] ? static_cast<float>(map.depth[map.idx(v, u)]) : 0.0f;
      std::memcpy(px + (static_cast<std::size_t>(row) * map.width + u) * 4, &f, 4);
    }
  }
  write_all(path, raw.data(), raw.size());
}

namespace {

nlohmann::json camera_to_json(const geom::CameraModel& c) {
  nlohmann::json j;
  j["K"] = {c.fx, 0.0, c.cx, 0.0, c.fy, c.cy, 0.0, 0.0, 1.0};
  std::vector<double> pose(12);
  for (int r = 0; r < 3; ++r) {
    for (int k = 0; k < 3; ++k) pose[r * 4 + k] = c.rotation.m[r * 3 + k];
  }
  pose[3] = c.translation.x;
  pose[7] = c.translation.y;
  pose[11] = c.translation.z;
  j["pose"] = pose;
  j["width"] = c.width;
  j["height"] = c.height;
  return j;
}

geom::CameraModel camera_from_json(const nlohmann::json& j) {
  geom::CameraModel c;
  auto K = j.at("K").get<std::vector<double>>();
  auto pose = j.at("pose").get<std::vector<double>>();
  if (K.size() != 9 || pose.size() != 12) fail("manifest: camera needs 9 K + 12 pose numbers");
  c.fx = K[0];
  c.fy = K[4];
  c.cx = K[2];
  c.cy = K[5];
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 3; ++k) c.rotation.m[r * 3 + k] = pose[r * 4 + k];
  c.translation = {pose[3], pose[7], pose[11]};
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  c.validate();
  return c;
}

}  // namespace

Manifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail("cannot open manifest " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    fail("manifest " + path + ": " + e.what());
  }
  Manifest m;
  auto& g = j.at("grid");
  m.grid.x_min = g.at("x").at(0);
  m.grid.x_max = g.at("x").at(1);
  m.grid.y_min = g.at("y").at(0);
  m.grid.y_max = g.at("y").at(1);
  m.grid.z_min = g.at("z").at(0);
  m.grid.z_max = g.at("z").at(1);
  m.grid.size_x = g.at("voxel").at(0);
  m.grid.size_y = g.at("voxel").at(1);
  m.grid.size_z = g.at("voxel").at(2);
  m.grid.validate();
  for (const auto& s : j.at("samples")) {
    SampleRecord rec;
    rec.cloud_path = s.at("cloud");
    if (s.contains("scene")) rec.scene_path = s.at("scene");
    for (const auto& img : s.at("images")) rec.image_paths.push_back(img);
    for (const auto& cam : s.at("cameras")) rec.cameras.push_back(camera_from_json(cam));
    if (rec.image_paths.size() != rec.cameras.size())
      fail("manifest: image/camera count mismatch");
    m.samples.push_back(std::move(rec));
  }
  return m;
}

void save_manifest(const Manifest& manifest, const std::string& path) {
  nlohmann::json j;
  j["grid"] = {{"x", {manifest.grid.x_min, manifest.grid.x_max}},
               {"y", {manifest.grid.y_min, manifest.grid.y_max}},
               {"z", {manifest.grid.z_min, manifest.grid.z_max}},
               {"voxel", {manifest.grid.size_x, manifest.grid.size_y, manifest.grid.size_z}}};
  j["samples"] = nlohmann::json::array();
  for (const auto& s : manifest.samples) {
    nlohmann::json rec;
    rec["cloud"] = s.cloud_path;
    if (!s.scene_path.empty()) rec["scene"] = s.scene_path;
    rec["images"] = s.image_paths;
    rec["cameras"] = nlohmann::json::array();
    for (const auto& c : s.cameras) rec["cameras"].push_back(camera_to_json(c));
    j["samples"].push_back(rec);
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) fail("cannot write manifest " + path);
  f << j.dump(2) << "\n";
}

}  // namespace nsmae::data
