#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nsmae/geometry.hpp"

namespace nsmae::data {

struct Point {
  double x = 0, y = 0, z = 0;
  double r = 0;  // intensity in [0,1]
};

struct PointCloud {
  std::vector<Point> points;
};

// RGB values in [0,1], row-major top-down, channel-last.
struct ImageFrame {
  int width = 0, height = 0;
  std::vector<double> values;  // height * width * 3

  double& at(int v, int u, int c) { return values[(static_cast<std::size_t>(v) * width + u) * 3 + c]; }
  double at(int v, int u, int c) const {
    return values[(static_cast<std::size_t>(v) * width + u) * 3 + c];
  }
  static ImageFrame zeros(int w, int h) {
    return ImageFrame{w, h, std::vector<double>(static_cast<std::size_t>(w) * h * 3, 0.0)};
  }
};

// Depth plus validity per cell; invalid cells carry depth 0.
struct DepthMap {
  int width = 0, height = 0;
  std::vector<double> depth;
  std::vector<std::uint8_t> valid;

  std::size_t idx(int v, int u) const { return static_cast<std::size_t>(v) * width + u; }
  static DepthMap invalid_map(int w, int h) {
    std::size_t n = static_cast<std::size_t>(w) * h;
    return DepthMap{w, h, std::vector<double>(n, 0.0), std::vector<std::uint8_t>(n, 0)};
  }
};

// Mean offset from voxel center (3) + mean intensity + point count.
inline constexpr int kVoxelFeatureDim = 5;

struct VoxelFeature {
  double mean_dx = 0, mean_dy = 0, mean_dz = 0;
  double mean_intensity = 0;
  double count = 0;
};

struct VoxelGrid {
  geom::GridSpec grid;
  std::map<std::size_t, VoxelFeature> occupied;  // flat voxel index -> feature
  std::size_t dropped = 0;                       // out-of-range points
};

// Raw .bin of little-endian float32 (x, y, z, r) quadruplets.
PointCloud load_point_cloud_bin(const std::string& path);
void save_point_cloud_bin(const PointCloud& cloud, const std::string& path);

VoxelGrid voxelize(const PointCloud& cloud, const geom::GridSpec& grid);

// Points with camera-frame depth > 0 landing inside the image.
std::vector<geom::ProjectedPoint> project_points(const PointCloud& cloud,
                                                 const geom::CameraModel& camera);

// Per pixel, minimum camera-frame depth among projected points (z-buffer);
// ties broken by earlier point index.
DepthMap make_perspective_depth_target(const PointCloud& cloud, const geom::CameraModel& camera);

// Per BEV cell, z_max minus the highest return in the column.
DepthMap make_bev_depth_target(const PointCloud& cloud, const geom::GridSpec& grid);

// Binary PPM, P6 maxval 255.
ImageFrame load_image_ppm(const std::string& path);
void save_image_ppm(const ImageFrame& img, const std::string& path);

// Grayscale PFM "Pf", little-endian (scale -1.0), bottom-up rows. Invalid
// cells are stored as 0.
DepthMap load_depth_pfm(const std::string& path);
void save_depth_pfm(const DepthMap& map, const std::string& path);

// Dataset manifest: one entry per sample.
struct SampleRecord {
  std::string cloud_path;
  std::string scene_path;  // optional SceneSpec JSON
  std::vector<std::string> image_paths;
  std::vector<geom::CameraModel> cameras;
};

struct Manifest {
  geom::GridSpec grid;
  std::vector<SampleRecord> samples;
};

Manifest load_manifest(const std::string& path);
void save_manifest(const Manifest& manifest, const std::string& path);

}  // namespace nsmae::data
