#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "nsmae/dataio.hpp"
#include "nsmae/geometry.hpp"

namespace nsmae::synth {

enum class ShapeKind : std::uint8_t { kBox, kSphere };

struct Primitive {
  ShapeKind kind = ShapeKind::kBox;
  geom::Vec3 center;
  geom::Vec3 half_extent;  // box half sizes; spheres use half_extent.x as radius
  double density = 1.0;    // per meter
  std::array<double, 3> color{1, 1, 1};

  bool contains(const geom::Vec3& p) const;
  // Entry/exit ray parameters, or false if the ray misses.
  bool intersect(const geom::Vec3& o, const geom::Vec3& d, double& t_in, double& t_out) const;
};

struct SceneSpec {
  std::vector<Primitive> primitives;
  std::uint64_t seed = 0;
};

// Constant density and color on one ray segment.
struct RaySegment {
  double t0 = 0, t1 = 0;
  double sigma = 0;
  std::array<double, 3> color{0, 0, 0};
};

struct OracleResult {
  std::array<double, 3> color{0, 0, 0};
  double depth = 0;          // E[t - t_near] under the render weight density
  double transmittance = 1;  // at t_max
  double opacity() const { return 1.0 - transmittance; }
};

// Deterministic scene with `count` primitives placed inside the grid.
SceneSpec generate_scene(std::uint64_t seed, int count_min, int count_max,
                         const geom::GridSpec& grid, double density_min = 10.0,
                         double density_max = 30.0);

// The piecewise-constant density/color profile along a ray, restricted to
// [t_min, t_max]. Overlaps add densities; colors mix density-weighted.
std::vector<RaySegment> ray_segments(const SceneSpec& scene, const geom::Vec3& origin,
                                     const geom::Vec3& dir, double t_min, double t_max);

// Closed-form volume rendering over the segment decomposition: exact
// transmittance, color and continuous expected depth. No quadrature.
OracleResult oracle_render(const geom::Ray& ray, const SceneSpec& scene);

// Expected value of the staircase distance floor((t - t_near)/delta)*delta,
// evaluated with analytic per-interval transmittance. This is the quantity
// the discrete depth estimator converges to sample-for-sample.
double oracle_depth_staircase(const geom::Ray& ray, const SceneSpec& scene);

// Transmittance at ray parameter t, analytic.
double oracle_transmittance_at(const SceneSpec& scene, const geom::Vec3& origin,
                               const geom::Vec3& dir, double t_near, double t);

// First point where accumulated optical depth crosses ln 2, or miss.
bool first_surface(const SceneSpec& scene, const geom::Vec3& origin, const geom::Vec3& dir,
                   double t_max, double& t_hit, std::array<double, 3>& color_hit);

// Regular angular sweep from `origin`; each crossing emits one point whose
// intensity is the luminance of the local color mix.
data::PointCloud sample_lidar(const SceneSpec& scene, const geom::Vec3& origin, int n_azimuth,
                              int n_elevation, double elevation_min, double elevation_max,
                              double t_max);

// Per-pixel analytic color render.
data::ImageFrame rasterize_image(const SceneSpec& scene, const geom::CameraModel& camera,
                                 double t_max);

// Ground-truth occupancy (voxel center inside any primitive), one byte per
// voxel in grid flat-index order.
std::vector<std::uint8_t> occupancy_labels(const SceneSpec& scene, const geom::GridSpec& grid);

SceneSpec load_scene_json(const std::string& path);
void save_scene_json(const SceneSpec& scene, const std::string& path);

// Dataset of synthetic scenes written in the dataio formats with a manifest.
struct SynthDatasetParams {
  int n_scenes = 32;
  int count_min = 2, count_max = 4;
  int image_width = 64, image_height = 64;
  int n_cameras = 2;
  int lidar_azimuth = 24, lidar_elevation = 6;
  int lidar_noise_points = 0;  // spurious uniform returns added per scene
  double density_min = 1.5, density_max = 5.0;
  double lidar_elevation_min = -0.45, lidar_elevation_max = 0.45;  // radians
  double t_max = 30.0;
  std::uint64_t seed = 1;
};

std::vector<geom::CameraModel> default_cameras(const geom::GridSpec& grid, int n, int width,
                                               int height);

data::Manifest write_synth_dataset(const SynthDatasetParams& params, const geom::GridSpec& grid,
                                   const std::string& out_dir);

}  // namespace nsmae::synth
