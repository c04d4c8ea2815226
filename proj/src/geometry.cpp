#include "nsmae/geometry.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace nsmae::geom {

double Mat3::det() const {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

void CameraModel::validate() const {
  if (!(fx > 0) || !(fy > 0)) throw std::runtime_error("camera: focal lengths must be positive");
  if (width <= 0 || height <= 0) throw std::runtime_error("camera: empty image plane");
  if (cx < 0 || cx >= width || cy < 0 || cy >= height)
    throw std::runtime_error("camera: principal point outside image");
  // R^T R == I and det == +1
  const auto& r = rotation.m;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double dot = 0;
      for (int k = 0; k < 3; ++k) dot += r[k * 3 + i] * r[k * 3 + j];
      double want = (i == j) ? 1.0 : 0.0;
      if (std::abs(dot - want) > 1e-9)
        throw std::runtime_error("camera: rotation not orthonormal");
    }
  if (std::abs(rotation.det() - 1.0) > 1e-9)
    throw std::runtime_error("camera: rotation determinant != +1");
}

std::array<double, 3> CameraModel::project(const Vec3& p) const {
  Vec3 cam = rotation.apply_transposed(p - translation);
  double u = fx * cam.x / cam.z + cx;
  double v = fy * cam.y / cam.z + cy;
  return {u, v, cam.z};
}

Vec3 CameraModel::pixel_direction(double u, double v) const {
  Vec3 cam{(u - cx) / fx, (v - cy) / fy, 1.0};
  return rotation.apply(cam).normalized();
}

std::size_t GridSpec::extent(double lo, double hi, double size) {
  if (!(size > 0) || !(hi > lo)) throw std::runtime_error("grid: degenerate axis");
  double e = std::round((hi - lo) / size);
  if (e < 1) throw std::runtime_error("grid: axis extent < 1");
  return static_cast<std::size_t>(e);
}

void GridSpec::validate() const {
  (void)extent_x();
  (void)extent_y();
  (void)extent_z();
}

std::optional<std::array<std::size_t, 3>> GridSpec::voxel_of(const Vec3& p) const {
  double fx = std::floor((p.x - x_min) / size_x);
  double fy = std::floor((p.y - y_min) / size_y);
  double fz = std::floor((p.z - z_min) / size_z);
  if (fx < 0 || fy < 0 || fz < 0) return std::nullopt;
  std::size_t ix = static_cast<std::size_t>(fx), iy = static_cast<std::size_t>(fy),
              iz = static_cast<std::size_t>(fz);
  if (ix >= extent_x() || iy >= extent_y() || iz >= extent_z()) return std::nullopt;
  return std::array<std::size_t, 3>{ix, iy, iz};
}

RayBatch perspective_rays(const CameraModel& camera, int stride, double delta, int sample_count,
                          double t_near) {
  camera.validate();
  if (stride < 1) throw std::runtime_error("perspective_rays: stride must be >= 1");
  if (!(delta > 0) || sample_count < 1)
    throw std::runtime_error("perspective_rays: bad sampling parameters");
  RayBatch batch;
  batch.view = ViewTag::kPerspective;
  for (int v = 0; v < camera.height; v += stride)
    for (int u = 0; u < camera.width; u += stride) {
      Ray ray;
      ray.origin = camera.translation;
      ray.direction = camera.pixel_direction(u + 0.5, v + 0.5);
      ray.t_near = t_near;
      ray.delta = delta;
      ray.sample_count = sample_count;
      batch.rays.push_back(ray);
      batch.provenance.push_back({u, v});
    }
  return batch;
}

RayBatch bev_rays(const GridSpec& grid, double delta) {
  grid.validate();
  if (!(delta > 0)) throw std::runtime_error("bev_rays: delta must be positive");
  int n = static_cast<int>(std::ceil((grid.z_max - grid.z_min) / delta));
  RayBatch batch;
  batch.view = ViewTag::kBev;
  for (std::size_t ix = 0; ix < grid.extent_x(); ++ix)
    for (std::size_t iy = 0; iy < grid.extent_y(); ++iy) {
      Ray ray;
      ray.origin = {grid.x_min + (ix + 0.5) * grid.size_x, grid.y_min + (iy + 0.5) * grid.size_y,
                    grid.z_max};
      ray.direction = {0, 0, -1};
      ray.t_near = 0;
      ray.delta = delta;
      ray.sample_count = n;
      batch.rays.push_back(ray);
      batch.provenance.push_back({static_cast<int>(ix), static_cast<int>(iy)});
    }
  return batch;
}

}  // namespace nsmae::geom
