#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

namespace nsmae::geom {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  double norm() const { return std::sqrt(dot(*this)); }
  Vec3 normalized() const {
    double n = norm();
    return {x / n, y / n, z / n};
  }
};

// Row-major 3x3.
struct Mat3 {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  Vec3 apply(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }
  Vec3 apply_transposed(const Vec3& v) const {
    return {m[0] * v.x + m[3] * v.y + m[6] * v.z, m[1] * v.x + m[4] * v.y + m[7] * v.z,
            m[2] * v.x + m[5] * v.y + m[8] * v.z};
  }
  double det() const;
};

// Pinhole camera: intrinsics in pixels, pose maps camera frame to world.
// Camera frame: +x right, +y down, +z forward.
struct CameraModel {
  double fx = 1, fy = 1, cx = 0, cy = 0;
  Mat3 rotation;     // camera -> world
  Vec3 translation;  // camera center in world
  int width = 0, height = 0;

  // Throws if the rotation is not orthonormal with det +1 (1e-9) or the
  // intrinsics are degenerate.
  void validate() const;

  // World point -> (u, v, camera-frame depth). Depth may be <= 0.
  std::array<double, 3> project(const Vec3& p) const;
  // Unit world-space direction through pixel position (u, v).
  Vec3 pixel_direction(double u, double v) const;
};

enum class ViewTag : std::uint8_t { kPerspective, kBev };

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit
  double t_near = 0;
  double delta = 0;  // sample spacing, meters
  int sample_count = 0;

  // Midpoint of sample interval i (0-based): t_near + (i + 1/2) * delta.
  double sample_t(int i) const { return t_near + (i + 0.5) * delta; }
  Vec3 sample_pos(int i) const { return origin + direction * sample_t(i); }
};

struct RayProvenance {
  int a = 0, b = 0;  // pixel (u, v) or BEV cell (ix, iy)
};

struct RayBatch {
  std::vector<Ray> rays;
  std::vector<RayProvenance> provenance;
  ViewTag view = ViewTag::kPerspective;
};

struct GridSpec {
  double x_min = 0, x_max = 0;
  double y_min = 0, y_max = 0;
  double z_min = 0, z_max = 0;
  double size_x = 1, size_y = 1, size_z = 1;

  std::size_t extent_x() const { return extent(x_min, x_max, size_x); }
  std::size_t extent_y() const { return extent(y_min, y_max, size_y); }
  std::size_t extent_z() const { return extent(z_min, z_max, size_z); }
  std::size_t num_voxels() const { return extent_x() * extent_y() * extent_z(); }

  std::size_t flat_index(std::size_t ix, std::size_t iy, std::size_t iz) const {
    return (ix * extent_y() + iy) * extent_z() + iz;
  }
  Vec3 voxel_center(std::size_t ix, std::size_t iy, std::size_t iz) const {
    return {x_min + (ix + 0.5) * size_x, y_min + (iy + 0.5) * size_y, z_min + (iz + 0.5) * size_z};
  }
  // Voxel containing p by the floor convention, or nullopt when out of range.
  std::optional<std::array<std::size_t, 3>> voxel_of(const Vec3& p) const;

  void validate() const;

 private:
  static std::size_t extent(double lo, double hi, double size);
};

// One ray per retained pixel center, stepping by `stride` in u and v.
RayBatch perspective_rays(const CameraModel& camera, int stride, double delta, int sample_count,
                          double t_near = 0.5);

// One downward ray per BEV cell, origin on the z_max plane, t_near = 0,
// sample count ceil((z_max - z_min) / delta).
RayBatch bev_rays(const GridSpec& grid, double delta);

struct ProjectedPoint {
  double u = 0, v = 0, depth = 0;
  std::size_t index = 0;
};

}  // namespace nsmae::geom
