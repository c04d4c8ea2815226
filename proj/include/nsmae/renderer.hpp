#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "nsmae/embednet.hpp"
#include "nsmae/geometry.hpp"

namespace nsmae::render {

struct RadianceSample {
  geom::Vec3 position;
  geom::Vec3 direction;
  double sigma = 0;
  std::array<double, 3> color{0, 0, 0};
};

// (sigma, color) at a position along a view direction.
using FieldFn = std::function<RadianceSample(const geom::Vec3&, const geom::Vec3&)>;

struct RenderRow {
  std::vector<double> value;    // rendered color (3) or depth (1)
  std::vector<double> weights;  // w_i per sample
  double final_transmittance = 1.0;
};

struct RenderedMap {
  geom::ViewTag view = geom::ViewTag::kPerspective;
  std::vector<geom::RayProvenance> provenance;
  std::vector<RenderRow> rows;
};

// Quadrature weights for one ray: T_i = exp(-sum_{j<i} sigma_j delta),
// w_i = T_i (1 - exp(-sigma_i delta)).
struct Quadrature {
  std::vector<double> weights;
  double final_transmittance = 1.0;
};
Quadrature ray_quadrature(const std::vector<double>& sigma, double delta);

RenderRow render_color(const geom::Ray& ray, const FieldFn& field);
RenderRow render_depth(const geom::Ray& ray, const FieldFn& field);

// Generic modality render, sum_i w_i a_i. Registered heads: "color",
// "depth", "opacity".
RenderRow render_modality(const geom::Ray& ray, const FieldFn& field, const std::string& head);

// Trilinear interpolation of the volume at p (grid of voxel-center nodes,
// edge-clamped); zero outside the grid bounding box.
std::vector<double> sample_volume(const net::FeatureVolume& volume, const geom::Vec3& p,
                                  bool* inside = nullptr);

// The conditional rendering network f(x, w, e): trilinear feature +
// positional encodings through the two MLP heads.
RadianceSample query_field(const net::FeatureVolume& volume, const geom::Vec3& x,
                           const geom::Vec3& omega, const net::ParamSet& params,
                           const net::NetConfig& cfg);

FieldFn make_network_field(const net::FeatureVolume& volume, const net::ParamSet& params,
                           const net::NetConfig& cfg);

// Batch render: perspective batches produce color + depth rows, BEV batches
// depth only. `threads` > 1 parallelizes over rays with bit-identical output.
struct ViewRender {
  RenderedMap color;  // empty for BEV
  RenderedMap depth;
};
ViewRender render_view(const geom::RayBatch& rays, const net::FeatureVolume& volume,
                       const net::ParamSet& params, const net::NetConfig& cfg, int threads = 1);

// --- differentiable batched path -------------------------------------------

struct RenderNodes {
  int weights = -1;              // [R, N]
  int color = -1;                // [R, 3] when requested
  int depth = -1;                // [R]
  int final_transmittance = -1;  // [R]
};

// Builds the query-render graph for a homogeneous ray set against a feature
// volume node of shape [X, Y, Z, C]. Sample positions outside the grid are
// forced to sigma = 0.
RenderNodes render_rays_tape(ndgrad::Tape& tape, int volume_node, const geom::GridSpec& grid,
                             const std::vector<geom::Ray>& rays, const net::ParamNodes& pn,
                             const net::NetConfig& cfg, bool with_color);

}  // namespace nsmae::render
