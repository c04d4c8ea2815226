#pragma once

#include <map>
#include <random>
#include <string>
#include <vector>

#include "nsmae/dataio.hpp"
#include "nsmae/masking.hpp"
#include "nsmae/tape.hpp"

namespace nsmae::net {

// Dense X*Y*Z*C feature volume in world coordinates.
struct FeatureVolume {
  geom::GridSpec grid;
  std::size_t channels = 0;
  Array values;  // shape [X, Y, Z, C]
};

struct ImageEmbedding {
  std::size_t height = 0, width = 0, channels = 0;
  Array values;  // shape [Hc, Wc, C]
  int camera_id = 0;
};

struct NetConfig {
  int c_img = 4;
  int c_lidar = 4;
  int conv_hidden = 8;
  int render_hidden = 16;
  int pe_freqs = 4;
  int patch = 8;  // mask token edge length
  bool use_camera = true;
  bool use_lidar = true;

  int fused_channels() const {
    return (use_camera ? c_img : 0) + (use_lidar ? c_lidar : 0);
  }
  int pe_dim() const { return 6 * pe_freqs; }  // sin+cos of 3 coords
};

// Named parameter arrays; names are unique and shapes fixed by the config.
struct ParamSet {
  std::map<std::string, Array> values;

  std::vector<std::string> names() const;
  const Array& at(const std::string& name) const;
  std::size_t total_scalars() const;
};

ParamSet init_params(const NetConfig& cfg, std::mt19937_64& rng);

// Input node per parameter, in name order (the gradient ordering contract).
struct ParamNodes {
  std::map<std::string, int> ids;
  std::vector<std::string> order;

  int at(const std::string& name) const;
};

ParamNodes add_param_inputs(ndgrad::Tape& tape, const ParamSet& params);

// Masked image as a tape node: unmasked pixels from a constant copy of the
// source, masked pixels wired to the learnable token input.
int build_masked_image(ndgrad::Tape& tape, const data::ImageFrame& image,
                       const mask::PatchMask& pmask, int token_node);

// Two stride-2 3x3 conv + softplus blocks, then a 3x3 conv. Output node has
// shape [H/4, W/4, c_img].
int encode_camera(ndgrad::Tape& tape, int image_node, const ParamNodes& pn, const NetConfig& cfg);

// Per-voxel linear + softplus over the 5-number voxel feature, scattered
// dense, then one 3x3x3 conv. Output [X, Y, Z, c_lidar].
int encode_lidar(ndgrad::Tape& tape, const data::VoxelGrid& grid, const ParamNodes& pn,
                 const NetConfig& cfg);

// Deterministic unprojection: every voxel center inside a camera frustum
// receives the bilinearly sampled image feature at its projection scaled by
// 1/depth; cameras seeing the same voxel average. One embedding node per
// camera, paired by index. With no cameras the volume is zero.
int align_image_to_world(ndgrad::Tape& tape, const std::vector<int>& image_emb_nodes,
                         const std::vector<geom::CameraModel>& cameras,
                         const geom::GridSpec& grid, const NetConfig& cfg);

// Channel-wise concatenation [img; lidar].
int fuse(ndgrad::Tape& tape, int img_vol, int lidar_vol);

// Sinusoidal features sin/cos(2^k v) for k = 0..freqs-1, per coordinate.
void append_positional_encoding(std::vector<double>& out, const geom::Vec3& v, int freqs);

}  // namespace nsmae::net
