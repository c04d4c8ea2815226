#pragma once

#include <cstdint>
#include <vector>

#include "nsmae/dataio.hpp"

namespace nsmae::mask {

struct PatchMask {
  int patch = 0;                    // patch edge length s, pixels
  int patches_x = 0, patches_y = 0;
  std::vector<std::uint8_t> mask;   // 1 = masked, row-major over patches
  std::uint64_t seed = 0;

  std::size_t masked_count() const;
};

struct MaskedImage {
  data::ImageFrame image;           // masked patches replaced by the token
  PatchMask mask;
  std::vector<double> token;        // s * s * 3, row-major
};

enum class VoxelMaskMode { kUniform, kRangeAware };

struct VoxelMask {
  std::vector<std::size_t> masked;  // flat voxel indices, sorted
  VoxelMaskMode mode = VoxelMaskMode::kUniform;
  std::uint64_t seed = 0;
};

// Exactly round(ratio * patch count) patches replaced by the token, chosen
// uniformly without replacement from the seed. `s` must tile the image.
MaskedImage mask_image(const data::ImageFrame& image, int s, double ratio,
                       const std::vector<double>& token, std::uint64_t seed);

// Removes exactly round(ratio * |occupied|) voxels. Range-aware mode splits
// occupied voxels into 3 equal-width radial bands by horizontal distance from
// the origin and applies (ratio+0.05, ratio, ratio-0.05) near-to-far, each
// clamped to [0,1].
std::pair<data::VoxelGrid, VoxelMask> mask_voxels(const data::VoxelGrid& grid, double ratio,
                                                  VoxelMaskMode mode, std::uint64_t seed);

}  // namespace nsmae::mask
