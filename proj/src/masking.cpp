#include "nsmae/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace nsmae::mask {

namespace {

// First k entries of a seeded Fisher-Yates shuffle of 0..n-1.
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k,
                                                    std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < k && i + 1 < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(std::min(k, n));
  return idx;
}

std::size_t exact_count(double ratio, std::size_t total) {
  return static_cast<std::size_t>(std::llround(ratio * static_cast<double>(total)));
}

}  // namespace

std::size_t PatchMask::masked_count() const {
  std::size_t n = 0;
  for (auto m : mask) n += m;
  return n;
}

MaskedImage mask_image(const data::ImageFrame& image, int s, double ratio,
                       const std::vector<double>& token, std::uint64_t seed) {
  if (s <= 0 || image.width % s != 0 || image.height % s != 0)
    throw std::runtime_error("mask_image: patch size " + std::to_string(s) +
                             " does not tile " + std::to_string(image.width) + "x" +
                             std::to_string(image.height));
  if (ratio < 0 || ratio > 1) throw std::runtime_error("mask_image: ratio outside [0,1]");
  if (token.size() != static_cast<std::size_t>(s) * s * 3)
    throw std::runtime_error("mask_image: token must hold s*s*3 values");

  MaskedImage out;
  out.image = image;
  out.token = token;
  out.mask.patch = s;
  out.mask.patches_x = image.width / s;
  out.mask.patches_y = image.height / s;
  out.mask.seed = seed;
  std::size_t total = static_cast<std::size_t>(out.mask.patches_x) * out.mask.patches_y;
  out.mask.mask.assign(total, 0);

  std::mt19937_64 rng(seed);
  for (std::size_t p : sample_without_replacement(total, exact_count(ratio, total), rng))
    out.mask.mask[p] = 1;

  for (int py = 0; py < out.mask.patches_y; ++py)
    for (int px = 0; px < out.mask.patches_x; ++px) {
      if (!out.mask.mask[static_cast<std::size_t>(py) * out.mask.patches_x + px]) continue;
      for (int dy = 0; dy < s; ++dy)
        for (int dx = 0; dx < s; ++dx)
          for (int c = 0; c < 3; ++c)
            out.image.at(py * s + dy, px * s + dx, c) =
                token[(static_cast<std::size_t>(dy) * s + dx) * 3 + c];
    }
  return out;
}

std::pair<data::VoxelGrid, VoxelMask> mask_voxels(const data::VoxelGrid& grid, double ratio,
                                                  VoxelMaskMode mode, std::uint64_t seed) {
  if (ratio < 0 || ratio > 1) throw std::runtime_error("mask_voxels: ratio outside [0,1]");
  std::vector<std::size_t> occupied;
  occupied.reserve(grid.occupied.size());
  for (const auto& [idx, feat] : grid.occupied) occupied.push_back(idx);

  std::mt19937_64 rng(seed);
  VoxelMask vmask;
  vmask.mode = mode;
  vmask.seed = seed;

  if (mode == VoxelMaskMode::kUniform) {
    for (std::size_t i : sample_without_replacement(occupied.size(),
                                                    static_cast<std::size_t>(std::llround(
                                                        ratio * double(occupied.size()))),
                                                    rng))
      vmask.masked.push_back(occupied[i]);
  } else {
    // 3 equal-width radial bands over [0, r_max] horizontal distance.
    std::size_t ey = grid.grid.extent_y(), ez = grid.grid.extent_z();
    auto radius = [&](std::size_t flat) {
      std::size_t ix = flat / (ey * ez);
      std::size_t iy = (flat / ez) % ey;
      geom::Vec3 c = grid.grid.voxel_center(ix, iy, 0);
      return std::hypot(c.x, c.y);
    };
    double r_max = 0;
    for (std::size_t idx : occupied) r_max = std::max(r_max, radius(idx));
    std::array<std::vector<std::size_t>, 3> bands;
    for (std::size_t idx : occupied) {
      int b = r_max > 0 ? std::min(2, static_cast<int>(radius(idx) / r_max * 3.0)) : 0;
      bands[static_cast<std::size_t>(b)].push_back(idx);
    }
    const double band_ratio[3] = {std::clamp(ratio + 0.05, 0.0, 1.0), ratio,
                                  std::clamp(ratio - 0.05, 0.0, 1.0)};
    for (int b = 0; b < 3; ++b) {
      auto& band = bands[static_cast<std::size_t>(b)];
      std::size_t k = static_cast<std::size_t>(std::llround(band_ratio[b] * double(band.size())));
      for (std::size_t i : sample_without_replacement(band.size(), k, rng))
        vmask.masked.push_back(band[i]);
    }
  }
  std::sort(vmask.masked.begin(), vmask.masked.end());

  data::VoxelGrid masked_grid = grid;
  for (std::size_t idx : vmask.masked) masked_grid.occupied.erase(idx);
  return {std::move(masked_grid), std::move(vmask)};
}

}  // namespace nsmae::mask
