#include <doctest.h>

#include <cmath>
#include <random>

#include "nsmae/masking.hpp"

using namespace nsmae;

namespace {

data::ImageFrame random_image(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  data::ImageFrame img = data::ImageFrame::zeros(w, h);
  for (auto& v : img.values) v = d(rng);
  return img;
}

std::vector<double> gray_token(int s) {
  return std::vector<double>(static_cast<std::size_t>(s) * s * 3, 0.5);
}

geom::GridSpec desk_grid() {
  geom::GridSpec g;
  g.x_min = -4;
  g.x_max = 4;
  g.y_min = -4;
  g.y_max = 4;
  g.z_min = -2;
  g.z_max = 2;
  g.size_x = g.size_y = g.size_z = 0.5;
  return g;
}

}  // namespace

TEST_SUITE("masking") {

TEST_CASE("ratio 0 and ratio 1 image masking") {
  auto img = random_image(32, 32, 1);
  auto none = mask::mask_image(img, 8, 0.0, gray_token(8), 9);
  CHECK(none.mask.masked_count() == 0);
  for (std::size_t i = 0; i < img.values.size(); ++i) CHECK(none.image.values[i] == img.values[i]);
  auto all = mask::mask_image(img, 8, 1.0, gray_token(8), 9);
  CHECK(all.mask.masked_count() == 16);
  for (auto v : all.image.values) CHECK(v == 0.5);
}

TEST_CASE("exact masked counts over the size/patch/ratio matrix") {
  struct Dims {
    int w, h;
  };
  for (Dims dims : {Dims{64, 64}, Dims{352, 128}, Dims{704, 256}}) {
    auto img = random_image(dims.w, dims.h, 2);
    for (int s : {4, 8}) {
      for (double ratio : {0.25, 0.5, 0.75}) {
        auto masked = mask::mask_image(img, s, ratio, gray_token(s), 123);
        std::size_t total =
            static_cast<std::size_t>(dims.w / s) * static_cast<std::size_t>(dims.h / s);
        CHECK(masked.mask.masked_count() ==
              static_cast<std::size_t>(std::llround(ratio * static_cast<double>(total))));
        // unmasked pixels bit-identical
        for (int py = 0; py < masked.mask.patches_y; ++py)
          for (int px = 0; px < masked.mask.patches_x; ++px) {
            if (masked.mask.mask[static_cast<std::size_t>(py) * masked.mask.patches_x + px])
              continue;
            for (int v = py * s; v < (py + 1) * s; ++v)
              for (int u = px * s; u < (px + 1) * s; ++u)
                for (int c = 0; c < 3; ++c) {
                  if (masked.image.at(v, u, c) != img.at(v, u, c)) {
                    REQUIRE(masked.image.at(v, u, c) == img.at(v, u, c));
                  }
                }
          }
      }
    }
  }
}

TEST_CASE("half-masking the 256x704 frame at patch 8") {
  auto img = random_image(704, 256, 3);
  auto masked = mask::mask_image(img, 8, 0.5, gray_token(8), 42);
  CHECK(masked.mask.patches_x * masked.mask.patches_y == 2816);
  CHECK(masked.mask.masked_count() == 1408);
}

TEST_CASE("masking is deterministic per seed and varies across seeds") {
  auto img = random_image(64, 64, 4);
  auto a = mask::mask_image(img, 4, 0.5, gray_token(4), 7);
  auto b = mask::mask_image(img, 4, 0.5, gray_token(4), 7);
  CHECK(a.mask.mask == b.mask.mask);
  auto c = mask::mask_image(img, 4, 0.5, gray_token(4), 8);
  CHECK(a.mask.mask != c.mask.mask);
}

TEST_CASE("patch size must tile the image") {
  auto img = random_image(30, 30, 5);
  CHECK_THROWS(static_cast<void>(mask::mask_image(img, 8, 0.5, gray_token(8), 1)));
}

TEST_CASE("exact voxel mask counts") {
  geom::GridSpec g = desk_grid();
  data::VoxelGrid vg;
  vg.grid = g;
  for (std::size_t i = 0; i < 10; ++i) vg.occupied[i * 13 + 1] = {0, 0, 0, 0.5, 2};
  auto [kept, vm] = mask::mask_voxels(vg, 0.9, mask::VoxelMaskMode::kUniform, 3);
  CHECK(vm.masked.size() == 9);
  CHECK(kept.occupied.size() == 1);
  auto [unchanged, empty_mask] = mask::mask_voxels(vg, 0.0, mask::VoxelMaskMode::kUniform, 3);
  CHECK(empty_mask.masked.empty());
  CHECK(unchanged.occupied.size() == 10);
  for (auto idx : vm.masked) CHECK(vg.occupied.count(idx) == 1);
}

TEST_CASE("range-aware bands mask near voxels harder") {
  geom::GridSpec g;
  g.x_min = 0;
  g.x_max = 300;
  g.y_min = 0;
  g.y_max = 1;
  g.z_min = 0;
  g.z_max = 1;
  g.size_x = 1;
  g.size_y = 1;
  g.size_z = 1;
  data::VoxelGrid vg;
  vg.grid = g;
  // 100 voxels in each third of the radial range
  for (std::size_t ix = 0; ix < 300; ++ix) vg.occupied[g.flat_index(ix, 0, 0)] = {0, 0, 0, 1.0, 1};
  auto [kept, vm] = mask::mask_voxels(vg, 0.8, mask::VoxelMaskMode::kRangeAware, 17);
  CHECK(vm.masked.size() == 85 + 80 + 75);
  std::size_t near = 0, mid = 0, far = 0;
  for (auto idx : vm.masked) {
    double x = g.voxel_center(idx / (g.extent_y() * g.extent_z()), 0, 0).x;
    if (x < 100)
      ++near;
    else if (x < 200)
      ++mid;
    else
      ++far;
  }
  CHECK(near == 85);
  CHECK(mid == 80);
  CHECK(far == 75);
}

TEST_CASE("masking never touches reconstruction inputs") {
  auto img = random_image(64, 64, 6);
  auto before = img.values;
  auto masked = mask::mask_image(img, 8, 0.75, gray_token(8), 11);
  CHECK(img.values == before);

  geom::GridSpec g = desk_grid();
  data::VoxelGrid vg;
  vg.grid = g;
  for (std::size_t i = 0; i < 40; ++i) vg.occupied[i * 7] = {0.1, 0.2, 0.3, 0.4, 1};
  auto occ_before = vg.occupied;
  auto [kept, vm] = mask::mask_voxels(vg, 0.8, mask::VoxelMaskMode::kUniform, 12);
  CHECK(vg.occupied.size() == occ_before.size());
}

TEST_CASE("exact counts across the ratio sweep") {
  auto img = random_image(64, 32, 7);
  for (int tenth = 0; tenth <= 10; ++tenth) {
    double ratio = tenth / 10.0;
    auto masked = mask::mask_image(img, 4, ratio, gray_token(4), 99);
    CHECK(masked.mask.masked_count() ==
          static_cast<std::size_t>(std::llround(ratio * 128.0)));
  }
}

}  // TEST_SUITE
