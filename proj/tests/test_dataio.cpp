#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "nsmae/dataio.hpp"
#include "nsmae/geometry.hpp"

using namespace nsmae;

namespace {

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
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

TEST_SUITE("dataio") {

TEST_CASE("point cloud binary round trip") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> d(-50.0, 50.0);
  data::PointCloud cloud;
  for (int i = 0; i < 1000; ++i)
    cloud.points.push_back({d(rng), d(rng), d(rng), std::abs(d(rng)) / 50.0});
  std::string path = tmp_path("cloud_rt.bin");
  data::save_point_cloud_bin(cloud, path);
  data::PointCloud back = data::load_point_cloud_bin(path);
  REQUIRE(back.points.size() == 1000);
  for (std::size_t i = 0; i < 1000; ++i) {
    CHECK(back.points[i].x == static_cast<double>(static_cast<float>(cloud.points[i].x)));
    CHECK(back.points[i].r == static_cast<double>(static_cast<float>(cloud.points[i].r)));
  }
  std::remove(path.c_str());
}

TEST_CASE("empty and fixed-size binary files") {
  std::string path = tmp_path("cloud_small.bin");
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
  }
  CHECK(data::load_point_cloud_bin(path).points.empty());
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    float vals[8] = {1.f, 2.f, 3.f, 0.5f, -1.f, -2.f, -3.f, 0.25f};
    f.write(reinterpret_cast<char*>(vals), 32);
  }
  auto cloud = data::load_point_cloud_bin(path);
  REQUIRE(cloud.points.size() == 2);
  CHECK(cloud.points[0].x == 1.0);
  CHECK(cloud.points[1].r == 0.25);
  std::remove(path.c_str());
}

TEST_CASE("truncated point cloud names the byte offset") {
  std::string path = tmp_path("cloud_trunc.bin");
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write("123456789012345678901234", 24);
  }
  CHECK_THROWS_WITH_AS(static_cast<void>(data::load_point_cloud_bin(path)),
                       doctest::Contains("24"), std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("paper-scale grid extents") {
  geom::GridSpec g;
  g.x_min = -54;
  g.x_max = 54;
  g.y_min = -54;
  g.y_max = 54;
  g.z_min = -5;
  g.z_max = 3;
  g.size_x = g.size_y = 0.075;
  g.size_z = 0.2;
  CHECK(g.extent_x() == 1440);
  CHECK(g.extent_y() == 1440);
  CHECK(g.extent_z() == 40);
}

TEST_CASE("voxelize floor convention and bookkeeping") {
  geom::GridSpec g = desk_grid();
  data::PointCloud cloud;
  cloud.points.push_back({-4.0, -4.0, -2.0, 0.5});  // exact grid min
  cloud.points.push_back({10.0, 0.0, 0.0, 0.5});    // out of range
  auto vg = data::voxelize(cloud, g);
  CHECK(vg.occupied.size() == 1);
  CHECK(vg.occupied.count(g.flat_index(0, 0, 0)) == 1);
  CHECK(vg.dropped == 1);
  CHECK(vg.dropped + 1 == cloud.points.size());
}

TEST_CASE("voxelize is order invariant") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> d(-4.0, 4.0), dz(-2.0, 2.0);
  data::PointCloud cloud;
  for (int i = 0; i < 500; ++i) cloud.points.push_back({d(rng), d(rng), dz(rng), 0.3});
  auto a = data::voxelize(cloud, desk_grid());
  std::reverse(cloud.points.begin(), cloud.points.end());
  auto b = data::voxelize(cloud, desk_grid());
  REQUIRE(a.occupied.size() == b.occupied.size());
  for (const auto& [idx, fa] : a.occupied) {
    const auto& fb = b.occupied.at(idx);
    CHECK(fa.count == fb.count);
    CHECK(fa.mean_dx == doctest::Approx(fb.mean_dx).epsilon(1e-12));
    CHECK(fa.mean_intensity == doctest::Approx(fb.mean_intensity).epsilon(1e-12));
  }
}

TEST_CASE("perspective depth target keeps the nearest point") {
  geom::CameraModel cam;
  cam.fx = cam.fy = 100;
  cam.cx = cam.cy = 32;
  cam.width = cam.height = 64;
  data::PointCloud cloud;
  cloud.points.push_back({0, 0, 9, 1.0});
  cloud.points.push_back({0, 0, 4, 1.0});
  auto dm = data::make_perspective_depth_target(cloud, cam);
  CHECK(dm.valid[dm.idx(32, 32)] == 1);
  CHECK(dm.depth[dm.idx(32, 32)] == 4.0);
  auto empty = data::make_perspective_depth_target(data::PointCloud{}, cam);
  for (auto v : empty.valid) CHECK(v == 0);
}

TEST_CASE("bev depth target measures from the top of the grid") {
  geom::GridSpec g = desk_grid();
  g.z_max = 3;
  data::PointCloud cloud;
  cloud.points.push_back({0.1, 0.1, 1.0, 1.0});
  auto dm = data::make_bev_depth_target(cloud, g);
  auto cell = g.voxel_of({0.1, 0.1, g.z_min});
  REQUIRE(cell.has_value());
  CHECK(dm.depth[dm.idx(static_cast<int>((*cell)[1]), static_cast<int>((*cell)[0]))] ==
        doctest::Approx(2.0));
  cloud.points.push_back({0.1, 0.1, -1.5, 1.0});  // lower return, same column
  auto dm2 = data::make_bev_depth_target(cloud, g);
  CHECK(dm2.depth[dm2.idx(static_cast<int>((*cell)[1]), static_cast<int>((*cell)[0]))] ==
        doctest::Approx(2.0));
}

TEST_CASE("bev depth target matches a brute-force column scan") {
  std::mt19937_64 rng(15);
  geom::GridSpec g = desk_grid();
  std::uniform_real_distribution<double> d(-4.0, 4.0), dz(-2.0, 2.0);
  data::PointCloud cloud;
  for (int i = 0; i < 400; ++i) cloud.points.push_back({d(rng), d(rng), dz(rng), 0.5});
  auto dm = data::make_bev_depth_target(cloud, g);
  std::map<std::pair<int, int>, double> best;
  for (const auto& p : cloud.points) {
    auto v = g.voxel_of({p.x, p.y, std::min(std::max(p.z, g.z_min), g.z_max - 1e-9)});
    if (!v) continue;
    auto key = std::make_pair(static_cast<int>((*v)[0]), static_cast<int>((*v)[1]));
    auto it = best.find(key);
    if (it == best.end() || p.z > it->second) best[key] = p.z;
  }
  std::size_t n_valid = 0;
  for (int iy = 0; iy < dm.height; ++iy)
    for (int ix = 0; ix < dm.width; ++ix) {
      auto it = best.find({ix, iy});
      if (dm.valid[dm.idx(iy, ix)]) {
        ++n_valid;
        REQUIRE(it != best.end());
        CHECK(dm.depth[dm.idx(iy, ix)] == doctest::Approx(g.z_max - it->second).epsilon(1e-12));
      }
    }
  CHECK(n_valid == best.size());
}

TEST_CASE("ppm pixel value mapping and round trip") {
  std::string path = tmp_path("img.ppm");
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << "P6\n1 1\n255\n";
    unsigned char px[3] = {255, 0, 0};
    f.write(reinterpret_cast<char*>(px), 3);
  }
  auto img = data::load_image_ppm(path);
  CHECK(img.at(0, 0, 0) == 1.0);
  CHECK(img.at(0, 0, 1) == 0.0);
  CHECK(img.at(0, 0, 2) == 0.0);

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  data::ImageFrame rand_img = data::ImageFrame::zeros(7, 5);
  for (auto& v : rand_img.values) v = d(rng);
  data::save_image_ppm(rand_img, path);
  auto back = data::load_image_ppm(path);
  data::save_image_ppm(back, path + "2");
  auto back2 = data::load_image_ppm(path + "2");
  for (std::size_t i = 0; i < back.values.size(); ++i) {
    CHECK(std::abs(back.values[i] - rand_img.values[i]) <= 0.5 / 255.0 + 1e-12);
    CHECK(back2.values[i] == back.values[i]);  // stable after one quantization
  }
  std::remove(path.c_str());
  std::remove((path + "2").c_str());
}

TEST_CASE("ppm with a wide maxval is rejected") {
  std::string path = tmp_path("img16.ppm");
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << "P6\n1 1\n65535\n";
    f.write("\0\0\0\0\0\0", 6);
  }
  CHECK_THROWS_WITH_AS(static_cast<void>(data::load_image_ppm(path)),
                       doctest::Contains("65535"), std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("pfm round trip is bit-exact at 32-bit") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> d(0.1, 30.0);
  data::DepthMap dm = data::DepthMap::invalid_map(6, 4);
  for (std::size_t i = 0; i < dm.depth.size(); ++i) {
    if (i % 3 == 0) continue;  // leave some cells invalid
    dm.depth[i] = d(rng);
    dm.valid[i] = 1;
  }
  std::string path = tmp_path("depth.pfm");
  data::save_depth_pfm(dm, path);
  auto back = data::load_depth_pfm(path);
  REQUIRE(back.depth.size() == dm.depth.size());
  for (std::size_t i = 0; i < dm.depth.size(); ++i) {
    CHECK(back.valid[i] == dm.valid[i]);
    CHECK(back.depth[i] == static_cast<double>(static_cast<float>(dm.depth[i])));
  }
  std::remove(path.c_str());
}

TEST_CASE("manifest json round trip") {
  data::Manifest m;
  m.grid = desk_grid();
  data::SampleRecord rec;
  rec.cloud_path = "a.bin";
  rec.scene_path = "a.json";
  rec.image_paths = {"a0.ppm", "a1.ppm"};
  geom::CameraModel cam;
  cam.fx = 48;
  cam.fy = 48;
  cam.cx = 31.5;
  cam.cy = 31.5;
  cam.width = cam.height = 64;
  cam.translation = {1, 2, 3};
  rec.cameras = {cam, cam};
  m.samples = {rec};
  std::string path = tmp_path("manifest.json");
  data::save_manifest(m, path);
  auto back = data::load_manifest(path);
  REQUIRE(back.samples.size() == 1);
  CHECK(back.grid.x_min == m.grid.x_min);
  CHECK(back.samples[0].cloud_path == "a.bin");
  CHECK(back.samples[0].image_paths.size() == 2);
  CHECK(back.samples[0].cameras[0].translation.z == 3.0);
  CHECK(back.samples[0].cameras[0].fx == 48.0);
  std::remove(path.c_str());
}

}  // TEST_SUITE
