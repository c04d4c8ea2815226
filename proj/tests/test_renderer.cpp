#include <doctest.h>

#include <cmath>
#include <random>

#include "nsmae/renderer.hpp"
#include "nsmae/synth.hpp"

using namespace nsmae;

namespace {

geom::Ray make_ray(geom::Vec3 o, geom::Vec3 d, double t0, double delta, int n) {
  geom::Ray r;
  r.origin = o;
  r.direction = d.normalized();
  r.t_near = t0;
  r.delta = delta;
  r.sample_count = n;
  return r;
}

render::FieldFn constant_sigma_field(std::vector<double> sigma_per_sample, double t0,
                                     double delta, std::vector<std::array<double, 3>> colors) {
  return [=](const geom::Vec3& p, const geom::Vec3&) {
    render::RadianceSample s;
    double t = p.norm();  // rays in these tests start at the origin
    int i = static_cast<int>(std::floor((t - t0) / delta));
    if (i >= 0 && i < static_cast<int>(sigma_per_sample.size())) {
      s.sigma = sigma_per_sample[static_cast<std::size_t>(i)];
      s.color = colors[static_cast<std::size_t>(i)];
    }
    return s;
  };
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

TEST_SUITE("renderer") {

TEST_CASE("vacuum renders black with unit transmittance") {
  auto ray = make_ray({0, 0, 0}, {0, 0, 1}, 0.0, 0.5, 16);
  auto field = [](const geom::Vec3&, const geom::Vec3&) { return render::RadianceSample{}; };
  auto row = render::render_color(ray, field);
  for (double c : row.value) CHECK(c == 0.0);
  for (double w : row.weights) CHECK(w == 0.0);
  CHECK(row.final_transmittance == 1.0);
}

TEST_CASE("opaque first sample dominates the color") {
  auto field = constant_sigma_field({20.0, 0.0, 0.0}, 0.0, 1.0,
                                    {{{0.2, 0.4, 0.6}}, {{1, 1, 1}}, {{1, 1, 1}}});
  auto ray = make_ray({0, 0, 0}, {1, 0, 0}, 0.0, 1.0, 3);
  auto row = render::render_color(ray, field);
  CHECK(std::abs(row.value[0] - 0.2) < 1e-8);
  CHECK(std::abs(row.value[1] - 0.4) < 1e-8);
  CHECK(std::abs(row.value[2] - 0.6) < 1e-8);
  CHECK(row.weights[0] == doctest::Approx(1.0 - std::exp(-20.0)).epsilon(1e-12));
}

TEST_CASE("two-sample composition by hand") {
  double s1 = std::log(2.0), s2 = 20.0;
  auto field =
      constant_sigma_field({s1, s2}, 0.0, 1.0, {{{1.0, 0.0, 0.0}}, {{0.0, 1.0, 0.0}}});
  auto ray = make_ray({0, 0, 0}, {1, 0, 0}, 0.0, 1.0, 2);
  auto row = render::render_color(ray, field);
  CHECK(row.value[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(std::abs(row.value[1] - 0.5) < 1e-8);
}

TEST_CASE("depth of an opaque k-th sample is the accumulated spacing") {
  double delta = 0.7;
  for (int k = 1; k <= 4; ++k) {
    std::vector<double> sigma(6, 0.0);
    sigma[static_cast<std::size_t>(k - 1)] = 60.0;
    auto field = constant_sigma_field(sigma, 0.0, delta,
                                      std::vector<std::array<double, 3>>(6, {{1, 1, 1}}));
    auto ray = make_ray({0, 0, 0}, {0, 1, 0}, 0.0, delta, 6);
    auto row = render::render_depth(ray, field);
    CHECK(row.value[0] == doctest::Approx((k - 1) * delta).epsilon(1e-9));
  }
}

TEST_CASE("constant unit modality renders the opacity") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> d(0.0, 2.0);
  std::vector<double> sigma(8);
  for (auto& s : sigma) s = d(rng);
  auto field = constant_sigma_field(sigma, 0.0, 0.4,
                                    std::vector<std::array<double, 3>>(8, {{1, 1, 1}}));
  auto ray = make_ray({0, 0, 0}, {1, 0, 0}, 0.0, 0.4, 8);
  auto row = render::render_modality(ray, field, "opacity");
  auto color = render::render_color(ray, field);
  CHECK(row.value[0] == doctest::Approx(1.0 - color.final_transmittance).epsilon(1e-12));
  CHECK_THROWS(static_cast<void>(render::render_modality(ray, field, "normals")));
}

TEST_CASE("weights partition unity on random rays") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> ds(0.0, 3.0);
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<double> sigma(12);
    for (auto& s : sigma) s = ds(rng);
    auto q = render::ray_quadrature(sigma, 0.35);
    double total = q.final_transmittance;
    for (double w : q.weights) {
      CHECK(w >= 0.0);
      CHECK(w <= 1.0);
      total += w;
    }
    CHECK(std::abs(total - 1.0) < 1e-9);
    // transmittance monotonicity via partial sums
    double acc = 0;
    double prev_T = 1.0;
    for (double w : q.weights) {
      acc += w;
      double T = 1.0 - acc;
      CHECK(T <= prev_T + 1e-15);
      prev_T = T;
    }
  }
}

TEST_CASE("trilinear interpolation is exact at voxel centers") {
  std::mt19937_64 rng(9);
  net::FeatureVolume vol;
  vol.grid = desk_grid();
  vol.channels = 4;
  vol.values = Array::randn({16, 16, 8, 4}, rng, 1.0);
  for (std::size_t trial = 0; trial < 50; ++trial) {
    std::size_t ix = rng() % 16, iy = rng() % 16, iz = rng() % 8;
    auto f = render::sample_volume(vol, vol.grid.voxel_center(ix, iy, iz));
    for (std::size_t c = 0; c < 4; ++c)
      CHECK(f[c] == vol.values[(ix * 16 + iy) * 8 * 4 + iz * 4 + c]);
  }
}

TEST_CASE("the field is dark beyond the grid") {
  std::mt19937_64 rng(10);
  net::NetConfig cfg;
  cfg.c_img = 2;
  cfg.c_lidar = 2;
  cfg.render_hidden = 4;
  net::ParamSet params = net::init_params(cfg, rng);
  net::FeatureVolume vol;
  vol.grid = desk_grid();
  vol.channels = 4;
  vol.values = Array::randn({16, 16, 8, 4}, rng, 1.0);
  auto s = render::query_field(vol, {100, 0, 0}, {1, 0, 0}, params, cfg);
  CHECK(s.sigma == 0.0);
  CHECK(s.color[0] == 0.0);
  auto in = render::query_field(vol, {0.3, 0.3, 0.1}, {1, 0, 0}, params, cfg);
  CHECK(in.sigma > 0.0);
}

TEST_CASE("sigma gradients flow to the eight surrounding voxel features") {
  std::mt19937_64 rng(11);
  net::NetConfig cfg;
  cfg.c_img = 2;
  cfg.c_lidar = 2;
  cfg.render_hidden = 4;
  net::ParamSet params = net::init_params(cfg, rng);
  geom::GridSpec g = desk_grid();

  ndgrad::Tape tape;
  auto pn = net::add_param_inputs(tape, params);
  int vol_node = tape.input({16, 16, 8, 4});
  auto ray = make_ray({0.2, 0.1, 0.0}, {0.9, 0.2, 0.1}, 0.4, 0.5, 2);
  auto nodes = render::render_rays_tape(tape, vol_node, g, {ray}, pn, cfg, true);
  tape.set_loss(tape.add(tape.sum(nodes.color), tape.scale(tape.sum(nodes.depth), 0.5)));
  std::vector<Array> point;
  for (const auto& name : pn.order) point.push_back(params.at(name));
  point.push_back(Array::randn({16, 16, 8, 4}, rng, 1.0));
  CHECK(tape.check_gradients(point, 1e-5) < 1e-5);
}

TEST_CASE("piecewise-constant scenes render exactly") {
  // sample spacing aligned with primitive boundaries: the sum telescopes to
  // the analytic integral
  synth::SceneSpec scene;
  synth::Primitive box;
  box.kind = synth::ShapeKind::kBox;
  box.center = {2.0, 0, 0};
  box.half_extent = {1.0, 3.0, 1.5};
  box.density = 1.3;
  box.color = {0.8, 0.3, 0.1};
  scene.primitives.push_back(box);
  auto field = [&scene](const geom::Vec3& p, const geom::Vec3&) {
    render::RadianceSample s;
    for (const auto& prim : scene.primitives)
      if (prim.contains(p)) {
        s.sigma += prim.density;
        s.color = prim.color;
      }
    return s;
  };
  // boundaries at x = 1 and 3; delta 0.5 aligns
  auto ray = make_ray({0, 0, 0}, {1, 0, 0}, 0.0, 0.5, 12);
  auto row = render::render_color(ray, field);
  auto oracle = synth::oracle_render(ray, scene);
  for (int c = 0; c < 3; ++c) CHECK(std::abs(row.value[c] - oracle.color[c]) < 1e-10);
  CHECK(std::abs(row.final_transmittance - oracle.transmittance) < 1e-10);
  auto drow = render::render_depth(ray, field);
  CHECK(std::abs(drow.value[0] - synth::oracle_depth_staircase(ray, scene)) < 1e-10);
}

TEST_CASE("halving the spacing halves the error on smooth fields") {
  // smooth density (Gaussian blobs): the depth estimator carries a clean
  // first-order bias, so halving the spacing halves the error against a
  // 64x finer reference quadrature
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> dc(2.0, 7.0);
  std::uniform_real_distribution<double> dw(0.4, 1.2);
  std::uniform_real_distribution<double> da(0.5, 2.0);
  std::uniform_real_distribution<double> du(-0.25, 0.25);
  const std::vector<double> deltas{0.4, 0.2, 0.1, 0.05};
  std::vector<double> err_sum(deltas.size(), 0.0);
  for (int k = 0; k < 20; ++k) {
    struct Blob {
      geom::Vec3 center;
      double width, amp;
    };
    std::vector<Blob> blobs;
    geom::Vec3 dir = geom::Vec3{1.0, du(rng), du(rng)}.normalized();
    geom::Vec3 origin{0, du(rng), du(rng)};
    for (int b = 0; b < 3; ++b)
      blobs.push_back({origin + dir * dc(rng), dw(rng), da(rng)});
    auto field = [&blobs](const geom::Vec3& p, const geom::Vec3&) {
      render::RadianceSample s;
      for (const auto& blob : blobs) {
        geom::Vec3 d = p - blob.center;
        s.sigma += blob.amp * std::exp(-d.dot(d) / (2.0 * blob.width * blob.width));
      }
      return s;
    };
    auto depth_at = [&](double delta) {
      auto ray = make_ray(origin, dir, 0.0, delta,
                          static_cast<int>(std::lround(9.6 / delta)));
      return render::render_depth(ray, field).value[0];
    };
    double reference = depth_at(deltas.back() / 64.0);
    for (std::size_t i = 0; i < deltas.size(); ++i)
      err_sum[i] += std::abs(depth_at(deltas[i]) - reference);
  }
  for (std::size_t h = 0; h + 1 < err_sum.size(); ++h) {
    double factor = err_sum[h] / err_sum[h + 1];
    CHECK(factor > 1.7);
    CHECK(factor < 2.3);
  }
}

TEST_CASE("batched tape render agrees with the numeric path") {
  std::mt19937_64 rng(17);
  net::NetConfig cfg;
  cfg.c_img = 2;
  cfg.c_lidar = 2;
  cfg.render_hidden = 4;
  net::ParamSet params = net::init_params(cfg, rng);
  net::FeatureVolume vol;
  vol.grid = desk_grid();
  vol.channels = 4;
  vol.values = Array::randn({16, 16, 8, 4}, rng, 0.5);

  std::vector<geom::Ray> rays;
  std::uniform_real_distribution<double> d(-0.4, 0.4);
  for (int i = 0; i < 6; ++i)
    rays.push_back(make_ray({d(rng), d(rng), d(rng)},
                            {1.0, d(rng), d(rng)}, 0.5, 0.8, 12));

  ndgrad::Tape tape;
  auto pn = net::add_param_inputs(tape, params);
  int vol_node = tape.constant(vol.values);
  auto nodes = render::render_rays_tape(tape, vol_node, vol.grid, rays, pn, cfg, true);
  tape.mark_output(nodes.color);
  tape.mark_output(nodes.depth);
  tape.mark_output(nodes.final_transmittance);
  tape.set_loss(tape.sum(nodes.depth));
  std::vector<Array> inputs;
  for (const auto& name : pn.order) inputs.push_back(params.at(name));
  auto vals = tape.forward(inputs);
  const Array& colors = vals[static_cast<std::size_t>(nodes.color)];
  const Array& depths = vals[static_cast<std::size_t>(nodes.depth)];
  const Array& trans = vals[static_cast<std::size_t>(nodes.final_transmittance)];

  auto field = render::make_network_field(vol, params, cfg);
  for (std::size_t r = 0; r < rays.size(); ++r) {
    auto crow = render::render_color(rays[r], field);
    auto drow = render::render_depth(rays[r], field);
    for (std::size_t c = 0; c < 3; ++c)
      CHECK(colors[r * 3 + c] == doctest::Approx(crow.value[c]).epsilon(1e-9));
    CHECK(depths[r] == doctest::Approx(drow.value[0]).epsilon(1e-9));
    CHECK(trans[r] == doctest::Approx(crow.final_transmittance).epsilon(1e-9));
  }
}

TEST_CASE("render_view is bit-identical across thread counts") {
  std::mt19937_64 rng(19);
  net::NetConfig cfg;
  cfg.c_img = 2;
  cfg.c_lidar = 2;
  cfg.render_hidden = 4;
  net::ParamSet params = net::init_params(cfg, rng);
  net::FeatureVolume vol;
  vol.grid = desk_grid();
  vol.channels = 4;
  vol.values = Array::randn({16, 16, 8, 4}, rng, 0.5);
  geom::CameraModel cam;
  cam.fx = cam.fy = 24;
  cam.cx = cam.cy = 16;
  cam.width = cam.height = 32;
  cam.translation = {0, -9, 0};
  cam.rotation.m = {1, 0, 0, 0, 0, 1, 0, -1, 0};
  auto batch = geom::perspective_rays(cam, 2, 0.8, 24);
  auto one = render::render_view(batch, vol, params, cfg, 1);
  auto four = render::render_view(batch, vol, params, cfg, 4);
  REQUIRE(one.color.rows.size() == four.color.rows.size());
  for (std::size_t i = 0; i < one.color.rows.size(); ++i) {
    for (std::size_t c = 0; c < 3; ++c)
      CHECK(one.color.rows[i].value[c] == four.color.rows[i].value[c]);
    CHECK(one.depth.rows[i].value[0] == four.depth.rows[i].value[0]);
  }
  // empty batch renders an empty map
  geom::RayBatch none;
  auto em = render::render_view(none, vol, params, cfg, 2);
  CHECK(em.color.rows.empty());
  CHECK(em.depth.rows.empty());
}

}  // TEST_SUITE
