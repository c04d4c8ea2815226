#include "nsmae/renderer.hpp"

#include <cmath>
#include <stdexcept>
#include <thread>

namespace nsmae::render {

using ndgrad::RowMap;
using ndgrad::Tape;

Quadrature ray_quadrature(const std::vector<double>& sigma, double delta) {
  Quadrature q;
  q.weights.resize(sigma.size());
  double acc = 0.0;  // optical depth before sample i
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    double t_i = std::exp(-acc);
    q.weights[i] = t_i * (1.0 - std::exp(-sigma[i] * delta));
    acc += sigma[i] * delta;
  }
  q.final_transmittance = std::exp(-acc);
  return q;
}

namespace {

struct RaySamples {
  std::vector<RadianceSample> samples;
  Quadrature quad;
};

RaySamples eval_ray(const geom::Ray& ray, const FieldFn& field) {
  RaySamples out;
  std::vector<double> sigma(static_cast<std::size_t>(ray.sample_count));
  out.samples.reserve(sigma.size());
  for (int i = 0; i < ray.sample_count; ++i) {
    RadianceSample s = field(ray.sample_pos(i), ray.direction);
    sigma[static_cast<std::size_t>(i)] = s.sigma;
    out.samples.push_back(s);
  }
  out.quad = ray_quadrature(sigma, ray.delta);
  return out;
}

}  // namespace

RenderRow render_color(const geom::Ray& ray, const FieldFn& field) {
  RaySamples rs = eval_ray(ray, field);
  RenderRow row;
  row.value.assign(3, 0.0);
  for (std::size_t i = 0; i < rs.samples.size(); ++i)
    for (int c = 0; c < 3; ++c)
      row.value[static_cast<std::size_t>(c)] +=
          rs.quad.weights[i] * rs.samples[i].color[static_cast<std::size_t>(c)];
  row.weights = std::move(rs.quad.weights);
  row.final_transmittance = rs.quad.final_transmittance;
  return row;
}

RenderRow render_depth(const geom::Ray& ray, const FieldFn& field) {
  RaySamples rs = eval_ray(ray, field);
  RenderRow row;
  double depth = 0.0;
  // distance to sample-interval start: sum_{j<i} delta_j
  for (std::size_t i = 0; i < rs.quad.weights.size(); ++i)
    depth += rs.quad.weights[i] * (static_cast<double>(i) * ray.delta);
  row.value.assign(1, depth);
  row.weights = std::move(rs.quad.weights);
  row.final_transmittance = rs.quad.final_transmittance;
  return row;
}

RenderRow render_modality(const geom::Ray& ray, const FieldFn& field, const std::string& head) {
  if (head == "color") return render_color(ray, field);
  if (head == "depth") return render_depth(ray, field);
  if (head == "opacity") {
    RaySamples rs = eval_ray(ray, field);
    RenderRow row;
    double o = 0.0;
    for (double w : rs.quad.weights) o += w;
    row.value.assign(1, o);
    row.weights = std::move(rs.quad.weights);
    row.final_transmittance = rs.quad.final_transmittance;
    return row;
  }
  throw std::runtime_error("render_modality: unknown head \"" + head + "\"");
}

std::vector<double> sample_volume(const net::FeatureVolume& volume, const geom::Vec3& p,
                                  bool* inside_out) {
  const geom::GridSpec& g = volume.grid;
  std::size_t C = volume.channels;
  std::vector<double> out(C, 0.0);
  bool inside = p.x >= g.x_min && p.x <= g.x_max && p.y >= g.y_min && p.y <= g.y_max &&
                p.z >= g.z_min && p.z <= g.z_max;
  if (inside_out) *inside_out = inside;
  if (!inside) return out;

  std::size_t X = g.extent_x(), Y = g.extent_y(), Z = g.extent_z();
  double gx = (p.x - g.x_min) / g.size_x - 0.5;
  double gy = (p.y - g.y_min) / g.size_y - 0.5;
  double gz = (p.z - g.z_min) / g.size_z - 0.5;
  auto clampi = [](double f, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<double>(f, 0, static_cast<double>(n - 1)));
  };
  double fx = std::floor(gx), fy = std::floor(gy), fz = std::floor(gz);
  double ax = gx - fx, ay = gy - fy, az = gz - fz;
  std::size_t x0 = clampi(fx, X), x1 = clampi(fx + 1, X);
  std::size_t y0 = clampi(fy, Y), y1 = clampi(fy + 1, Y);
  std::size_t z0 = clampi(fz, Z), z1 = clampi(fz + 1, Z);
  const std::array<std::tuple<std::size_t, std::size_t, std::size_t, double>, 8> corners{
      std::tuple{x0, y0, z0, (1 - ax) * (1 - ay) * (1 - az)},
      std::tuple{x0, y0, z1, (1 - ax) * (1 - ay) * az},
      std::tuple{x0, y1, z0, (1 - ax) * ay * (1 - az)},
      std::tuple{x0, y1, z1, (1 - ax) * ay * az},
      std::tuple{x1, y0, z0, ax * (1 - ay) * (1 - az)},
      std::tuple{x1, y0, z1, ax * (1 - ay) * az},
      std::tuple{x1, y1, z0, ax * ay * (1 - az)},
      std::tuple{x1, y1, z1, ax * ay * az}};
  for (auto [ix, iy, iz, w] : corners) {
    if (w == 0.0) continue;
    const double* row = &volume.values.data[g.flat_index(ix, iy, iz) * C];
    for (std::size_t c = 0; c < C; ++c) out[c] += w * row[c];
  }
  return out;
}

namespace {

double softplus_val(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}
double sigmoid_val(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

// y = act(x W2 + b2) after hidden softplus layer
std::vector<double> mlp2(const std::vector<double>& in, const Array& w1, const Array& b1,
                         const Array& w2, const Array& b2) {
  std::size_t h = w1.shape[1];
  std::size_t o = w2.shape[1];
  std::vector<double> hid(h, 0.0), out(o, 0.0);
  for (std::size_t i = 0; i < in.size(); ++i) {
    double v = in[i];
    if (v == 0.0) continue;
    for (std::size_t j = 0; j < h; ++j) hid[j] += v * w1.data[i * h + j];
  }
  for (std::size_t j = 0; j < h; ++j) hid[j] = softplus_val(hid[j] + b1.data[j]);
  for (std::size_t j = 0; j < h; ++j) {
    double v = hid[j];
    for (std::size_t k = 0; k < o; ++k) out[k] += v * w2.data[j * o + k];
  }
  for (std::size_t k = 0; k < o; ++k) out[k] += b2.data[k];
  return out;
}

}  // namespace

RadianceSample query_field(const net::FeatureVolume& volume, const geom::Vec3& x,
                           const geom::Vec3& omega, const net::ParamSet& params,
                           const net::NetConfig& cfg) {
  RadianceSample s;
  s.position = x;
  s.direction = omega;
  bool inside = false;
  std::vector<double> feat = sample_volume(volume, x, &inside);
  if (!inside) return s;  // sigma = 0, zero radiance

  std::vector<double> sig_in = feat;
  net::append_positional_encoding(sig_in, x, cfg.pe_freqs);
  auto sig = mlp2(sig_in, params.at("render.sigma.l1.w"), params.at("render.sigma.l1.b"),
                  params.at("render.sigma.l2.w"), params.at("render.sigma.l2.b"));
  s.sigma = softplus_val(sig[0]);

  std::vector<double> col_in = feat;
  net::append_positional_encoding(col_in, x, cfg.pe_freqs);
  net::append_positional_encoding(col_in, omega, cfg.pe_freqs);
  auto col = mlp2(col_in, params.at("render.color.l1.w"), params.at("render.color.l1.b"),
                  params.at("render.color.l2.w"), params.at("render.color.l2.b"));
  for (int c = 0; c < 3; ++c) s.color[static_cast<std::size_t>(c)] = sigmoid_val(col[static_cast<std::size_t>(c)]);
  return s;
}

FieldFn make_network_field(const net::FeatureVolume& volume, const net::ParamSet& params,
                           const net::NetConfig& cfg) {
  return [&volume, &params, cfg](const geom::Vec3& x, const geom::Vec3& w) {
    return query_field(volume, x, w, params, cfg);
  };
}

ViewRender render_view(const geom::RayBatch& rays, const net::FeatureVolume& volume,
                       const net::ParamSet& params, const net::NetConfig& cfg, int threads) {
  FieldFn field = make_network_field(volume, params, cfg);
  bool with_color = rays.view == geom::ViewTag::kPerspective;

  ViewRender out;
  out.depth.view = rays.view;
  out.depth.provenance = rays.provenance;
  out.depth.rows.resize(rays.rays.size());
  if (with_color) {
    out.color.view = rays.view;
    out.color.provenance = rays.provenance;
    out.color.rows.resize(rays.rays.size());
  }

  auto work = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      out.depth.rows[i] = render_depth(rays.rays[i], field);
      if (with_color) out.color.rows[i] = render_color(rays.rays[i], field);
    }
  };
  std::size_t n = rays.rays.size();
  if (threads <= 1 || n < 2) {
    work(0, n);
  } else {
    std::size_t t = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < t; ++k)
      pool.emplace_back(work, n * k / t, n * (k + 1) / t);
    for (auto& th : pool) th.join();
  }
  return out;
}

RenderNodes render_rays_tape(Tape& tape, int volume_node, const geom::GridSpec& grid,
                             const std::vector<geom::Ray>& rays, const net::ParamNodes& pn,
                             const net::NetConfig& cfg, bool with_color) {
  if (rays.empty()) throw std::runtime_error("render_rays_tape: empty ray set");
  std::size_t R = rays.size();
  std::size_t N = static_cast<std::size_t>(rays[0].sample_count);
  double delta = rays[0].delta;
  for (const geom::Ray& r : rays)
    if (r.sample_count != static_cast<int>(N) || r.delta != delta)
      throw std::runtime_error("render_rays_tape: rays must share (delta, N)");

  std::size_t X = grid.extent_x(), Y = grid.extent_y(), Z = grid.extent_z();
  std::size_t V = X * Y * Z;
  std::size_t S = R * N;

  // trilinear gather map + in-grid mask + positional encodings
  RowMap tri;
  tri.in_rows = V;
  tri.out_rows = S;
  tri.offsets.assign(S + 1, 0);
  std::vector<double> mask(S, 0.0);
  std::vector<double> pe_x, pe_w;
  pe_x.reserve(S * static_cast<std::size_t>(cfg.pe_dim()));
  if (with_color) pe_w.reserve(S * static_cast<std::size_t>(cfg.pe_dim()));

  std::vector<std::pair<std::uint32_t, double>> taps;
  auto clampi = [](double f, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<double>(f, 0, static_cast<double>(n - 1)));
  };
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t i = 0; i < N; ++i) {
      std::size_t s = r * N + i;
      geom::Vec3 p = rays[r].sample_pos(static_cast<int>(i));
      net::append_positional_encoding(pe_x, p, cfg.pe_freqs);
      if (with_color) net::append_positional_encoding(pe_w, rays[r].direction, cfg.pe_freqs);
      bool inside = p.x >= grid.x_min && p.x <= grid.x_max && p.y >= grid.y_min &&
                    p.y <= grid.y_max && p.z >= grid.z_min && p.z <= grid.z_max;
      if (!inside) continue;
      mask[s] = 1.0;
      double gx = (p.x - grid.x_min) / grid.size_x - 0.5;
      double gy = (p.y - grid.y_min) / grid.size_y - 0.5;
      double gz = (p.z - grid.z_min) / grid.size_z - 0.5;
      double fx = std::floor(gx), fy = std::floor(gy), fz = std::floor(gz);
      double ax = gx - fx, ay = gy - fy, az = gz - fz;
      std::size_t x0 = clampi(fx, X), x1 = clampi(fx + 1, X);
      std::size_t y0 = clampi(fy, Y), y1 = clampi(fy + 1, Y);
      std::size_t z0 = clampi(fz, Z), z1 = clampi(fz + 1, Z);
      const std::array<std::tuple<std::size_t, std::size_t, std::size_t, double>, 8> corners{
          std::tuple{x0, y0, z0, (1 - ax) * (1 - ay) * (1 - az)},
          std::tuple{x0, y0, z1, (1 - ax) * (1 - ay) * az},
          std::tuple{x0, y1, z0, (1 - ax) * ay * (1 - az)},
          std::tuple{x0, y1, z1, (1 - ax) * ay * az},
          std::tuple{x1, y0, z0, ax * (1 - ay) * (1 - az)},
          std::tuple{x1, y0, z1, ax * (1 - ay) * az},
          std::tuple{x1, y1, z0, ax * ay * (1 - az)},
          std::tuple{x1, y1, z1, ax * ay * az}};
      std::size_t count = 0;
      for (auto [ix, iy, iz, w] : corners) {
        if (w == 0.0) continue;
        taps.emplace_back(static_cast<std::uint32_t>(grid.flat_index(ix, iy, iz)), w);
        ++count;
      }
      tri.offsets[s + 1] = count;
    }
  }
  for (std::size_t i = 1; i <= S; ++i) tri.offsets[i] += tri.offsets[i - 1];
  tri.src.resize(taps.size());
  tri.weight.resize(taps.size());
  for (std::size_t k = 0; k < taps.size(); ++k) {
    tri.src[k] = taps[k].first;
    tri.weight[k] = taps[k].second;
  }

  std::size_t pe = static_cast<std::size_t>(cfg.pe_dim());
  int feats = tape.gather_rows(volume_node, std::move(tri));  // [S, C]
  int pe_x_node = tape.constant(Array({S, pe}, std::move(pe_x)));

  int sig_in = tape.concat_last({feats, pe_x_node});
  int h = tape.softplus(tape.add_bias(tape.matmul(sig_in, pn.at("render.sigma.l1.w")),
                                      pn.at("render.sigma.l1.b")));
  int sigma = tape.softplus(tape.add_bias(tape.matmul(h, pn.at("render.sigma.l2.w")),
                                          pn.at("render.sigma.l2.b")));  // [S,1]
  sigma = tape.mul_rows(sigma, tape.constant(Array({S}, std::move(mask))));

  int tau = tape.reshape(tape.scale(sigma, delta), {R, N});
  int accum = tape.cumsum_exclusive(tau);
  int trans = tape.exp(tape.neg(accum));
  int alpha = tape.one_minus(tape.exp(tape.neg(tau)));
  int weights = tape.mul(trans, alpha);  // [R, N]

  RenderNodes out;
  out.weights = weights;
  out.final_transmittance = tape.exp(tape.neg(tape.sum_axis(tau, 1)));  // [R]

  std::vector<double> dist(R * N);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t i = 0; i < N; ++i) dist[r * N + i] = static_cast<double>(i) * delta;
  out.depth = tape.sum_axis(tape.mul(weights, tape.constant(Array({R, N}, std::move(dist)))), 1);

  if (with_color) {
    int pe_w_node = tape.constant(Array({S, pe}, std::move(pe_w)));
    int col_in = tape.concat_last({feats, pe_x_node, pe_w_node});
    int hc = tape.softplus(tape.add_bias(tape.matmul(col_in, pn.at("render.color.l1.w")),
                                         pn.at("render.color.l1.b")));
    int color = tape.sigmoid(tape.add_bias(tape.matmul(hc, pn.at("render.color.l2.w")),
                                           pn.at("render.color.l2.b")));  // [S,3]
    int wc = tape.mul_rows(color, tape.reshape(weights, {S}));
    out.color = tape.sum_axis(tape.reshape(wc, {R, N, 3}), 1);  // [R,3]
  }
  return out;
}

}  // namespace nsmae::render
