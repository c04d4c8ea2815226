#include "nsmae/embednet.hpp"

#include <cmath>
#include <stdexcept>

namespace nsmae::net {

using ndgrad::RowMap;
using ndgrad::Tape;

std::vector<std::string> ParamSet::names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values) out.push_back(k);
  return out;
}

const Array& ParamSet::at(const std::string& name) const {
  auto it = values.find(name);
  if (it == values.end()) throw std::runtime_error("params: unknown parameter " + name);
  return it->second;
}

std::size_t ParamSet::total_scalars() const {
  std::size_t n = 0;
  for (const auto& [k, v] : values) n += v.numel();
  return n;
}

namespace {

Array he_init(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  return Array::randn(std::move(shape), rng, std::sqrt(2.0 / static_cast<double>(fan_in)));
}

}  // namespace

ParamSet init_params(const NetConfig& cfg, std::mt19937_64& rng) {
  ParamSet p;
  std::size_t ci = static_cast<std::size_t>(cfg.c_img);
  std::size_t cl = static_cast<std::size_t>(cfg.c_lidar);
  std::size_t ch = static_cast<std::size_t>(cfg.conv_hidden);
  std::size_t rh = static_cast<std::size_t>(cfg.render_hidden);
  std::size_t cf = static_cast<std::size_t>(cfg.fused_channels());
  std::size_t pe = static_cast<std::size_t>(cfg.pe_dim());
  std::size_t s = static_cast<std::size_t>(cfg.patch);

  if (cfg.use_camera) {
    p.values["cam.conv1.w"] = he_init({3, 3, 3, ch}, 27, rng);
    p.values["cam.conv1.b"] = Array::zeros({ch});
    p.values["cam.conv2.w"] = he_init({3, 3, ch, ch}, 9 * ch, rng);
    p.values["cam.conv2.b"] = Array::zeros({ch});
    p.values["cam.conv3.w"] = he_init({3, 3, ch, ci}, 9 * ch, rng);
    p.values["cam.conv3.b"] = Array::zeros({ci});
    p.values["mask_token"] = Array::full({s, s, 3}, 0.5);
  }
  if (cfg.use_lidar) {
    p.values["lidar.vox.w"] = he_init({data::kVoxelFeatureDim, cl}, data::kVoxelFeatureDim, rng);
    p.values["lidar.vox.b"] = Array::zeros({cl});
    p.values["lidar.conv.w"] = he_init({3, 3, 3, cl, cl}, 27 * cl, rng);
    p.values["lidar.conv.b"] = Array::zeros({cl});
  }
  std::size_t sig_in = cf + pe;
  std::size_t col_in = cf + 2 * pe;
  p.values["render.sigma.l1.w"] = he_init({sig_in, rh}, sig_in, rng);
  p.values["render.sigma.l1.b"] = Array::zeros({rh});
  p.values["render.sigma.l2.w"] = he_init({rh, 1}, rh, rng);
  p.values["render.sigma.l2.b"] = Array::full({1}, -1.0);
  p.values["render.color.l1.w"] = he_init({col_in, rh}, col_in, rng);
  p.values["render.color.l1.b"] = Array::zeros({rh});
  p.values["render.color.l2.w"] = he_init({rh, 3}, rh, rng);
  p.values["render.color.l2.b"] = Array::zeros({3});
  return p;
}

int ParamNodes::at(const std::string& name) const {
  auto it = ids.find(name);
  if (it == ids.end()) throw std::runtime_error("params: no tape node for " + name);
  return it->second;
}

ParamNodes add_param_inputs(Tape& tape, const ParamSet& params) {
  ParamNodes pn;
  for (const auto& [name, arr] : params.values) {
    pn.ids[name] = tape.input(arr.shape);
    pn.order.push_back(name);
  }
  return pn;
}

int build_masked_image(Tape& tape, const data::ImageFrame& image, const mask::PatchMask& pmask,
                       int token_node) {
  int s = pmask.patch;
  std::size_t W = static_cast<std::size_t>(image.width);
  std::size_t H = static_cast<std::size_t>(image.height);

  Array base({H, W, 3}, image.values);
  RowMap map;
  map.in_rows = static_cast<std::size_t>(s) * s;
  map.out_rows = H * W;
  map.offsets.assign(map.out_rows + 1, 0);
  // pass 1: counts, pass 2: fill
  std::vector<std::pair<std::size_t, std::uint32_t>> entries;  // (pixel row, token row)
  for (int py = 0; py < pmask.patches_y; ++py)
    for (int px = 0; px < pmask.patches_x; ++px) {
      if (!pmask.mask[static_cast<std::size_t>(py) * pmask.patches_x + px]) continue;
      for (int dy = 0; dy < s; ++dy)
        for (int dx = 0; dx < s; ++dx) {
          std::size_t pix = (static_cast<std::size_t>(py) * s + dy) * W +
                            static_cast<std::size_t>(px) * s + dx;
          entries.emplace_back(pix, static_cast<std::uint32_t>(dy * s + dx));
          for (int c = 0; c < 3; ++c) base.data[pix * 3 + c] = 0.0;
        }
    }
  for (const auto& [pix, tok] : entries) map.offsets[pix + 1] = 1;
  for (std::size_t i = 1; i <= map.out_rows; ++i) map.offsets[i] += map.offsets[i - 1];
  map.src.resize(entries.size());
  map.weight.assign(entries.size(), 1.0);
  for (const auto& [pix, tok] : entries) map.src[map.offsets[pix]] = tok;

  int scattered = tape.gather_rows(token_node, std::move(map));
  return tape.add(tape.constant(std::move(base)), tape.reshape(scattered, {H, W, 3}));
}

int encode_camera(Tape& tape, int image_node, const ParamNodes& pn, const NetConfig& cfg) {
  const Shape& s = tape.shape_of(image_node);
  if (s.size() != 3 || s[0] % 4 != 0 || s[1] % 4 != 0)
    throw std::runtime_error("encode_camera: image extents must be divisible by 4");
  int x = tape.conv2d(image_node, pn.at("cam.conv1.w"), pn.at("cam.conv1.b"), 2, 1);
  x = tape.softplus(x);
  x = tape.conv2d(x, pn.at("cam.conv2.w"), pn.at("cam.conv2.b"), 2, 1);
  x = tape.softplus(x);
  return tape.conv2d(x, pn.at("cam.conv3.w"), pn.at("cam.conv3.b"), 1, 1);
}

int encode_lidar(Tape& tape, const data::VoxelGrid& grid, const ParamNodes& pn,
                 const NetConfig& cfg) {
  std::size_t P = grid.occupied.size();
  std::size_t V = grid.grid.num_voxels();
  std::size_t cl = static_cast<std::size_t>(cfg.c_lidar);

  Array feats = Array::zeros({P, static_cast<std::size_t>(data::kVoxelFeatureDim)});
  RowMap scatter;
  scatter.in_rows = P;
  scatter.out_rows = V;
  scatter.offsets.assign(V + 1, 0);
  std::size_t row = 0;
  for (const auto& [flat, f] : grid.occupied) {
    feats.data[row * data::kVoxelFeatureDim + 0] = f.mean_dx;
    feats.data[row * data::kVoxelFeatureDim + 1] = f.mean_dy;
    feats.data[row * data::kVoxelFeatureDim + 2] = f.mean_dz;
    feats.data[row * data::kVoxelFeatureDim + 3] = f.mean_intensity;
    feats.data[row * data::kVoxelFeatureDim + 4] = f.count;
    scatter.offsets[flat + 1] = 1;
    ++row;
  }
  for (std::size_t i = 1; i <= V; ++i) scatter.offsets[i] += scatter.offsets[i - 1];
  scatter.src.resize(P);
  scatter.weight.assign(P, 1.0);
  row = 0;
  for (const auto& [flat, f] : grid.occupied) scatter.src[scatter.offsets[flat]] = row++;

  int x = tape.matmul(tape.constant(std::move(feats)), pn.at("lidar.vox.w"));
  x = tape.add_bias(x, pn.at("lidar.vox.b"));
  x = tape.softplus(x);
  x = tape.gather_rows(x, std::move(scatter));
  x = tape.reshape(x, {grid.grid.extent_x(), grid.grid.extent_y(), grid.grid.extent_z(), cl});
  return tape.conv3d(x, pn.at("lidar.conv.w"), pn.at("lidar.conv.b"), 1);
}

int align_image_to_world(Tape& tape, const std::vector<int>& image_emb_nodes,
                         const std::vector<geom::CameraModel>& cameras,
                         const geom::GridSpec& grid, const NetConfig& cfg) {
  std::size_t X = grid.extent_x(), Y = grid.extent_y(), Z = grid.extent_z();
  std::size_t V = X * Y * Z;
  if (image_emb_nodes.size() != cameras.size())
    throw std::runtime_error("align: embedding/camera count mismatch");
  if (cameras.empty())
    return tape.constant(Array::zeros({X, Y, Z, static_cast<std::size_t>(cfg.c_img)}));

  const Shape& es = tape.shape_of(image_emb_nodes[0]);
  std::size_t Hc = es[0], Wc = es[1], C = es[2];

  struct Tap {
    std::size_t voxel;
    std::uint32_t src;
    double w;
  };
  std::vector<std::vector<Tap>> per_cam(cameras.size());
  std::vector<int> seen(V, 0);

  for (std::size_t ci = 0; ci < cameras.size(); ++ci) {
    const geom::CameraModel& cam = cameras[ci];
    for (std::size_t ix = 0; ix < X; ++ix)
      for (std::size_t iy = 0; iy < Y; ++iy)
        for (std::size_t iz = 0; iz < Z; ++iz) {
          auto [u, v, depth] = cam.project(grid.voxel_center(ix, iy, iz));
          if (!(depth > 0) || u < 0 || u >= cam.width || v < 0 || v >= cam.height) continue;
          std::size_t vox = grid.flat_index(ix, iy, iz);
          ++seen[vox];
          // embedding grid coordinates: cell (i,j) covers a 4x4 pixel block
          double gx = u / 4.0 - 0.5;
          double gy = v / 4.0 - 0.5;
          double fx = std::floor(gx), fy = std::floor(gy);
          double ax = gx - fx, ay = gy - fy;
          auto clampi = [](double f, std::size_t n) {
            return static_cast<std::size_t>(std::clamp<double>(f, 0, static_cast<double>(n - 1)));
          };
          std::size_t x0 = clampi(fx, Wc), x1 = clampi(fx + 1, Wc);
          std::size_t y0 = clampi(fy, Hc), y1 = clampi(fy + 1, Hc);
          double inv_d = 1.0 / depth;
          const std::array<std::tuple<std::size_t, std::size_t, double>, 4> taps{
              std::tuple{y0, x0, (1 - ay) * (1 - ax)}, std::tuple{y0, x1, (1 - ay) * ax},
              std::tuple{y1, x0, ay * (1 - ax)}, std::tuple{y1, x1, ay * ax}};
          for (auto [ty, tx, w] : taps) {
            if (w == 0.0) continue;
            per_cam[ci].push_back(
                {vox, static_cast<std::uint32_t>(ty * Wc + tx), w * inv_d});
          }
        }
  }

  int acc = -1;
  for (std::size_t ci = 0; ci < cameras.size(); ++ci) {
    RowMap map;
    map.in_rows = Hc * Wc;
    map.out_rows = V;
    map.offsets.assign(V + 1, 0);
    for (const Tap& t : per_cam[ci]) ++map.offsets[t.voxel + 1];
    for (std::size_t i = 1; i <= V; ++i) map.offsets[i] += map.offsets[i - 1];
    map.src.resize(per_cam[ci].size());
    map.weight.resize(per_cam[ci].size());
    std::vector<std::size_t> cursor(map.offsets.begin(), map.offsets.end() - 1);
    for (const Tap& t : per_cam[ci]) {
      std::size_t k = cursor[t.voxel]++;
      map.src[k] = t.src;
      map.weight[k] = t.w / seen[t.voxel];  // cameras seeing the voxel average
    }
    int g = tape.gather_rows(image_emb_nodes[ci], std::move(map));
    acc = (acc < 0) ? g : tape.add(acc, g);
  }
  return tape.reshape(acc, {X, Y, Z, C});
}

int fuse(Tape& tape, int img_vol, int lidar_vol) {
  const Shape& a = tape.shape_of(img_vol);
  const Shape& b = tape.shape_of(lidar_vol);
  if (a.size() != 4 || b.size() != 4 || a[0] != b[0] || a[1] != b[1] || a[2] != b[2])
    throw std::runtime_error("fuse: grid mismatch " + shape_str(a) + " vs " + shape_str(b));
  return tape.concat_last({img_vol, lidar_vol});
}

void append_positional_encoding(std::vector<double>& out, const geom::Vec3& v, int freqs) {
  const double coords[3] = {v.x, v.y, v.z};
  for (double c : coords) {
    // sin/cos(2^k c) by angle doubling: one sincos per coordinate
    double s = std::sin(c), co = std::cos(c);
    for (int k = 0; k < freqs; ++k) {
      out.push_back(s);
      out.push_back(co);
      double s2 = 2.0 * s * co;
      co = co * co - s * s;
      s = s2;
    }
  }
}

}  // namespace nsmae::net
