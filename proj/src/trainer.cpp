#include "nsmae/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "nsmae/renderer.hpp"

namespace nsmae::train {

using ndgrad::Tape;

OptimState OptimState::init(const net::ParamSet& params, OptimHyper hyper) {
  OptimState s;
  s.hyper = hyper;
  for (const auto& [name, arr] : params.values) {
    s.m[name] = Array::zeros(arr.shape);
    s.v[name] = Array::zeros(arr.shape);
  }
  return s;
}

void adamw_step(net::ParamSet& params, const std::map<std::string, Array>& grads,
                OptimState& state, double lr) {
  state.step += 1;
  double b1 = state.hyper.beta1, b2 = state.hyper.beta2;
  double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (auto& [name, theta] : params.values) {
    auto git = grads.find(name);
    if (git == grads.end()) throw std::runtime_error("adamw: missing gradient for " + name);
    const Array& g = git->second;
    if (g.shape != theta.shape) throw std::runtime_error("adamw: shape mismatch for " + name);
    for (double gv : g.data)
      if (!std::isfinite(gv)) throw std::runtime_error("adamw: non-finite gradient in " + name);
    Array& m = state.m[name];
    Array& v = state.v[name];
    for (std::size_t i = 0; i < theta.numel(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      theta[i] -= lr * (mhat / (std::sqrt(vhat) + state.hyper.eps) +
                        state.hyper.weight_decay * theta[i]);
    }
  }
}

double one_cycle_lr(std::uint64_t step, std::uint64_t total_steps, double lr_max,
                    double warmup_frac, double div_factor, double final_div_factor) {
  if (total_steps == 0) throw std::runtime_error("one_cycle_lr: total_steps must be positive");
  if (step > total_steps) throw std::runtime_error("one_cycle_lr: step beyond total_steps");
  double lr_start = lr_max / div_factor;
  double lr_end = lr_max / final_div_factor;
  double warm = warmup_frac * static_cast<double>(total_steps);
  double s = static_cast<double>(step);
  if (s <= warm && warm > 0)
    return lr_start + (lr_max - lr_start) * (s / warm);
  double t = (s - warm) / (static_cast<double>(total_steps) - warm);
  return lr_end + (lr_max - lr_end) * 0.5 * (1.0 + std::cos(M_PI * t));
}

// ---------------------------------------------------------------------------
// checkpoint container: magic "NSMAE1", little-endian sections

namespace {

constexpr char kMagic[6] = {'N', 'S', 'M', 'A', 'E', '1'};

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<char*>(&v), 4); }
void put_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<char*>(&v), 8); }
void put_f64(std::ostream& os, double v) { os.write(reinterpret_cast<char*>(&v), 8); }

std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v;
  is.read(reinterpret_cast<char*>(&v), 4);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}
std::uint64_t get_u64(std::istream& is) {
  std::uint64_t v;
  is.read(reinterpret_cast<char*>(&v), 8);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}
double get_f64(std::istream& is) {
  double v;
  is.read(reinterpret_cast<char*>(&v), 8);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

void put_named_arrays(std::ostream& os, const std::map<std::string, Array>& arrays) {
  put_u32(os, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& [name, arr] : arrays) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<std::uint32_t>(arr.shape.size()));
    for (std::size_t d : arr.shape) put_u64(os, d);
    os.write(reinterpret_cast<const char*>(arr.data.data()),
             static_cast<std::streamsize>(arr.data.size() * 8));
  }
}

std::map<std::string, Array> get_named_arrays(std::istream& is) {
  std::map<std::string, Array> out;
  std::uint32_t count = get_u32(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t len = get_u32(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    std::uint32_t ndim = get_u32(is);
    Shape shape(ndim);
    for (auto& d : shape) d = get_u64(is);
    Array arr = Array::zeros(shape);
    is.read(reinterpret_cast<char*>(arr.data.data()),
            static_cast<std::streamsize>(arr.data.size() * 8));
    if (!is) throw std::runtime_error("checkpoint: truncated tensor " + name);
    out[name] = std::move(arr);
  }
  return out;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ostringstream os(std::ios::binary);
  os.write(kMagic, 6);
  put_u32(os, ckpt.version);
  put_u64(os, ckpt.config_hash);
  put_u64(os, ckpt.step);
  put_named_arrays(os, ckpt.params.values);
  put_f64(os, ckpt.optim.hyper.lr_max);
  put_f64(os, ckpt.optim.hyper.beta1);
  put_f64(os, ckpt.optim.hyper.beta2);
  put_f64(os, ckpt.optim.hyper.eps);
  put_f64(os, ckpt.optim.hyper.weight_decay);
  put_u64(os, ckpt.optim.step);
  put_named_arrays(os, ckpt.optim.m);
  put_named_arrays(os, ckpt.optim.v);
  put_u32(os, static_cast<std::uint32_t>(ckpt.rng_state.size()));
  os.write(ckpt.rng_state.data(), static_cast<std::streamsize>(ckpt.rng_state.size()));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("checkpoint: cannot write " + path);
  std::string blob = os.str();
  f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!f) throw std::runtime_error("checkpoint: short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path, std::optional<std::uint64_t> expect_hash) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[6];
  is.read(magic, 6);
  if (!is || std::memcmp(magic, kMagic, 6) != 0)
    throw std::runtime_error("checkpoint: wrong version (bad magic in " + path + ")");
  Checkpoint ckpt;
  ckpt.version = get_u32(is);
  if (ckpt.version != 1)
    throw std::runtime_error("checkpoint: wrong version " + std::to_string(ckpt.version));
  ckpt.config_hash = get_u64(is);
  if (expect_hash && *expect_hash != ckpt.config_hash)
    throw std::runtime_error("checkpoint: wrong config (hash mismatch: checkpoint " +
                             std::to_string(ckpt.config_hash) + " vs current " +
                             std::to_string(*expect_hash) + ")");
  ckpt.step = get_u64(is);
  ckpt.params.values = get_named_arrays(is);
  ckpt.optim.hyper.lr_max = get_f64(is);
  ckpt.optim.hyper.beta1 = get_f64(is);
  ckpt.optim.hyper.beta2 = get_f64(is);
  ckpt.optim.hyper.eps = get_f64(is);
  ckpt.optim.hyper.weight_decay = get_f64(is);
  ckpt.optim.step = get_u64(is);
  ckpt.optim.m = get_named_arrays(is);
  ckpt.optim.v = get_named_arrays(is);
  std::uint32_t rng_len = get_u32(is);
  ckpt.rng_state.resize(rng_len);
  is.read(ckpt.rng_state.data(), rng_len);
  if (!is) throw std::runtime_error("checkpoint: truncated rng state");
  return ckpt;
}

// ---------------------------------------------------------------------------

std::vector<Sample> load_samples(const data::Manifest& manifest) {
  std::vector<Sample> samples;
  for (const auto& rec : manifest.samples) {
    Sample s;
    s.cloud = data::load_point_cloud_bin(rec.cloud_path);
    s.voxels = data::voxelize(s.cloud, manifest.grid);
    s.cameras = rec.cameras;
    s.scene_path = rec.scene_path;
    for (const auto& path : rec.image_paths) s.images.push_back(data::load_image_ppm(path));
    for (const auto& cam : rec.cameras)
      s.depth_per.push_back(data::make_perspective_depth_target(s.cloud, cam));
    s.depth_bev = data::make_bev_depth_target(s.cloud, manifest.grid);
    samples.push_back(std::move(s));
  }
  return samples;
}

namespace {

struct ElementNodes {
  int c_raw = -1;
  int d_per_raw = -1;
  int d_bev_raw = -1;
};

mask::PatchMask make_patch_mask(const data::ImageFrame& img, int patch, double ratio,
                                std::uint64_t seed) {
  std::vector<double> dummy(static_cast<std::size_t>(patch) * patch * 3, 0.0);
  return mask::mask_image(img, patch, ratio, dummy, seed).mask;
}

// One training sample's subgraph: mask -> embed -> align -> fuse -> render
// selected rays from both viewpoints -> raw reconstruction losses.
ElementNodes build_element(Tape& tape, const net::ParamNodes& pn, const TrainConfig& cfg,
                           const Sample& sample, std::mt19937_64& rng) {
  int fused = -1;
  if (cfg.net.use_camera) {
    std::vector<int> embs;
    for (std::size_t c = 0; c < sample.images.size(); ++c) {
      mask::PatchMask pmask =
          make_patch_mask(sample.images[c], cfg.net.patch, cfg.image_mask_ratio, rng());
      int img = net::build_masked_image(tape, sample.images[c], pmask, pn.at("mask_token"));
      embs.push_back(net::encode_camera(tape, img, pn, cfg.net));
    }
    fused = net::align_image_to_world(tape, embs, sample.cameras, cfg.grid, cfg.net);
  }
  if (cfg.net.use_lidar) {
    auto [masked_grid, vmask] =
        mask::mask_voxels(sample.voxels, cfg.voxel_mask_ratio, cfg.voxel_mask_mode, rng());
    int lidar = net::encode_lidar(tape, masked_grid, pn, cfg.net);
    fused = (fused < 0) ? lidar : net::fuse(tape, fused, lidar);
  }
  if (fused < 0) throw std::runtime_error("pretrain: both modality branches disabled");

  ElementNodes out;

  // perspective color rays, pooled across cameras
  {
    std::vector<geom::Ray> rays;
    std::vector<double> targets;
    for (std::size_t c = 0; c < sample.cameras.size(); ++c) {
      const geom::CameraModel& cam = sample.cameras[c];
      std::uniform_int_distribution<int> du(0, cam.width - 1), dv(0, cam.height - 1);
      for (int k = 0; k < cfg.color_rays; ++k) {
        int u = du(rng), v = dv(rng);
        geom::Ray ray;
        ray.origin = cam.translation;
        ray.direction = cam.pixel_direction(u + 0.5, v + 0.5);
        ray.t_near = cfg.t_near_per;
        ray.delta = cfg.delta_per;
        ray.sample_count = cfg.samples_per;
        rays.push_back(ray);
        for (int ch = 0; ch < 3; ++ch) targets.push_back(sample.images[c].at(v, u, ch));
      }
    }
    auto rn = render::render_rays_tape(tape, fused, cfg.grid, rays, pn, cfg.net, true);
    Array tgt({rays.size(), 3}, std::move(targets));
    out.c_raw = loss::lp_loss_tape(tape, rn.color, tgt, cfg.loss.at("C").p);
  }

  // perspective depth rays from valid D^PER pixels
  {
    struct Candidate {
      std::size_t cam;
      int u, v;
      double t;  // ray distance from t_near
    };
    std::vector<Candidate> cands;
    for (std::size_t c = 0; c < sample.cameras.size(); ++c) {
      const geom::CameraModel& cam = sample.cameras[c];
      const data::DepthMap& dm = sample.depth_per[c];
      for (int v = 0; v < dm.height; ++v)
        for (int u = 0; u < dm.width; ++u) {
          if (!dm.valid[dm.idx(v, u)]) continue;
          double xc = (u + 0.5 - cam.cx) / cam.fx;
          double yc = (v + 0.5 - cam.cy) / cam.fy;
          double t = dm.depth[dm.idx(v, u)] * std::sqrt(xc * xc + yc * yc + 1.0) -
                     cfg.t_near_per;
          if (t < 0) continue;
          cands.push_back({c, u, v, t});
        }
    }
    if (cands.empty()) throw std::runtime_error("pretrain: no valid perspective depth rays");
    std::uniform_int_distribution<std::size_t> pick(0, cands.size() - 1);
    std::vector<geom::Ray> rays;
    std::vector<double> targets;
    int want = cfg.depth_rays * static_cast<int>(sample.cameras.size());
    for (int k = 0; k < want; ++k) {
      const Candidate& cd = cands[pick(rng)];
      const geom::CameraModel& cam = sample.cameras[cd.cam];
      geom::Ray ray;
      ray.origin = cam.translation;
      ray.direction = cam.pixel_direction(cd.u + 0.5, cd.v + 0.5);
      ray.t_near = cfg.t_near_per;
      ray.delta = cfg.delta_per;
      ray.sample_count = cfg.samples_per;
      rays.push_back(ray);
      targets.push_back(cd.t);
    }
    auto rn = render::render_rays_tape(tape, fused, cfg.grid, rays, pn, cfg.net, false);
    Array tgt({rays.size()}, std::move(targets));
    out.d_per_raw = loss::lp_loss_tape(tape, rn.depth, tgt, cfg.loss.at("D_PER").p);
  }

  // BEV depth rays from valid D^BEV cells
  {
    const data::DepthMap& dm = sample.depth_bev;
    std::vector<std::size_t> valid_cells;
    for (std::size_t i = 0; i < dm.valid.size(); ++i)
      if (dm.valid[i]) valid_cells.push_back(i);
    if (valid_cells.empty()) throw std::runtime_error("pretrain: no valid BEV depth rays");
    std::uniform_int_distribution<std::size_t> pick(0, valid_cells.size() - 1);
    int n_bev = static_cast<int>(std::ceil((cfg.grid.z_max - cfg.grid.z_min) / cfg.delta_bev));
    std::vector<geom::Ray> rays;
    std::vector<double> targets;
    for (int k = 0; k < cfg.bev_ray_count; ++k) {
      std::size_t cell = valid_cells[pick(rng)];
      int ix = static_cast<int>(cell % static_cast<std::size_t>(dm.width));
      int iy = static_cast<int>(cell / static_cast<std::size_t>(dm.width));
      geom::Ray ray;
      ray.origin = {cfg.grid.x_min + (ix + 0.5) * cfg.grid.size_x,
                    cfg.grid.y_min + (iy + 0.5) * cfg.grid.size_y, cfg.grid.z_max};
      ray.direction = {0, 0, -1};
      ray.t_near = 0;
      ray.delta = cfg.delta_bev;
      ray.sample_count = n_bev;
      rays.push_back(ray);
      targets.push_back(dm.depth[cell]);
    }
    auto rn = render::render_rays_tape(tape, fused, cfg.grid, rays, pn, cfg.net, false);
    Array tgt({rays.size()}, std::move(targets));
    out.d_bev_raw = loss::lp_loss_tape(tape, rn.depth, tgt, cfg.loss.at("D_BEV").p);
  }
  return out;
}

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void rng_from_string(std::mt19937_64& rng, const std::string& s) {
  std::istringstream is(s);
  is >> rng;
  if (!is) throw std::runtime_error("checkpoint: malformed rng state");
}

nlohmann::json report_to_json(std::uint64_t step, double lr, const loss::LossReport& report) {
  nlohmann::json j;
  j["step"] = step;
  j["lr"] = lr;
  for (const auto& t : report.targets) {
    j["loss"][t.id] = {{"raw", t.raw}, {"weighted", t.weighted}, {"rays", t.ray_count}};
  }
  j["total"] = report.total;
  return j;
}

}  // namespace

PretrainResult pretrain(const TrainConfig& cfg, const std::vector<Sample>& samples,
                        const std::string& out_dir, const std::optional<Checkpoint>& resume) {
  if (samples.empty()) throw std::runtime_error("pretrain: no samples");
  std::filesystem::create_directories(out_dir);

  std::mt19937_64 init_rng(cfg.seed);
  net::ParamSet params = net::init_params(cfg.net, init_rng);
  OptimState optim = OptimState::init(params, cfg.optim);
  std::mt19937_64 data_rng(cfg.seed ^ 0x5DEECE66DULL);
  std::uint64_t start = 0;

  if (resume) {
    if (resume->config_hash != cfg.config_hash)
      throw std::runtime_error("pretrain: checkpoint config hash mismatch");
    params = resume->params;
    optim = resume->optim;
    rng_from_string(data_rng, resume->rng_state);
    start = resume->step;
  }

  std::ofstream log_file(out_dir + "/loss_log.jsonl",
                         resume ? std::ios::app : std::ios::trunc);
  if (!log_file) throw std::runtime_error("pretrain: cannot write loss log in " + out_dir);

  PretrainResult result;
  std::uniform_int_distribution<std::size_t> pick_sample(0, samples.size() - 1);

  auto make_ckpt = [&](std::uint64_t step) {
    Checkpoint c;
    c.config_hash = cfg.config_hash;
    c.params = params;
    c.optim = optim;
    c.rng_state = rng_to_string(data_rng);
    c.step = step;
    return c;
  };

  for (std::uint64_t step = start; step < cfg.steps; ++step) {
    double lr = one_cycle_lr(step, cfg.steps, cfg.optim.lr_max, cfg.warmup_frac, cfg.div_factor,
                             cfg.final_div_factor);
    Tape tape;
    net::ParamNodes pn = net::add_param_inputs(tape, params);
    std::vector<ElementNodes> elements;
    int weighted_sum = -1;
    for (int b = 0; b < cfg.batch; ++b) {
      const Sample& sample = samples[pick_sample(data_rng)];
      ElementNodes en = build_element(tape, pn, cfg, sample, data_rng);
      elements.push_back(en);
      int w = tape.add(tape.scale(en.c_raw, cfg.loss.at("C").lambda),
                       tape.add(tape.scale(en.d_per_raw, cfg.loss.at("D_PER").lambda),
                                tape.scale(en.d_bev_raw, cfg.loss.at("D_BEV").lambda)));
      weighted_sum = (weighted_sum < 0) ? w : tape.add(weighted_sum, w);
    }
    int total = tape.scale(weighted_sum, 1.0 / cfg.batch);
    for (const auto& en : elements) {
      tape.mark_output(en.c_raw);
      tape.mark_output(en.d_per_raw);
      tape.mark_output(en.d_bev_raw);
    }
    tape.mark_output(total);
    tape.set_loss(total);

    std::vector<Array> inputs;
    for (const auto& name : pn.order) inputs.push_back(params.at(name));

    ndgrad::ForwardBackwardResult fb;
    try {
      fb = tape.forward_backward(inputs);
    } catch (const std::exception&) {
      save_checkpoint(make_ckpt(step), out_dir + "/last_good.ckpt");
      throw;
    }

    double c_raw = 0, dp_raw = 0, db_raw = 0;
    for (std::size_t b = 0; b < elements.size(); ++b) {
      c_raw += fb.outputs[b * 3 + 0][0];
      dp_raw += fb.outputs[b * 3 + 1][0];
      db_raw += fb.outputs[b * 3 + 2][0];
    }
    c_raw /= cfg.batch;
    dp_raw /= cfg.batch;
    db_raw /= cfg.batch;

    std::map<std::string, Array> grads;
    for (std::size_t i = 0; i < pn.order.size(); ++i) grads[pn.order[i]] = fb.gradients[i];
    adamw_step(params, grads, optim, lr);

    StepResult sr;
    sr.lr = lr;
    sr.report = loss::total_loss({{"C", c_raw}, {"D_PER", dp_raw}, {"D_BEV", db_raw}}, cfg.loss,
                                 {static_cast<std::size_t>(cfg.color_rays),
                                  static_cast<std::size_t>(cfg.depth_rays),
                                  static_cast<std::size_t>(cfg.bev_ray_count)});
    log_file << report_to_json(step, lr, sr.report).dump() << "\n";
    result.log.push_back(sr);

    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0)
      save_checkpoint(make_ckpt(step + 1), out_dir + "/step_" + std::to_string(step + 1) + ".ckpt");
  }
  log_file.flush();
  result.checkpoint = make_ckpt(cfg.steps);
  save_checkpoint(result.checkpoint, out_dir + "/final.ckpt");
  return result;
}

net::FeatureVolume compute_fused_volume(const TrainConfig& cfg, const Sample& sample,
                                        const net::ParamSet& params) {
  Tape tape;
  net::ParamNodes pn = net::add_param_inputs(tape, params);
  int fused = -1;
  if (cfg.net.use_camera) {
    std::vector<int> embs;
    for (std::size_t c = 0; c < sample.images.size(); ++c) {
      const data::ImageFrame& img = sample.images[c];
      int node = tape.constant(Array({static_cast<std::size_t>(img.height),
                                      static_cast<std::size_t>(img.width), 3},
                                     img.values));
      embs.push_back(net::encode_camera(tape, node, pn, cfg.net));
    }
    fused = net::align_image_to_world(tape, embs, sample.cameras, cfg.grid, cfg.net);
  }
  if (cfg.net.use_lidar) {
    int lidar = net::encode_lidar(tape, sample.voxels, pn, cfg.net);
    fused = (fused < 0) ? lidar : net::fuse(tape, fused, lidar);
  }
  if (fused < 0) throw std::runtime_error("compute_fused_volume: no modality enabled");

  std::vector<Array> inputs;
  for (const auto& name : pn.order) inputs.push_back(params.at(name));
  std::vector<Array> vals = tape.forward(inputs);

  net::FeatureVolume vol;
  vol.grid = cfg.grid;
  vol.channels = tape.shape_of(fused).back();
  vol.values = vals[static_cast<std::size_t>(fused)];
  return vol;
}

namespace {

double rank_auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // average ranks over ties
  std::vector<double> rank(scores.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double pos_rank_sum = 0;
  std::size_t n_pos = 0;
  for (std::size_t k = 0; k < labels.size(); ++k)
    if (labels[k]) {
      pos_rank_sum += rank[k];
      ++n_pos;
    }
  std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw std::runtime_error("linear_probe: degenerate labels (single class)");
  return (pos_rank_sum - 0.5 * n_pos * (n_pos + 1)) / (static_cast<double>(n_pos) * n_neg);
}

}  // namespace

ProbeResult linear_probe_eval(const TrainConfig& cfg, const net::ParamSet& params,
                              const std::vector<Sample>& train_samples,
                              const std::vector<synth::SceneSpec>& train_scenes,
                              const std::vector<Sample>& eval_samples,
                              const std::vector<synth::SceneSpec>& eval_scenes,
                              std::uint64_t seed) {
  if (train_samples.size() != train_scenes.size() || eval_samples.size() != eval_scenes.size())
    throw std::runtime_error("linear_probe: sample/scene count mismatch");
  std::size_t C = static_cast<std::size_t>(cfg.net.fused_channels());

  auto collect = [&](const std::vector<Sample>& ss, const std::vector<synth::SceneSpec>& scenes,
                     std::vector<double>& X, std::vector<std::uint8_t>& y) {
    for (std::size_t i = 0; i < ss.size(); ++i) {
      net::FeatureVolume vol = compute_fused_volume(cfg, ss[i], params);
      auto labels = synth::occupancy_labels(scenes[i], cfg.grid);
      X.insert(X.end(), vol.values.data.begin(), vol.values.data.end());
      y.insert(y.end(), labels.begin(), labels.end());
    }
  };
  std::vector<double> x_train, x_eval;
  std::vector<std::uint8_t> y_train, y_eval;
  collect(train_samples, train_scenes, x_train, y_train);
  collect(eval_samples, eval_scenes, x_eval, y_eval);
  std::size_t n_train = y_train.size();

  bool has_pos = false, has_neg = false;
  for (auto l : y_train) (l ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg)
    throw std::runtime_error("linear_probe: degenerate labels (single class)");

  // feature standardization from train statistics
  std::vector<double> mean(C, 0.0), inv_std(C, 1.0);
  for (std::size_t i = 0; i < n_train; ++i)
    for (std::size_t c = 0; c < C; ++c) mean[c] += x_train[i * C + c];
  for (auto& m : mean) m /= static_cast<double>(n_train);
  std::vector<double> var(C, 0.0);
  for (std::size_t i = 0; i < n_train; ++i)
    for (std::size_t c = 0; c < C; ++c) {
      double d = x_train[i * C + c] - mean[c];
      var[c] += d * d;
    }
  for (std::size_t c = 0; c < C; ++c)
    inv_std[c] = 1.0 / std::sqrt(var[c] / static_cast<double>(n_train) + 1e-12);
  auto standardize = [&](std::vector<double>& X) {
    for (std::size_t i = 0; i < X.size() / C; ++i)
      for (std::size_t c = 0; c < C; ++c) X[i * C + c] = (X[i * C + c] - mean[c]) * inv_std[c];
  };
  standardize(x_train);
  standardize(x_eval);

  // logistic readout trained with the same optimizer
  Tape tape;
  int w_node = tape.input({C, 1});
  int b_node = tape.input({1});
  int X_node = tape.constant(Array({n_train, C}, x_train));
  std::vector<double> yv(y_train.begin(), y_train.end());
  int z = tape.add_bias(tape.matmul(X_node, w_node), b_node);  // [n,1]
  int yz = tape.mul(z, tape.constant(Array({n_train, 1}, std::move(yv))));
  int bce = tape.scale(tape.sum(tape.sub(tape.softplus(z), yz)), 1.0 / n_train);
  tape.set_loss(bce);

  std::mt19937_64 rng(seed);
  net::ParamSet probe;
  probe.values["w"] = Array::randn({C, 1}, rng, 0.01);
  probe.values["b"] = Array::zeros({1});
  OptimHyper hyper;
  hyper.lr_max = 0.05;
  OptimState opt = OptimState::init(probe, hyper);
  const std::uint64_t kProbeSteps = 200;
  for (std::uint64_t s = 0; s < kProbeSteps; ++s) {
    auto fb = tape.forward_backward({probe.values["w"], probe.values["b"]});
    std::map<std::string, Array> grads;
    grads["w"] = fb.gradients[0];
    grads["b"] = fb.gradients[1];
    adamw_step(probe, grads, opt, one_cycle_lr(s, kProbeSteps, hyper.lr_max));
  }

  const Array& w = probe.values["w"];
  double bias = probe.values["b"][0];
  std::size_t n_eval = y_eval.size();
  std::vector<double> scores(n_eval);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n_eval; ++i) {
    double zv = bias;
    for (std::size_t c = 0; c < C; ++c) zv += x_eval[i * C + c] * w.data[c];
    scores[i] = zv;
    if ((zv > 0) == (y_eval[i] != 0)) ++correct;
  }
  ProbeResult res;
  res.auc = rank_auc(scores, y_eval);
  res.accuracy = static_cast<double>(correct) / static_cast<double>(n_eval);
  return res;
}

}  // namespace nsmae::train
