// nsmae command-line front end: dataset generation, pre-training, rendering,
// probing and verification sweeps. Exit codes: 0 success, 1 usage, 2 runtime.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nsmae/config.hpp"
#include "nsmae/renderer.hpp"
#include "nsmae/synth.hpp"
#include "nsmae/trainer.hpp"

namespace {

using namespace nsmae;

int resolve_threads(int flag_value) {
  if (flag_value > 0) return flag_value;
  if (const char* env = std::getenv("NSMAE_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

// Pull config-key overrides (--a.b.c=value) out of argv before CLI11 runs.
// A flag is an override when its key names a path in the config schema.
bool schema_has_path(const nlohmann::json& schema, const std::string& path) {
  const nlohmann::json* cur = &schema;
  std::size_t start = 0;
  while (true) {
    auto dot = path.find('.', start);
    std::string part = path.substr(start, dot - start);
    if (!cur->is_object() || !cur->contains(part)) return false;
    cur = &(*cur)[part];
    if (dot == std::string::npos) return true;
    start = dot + 1;
  }
}

std::vector<std::string> extract_overrides(std::vector<std::string>& args) {
  nlohmann::json schema = config::default_config_json();
  std::vector<std::string> overrides;
  std::vector<std::string> kept;
  for (auto& a : args) {
    auto eq = a.find('=');
    if (a.rfind("--", 0) == 0 && eq != std::string::npos &&
        schema_has_path(schema, a.substr(2, eq - 2))) {
      overrides.push_back(a.substr(2));
    } else {
      kept.push_back(a);
    }
  }
  args = kept;
  return overrides;
}

render::FieldFn scene_field(const synth::SceneSpec& scene) {
  return [&scene](const geom::Vec3& p, const geom::Vec3& dir) {
    render::RadianceSample s;
    s.position = p;
    s.direction = dir;
    double wsum = 0;
    for (const auto& prim : scene.primitives) {
      if (!prim.contains(p)) continue;
      s.sigma += prim.density;
      for (int c = 0; c < 3; ++c) s.color[c] += prim.density * prim.color[c];
      wsum += prim.density;
    }
    if (wsum > 0)
      for (int c = 0; c < 3; ++c) s.color[c] /= wsum;
    return s;
  };
}

int cmd_synth_gen(const config::AppConfig& app, const std::string& out_dir) {
  auto manifest = synth::write_synth_dataset(app.synth, app.train.grid, out_dir);
  std::cout << "wrote " << manifest.samples.size() << " scenes under " << out_dir << "\n";
  return 0;
}

int cmd_pretrain(const config::AppConfig& app, const std::string& data_path,
                 const std::string& out_dir, const std::string& resume_path) {
  auto manifest = data::load_manifest(data_path);
  auto samples = train::load_samples(manifest);
  std::optional<train::Checkpoint> resume;
  if (!resume_path.empty()) resume = train::load_checkpoint(resume_path, app.hash);
  auto result = train::pretrain(app.train, samples, out_dir, resume);
  const auto& last = result.log.back().report;
  std::cout << "finished step " << result.checkpoint.step << ", total loss " << last.total << "\n"
            << "checkpoint: " << out_dir << "/final.ckpt\n";
  return 0;
}

int cmd_render(const config::AppConfig& app, const std::string& ckpt_path,
               const std::string& data_path, int sample_index, const std::string& view,
               const std::string& out_dir, int threads) {
  auto ckpt = train::load_checkpoint(ckpt_path, app.hash);
  auto manifest = data::load_manifest(data_path);
  auto samples = train::load_samples(manifest);
  if (sample_index < 0 || static_cast<std::size_t>(sample_index) >= samples.size())
    throw std::runtime_error("render: sample index out of range");
  const train::Sample& sample = samples[static_cast<std::size_t>(sample_index)];
  net::FeatureVolume vol = compute_fused_volume(app.train, sample, ckpt.params);
  std::filesystem::create_directories(out_dir);

  if (view == "bev") {
    auto batch = geom::bev_rays(app.train.grid, app.train.delta_bev);
    auto vr = render::render_view(batch, vol, ckpt.params, app.train.net, threads);
    data::DepthMap dm = data::DepthMap::invalid_map(
        static_cast<int>(app.train.grid.extent_x()), static_cast<int>(app.train.grid.extent_y()));
    for (std::size_t i = 0; i < vr.depth.rows.size(); ++i) {
      const auto& prov = vr.depth.provenance[i];
      dm.depth[dm.idx(prov.b, prov.a)] = vr.depth.rows[i].value[0];
      dm.valid[dm.idx(prov.b, prov.a)] = 1;
    }
    data::save_depth_pfm(dm, out_dir + "/depth_bev.pfm");
    std::cout << "wrote " << out_dir << "/depth_bev.pfm\n";
    return 0;
  }
  if (view != "per") throw std::runtime_error("render: view must be 'per' or 'bev'");
  for (std::size_t c = 0; c < sample.cameras.size(); ++c) {
    auto batch = geom::perspective_rays(sample.cameras[c], 1, app.train.delta_per,
                                        app.train.samples_per, app.train.t_near_per);
    auto vr = render::render_view(batch, vol, ckpt.params, app.train.net, threads);
    data::ImageFrame img =
        data::ImageFrame::zeros(sample.cameras[c].width, sample.cameras[c].height);
    data::DepthMap dm =
        data::DepthMap::invalid_map(sample.cameras[c].width, sample.cameras[c].height);
    for (std::size_t i = 0; i < vr.color.rows.size(); ++i) {
      const auto& prov = vr.color.provenance[i];
      for (int ch = 0; ch < 3; ++ch) img.at(prov.b, prov.a, ch) = vr.color.rows[i].value[ch];
      dm.depth[dm.idx(prov.b, prov.a)] = vr.depth.rows[i].value[0];
      dm.valid[dm.idx(prov.b, prov.a)] = 1;
    }
    std::string tag = std::to_string(c);
    data::save_image_ppm(img, out_dir + "/color_cam" + tag + ".ppm");
    data::save_depth_pfm(dm, out_dir + "/depth_cam" + tag + ".pfm");
    std::cout << "wrote " << out_dir << "/color_cam" << tag << ".ppm and depth_cam" << tag
              << ".pfm\n";
  }
  return 0;
}

std::vector<synth::SceneSpec> load_scenes(const data::Manifest& manifest) {
  std::vector<synth::SceneSpec> scenes;
  for (const auto& rec : manifest.samples) {
    if (rec.scene_path.empty())
      throw std::runtime_error("probe: manifest sample has no scene spec");
    scenes.push_back(synth::load_scene_json(rec.scene_path));
  }
  return scenes;
}

int cmd_probe(const config::AppConfig& app, const std::string& ckpt_path,
              const std::string& train_data, const std::string& eval_data, bool random_init,
              std::uint64_t seed) {
  auto train_manifest = data::load_manifest(train_data);
  auto eval_manifest = data::load_manifest(eval_data);
  auto train_samples = train::load_samples(train_manifest);
  auto eval_samples = train::load_samples(eval_manifest);
  auto train_scenes = load_scenes(train_manifest);
  auto eval_scenes = load_scenes(eval_manifest);

  net::ParamSet params;
  if (random_init) {
    std::mt19937_64 rng(seed);
    params = net::init_params(app.train.net, rng);
  } else {
    params = train::load_checkpoint(ckpt_path, app.hash).params;
  }
  auto res = train::linear_probe_eval(app.train, params, train_samples, train_scenes,
                                      eval_samples, eval_scenes, seed);
  nlohmann::json j{{"auc", res.auc},
                   {"accuracy", res.accuracy},
                   {"init", random_init ? "random" : "checkpoint"}};
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0;
  auto report = [&](const std::string& name, double err) {
    std::cout << name << ": max rel error " << err << "\n";
    worst = std::max(worst, err);
  };

  {
    ndgrad::Tape tape;
    int x = tape.input({4, 6});
    int y = tape.input({4, 6});
    int z = tape.mul(tape.softplus(x), tape.sigmoid(y));
    z = tape.add(z, tape.exp(tape.scale(x, -0.5)));
    z = tape.sub(z, tape.reciprocal(tape.add(tape.abs_pow(y, 2.0), tape.scale(tape.one_minus(x), 0.0))));
    tape.set_loss(tape.sum(z));
    report("elementwise", tape.check_gradients(
                              {Array::randn({4, 6}, rng, 1.0), Array::randn({4, 6}, rng, 1.0)},
                              1e-5));
  }
  {
    ndgrad::Tape tape;
    int x = tape.input({6, 6, 2});
    int w = tape.input({3, 3, 2, 3});
    int b = tape.input({3});
    int h = tape.softplus(tape.conv2d(x, w, b, 2, 1));
    tape.set_loss(tape.sum(tape.abs_pow(h, 2.0)));
    report("conv2d",
           tape.check_gradients({Array::randn({6, 6, 2}, rng, 1.0),
                                 Array::randn({3, 3, 2, 3}, rng, 0.5), Array::randn({3}, rng, 0.5)},
                                1e-5));
  }
  {
    ndgrad::Tape tape;
    int x = tape.input({4, 4, 3, 2});
    int w = tape.input({3, 3, 3, 2, 2});
    int b = tape.input({2});
    tape.set_loss(tape.sum(tape.softplus(tape.conv3d(x, w, b, 1))));
    report("conv3d", tape.check_gradients({Array::randn({4, 4, 3, 2}, rng, 1.0),
                                           Array::randn({3, 3, 3, 2, 2}, rng, 0.5),
                                           Array::randn({2}, rng, 0.5)},
                                          1e-5));
  }
  {
    ndgrad::Tape tape;
    int a = tape.input({3, 5});
    int w = tape.input({5, 4});
    int s = tape.cumsum_exclusive(tape.matmul(a, w));
    tape.set_loss(tape.sum(tape.mul_rows(tape.reshape(s, {3, 4}), tape.sum_axis(a, 1))));
    report("matmul+cumsum",
           tape.check_gradients({Array::randn({3, 5}, rng, 1.0), Array::randn({5, 4}, rng, 1.0)},
                                1e-5));
  }
  {
    // miniature volume-render graph
    ndgrad::Tape tape;
    int sigma_raw = tape.input({2, 8});
    int color_raw = tape.input({16, 3});
    int sigma = tape.softplus(sigma_raw);
    int tau = tape.scale(sigma, 0.3);
    int T = tape.exp(tape.neg(tape.cumsum_exclusive(tau)));
    int alpha = tape.one_minus(tape.exp(tape.neg(tau)));
    int wgt = tape.mul(T, alpha);
    int col = tape.mul_rows(tape.sigmoid(color_raw), tape.reshape(wgt, {16}));
    tape.set_loss(tape.sum(tape.abs_pow(tape.sum_axis(tape.reshape(col, {2, 8, 3}), 1), 2.0)));
    report("render", tape.check_gradients({Array::randn({2, 8}, rng, 1.0),
                                           Array::randn({16, 3}, rng, 1.0)},
                                          1e-5));
  }
  std::cout << (worst < 1e-5 ? "PASS" : "FAIL") << " (worst " << worst << ")\n";
  return worst < 1e-5 ? 0 : 2;
}

int cmd_oracle_compare(const config::AppConfig& app, const std::vector<double>& deltas,
                       std::uint64_t seed) {
  const geom::GridSpec& grid = app.train.grid;
  synth::SceneSpec scene = synth::generate_scene(seed, 2, 3, grid);
  auto cams = synth::default_cameras(grid, 1, 32, 32);
  auto field = scene_field(scene);

  double prev_depth_err = -1;
  for (double delta : deltas) {
    int n = static_cast<int>(std::ceil(24.0 / delta));
    auto batch = geom::perspective_rays(cams[0], 4, delta, n, app.train.t_near_per);
    double max_color = 0, max_depth = 0, max_trans = 0;
    for (const auto& ray : batch.rays) {
      auto rc = render::render_color(ray, field);
      auto rd = render::render_depth(ray, field);
      auto oc = synth::oracle_render(ray, scene);
      double ds = synth::oracle_depth_staircase(ray, scene);
      for (int c = 0; c < 3; ++c)
        max_color = std::max(max_color, std::abs(rc.value[c] - oc.color[c]));
      max_depth = std::max(max_depth, std::abs(rd.value[0] - ds));
      max_trans = std::max(max_trans, std::abs(rc.final_transmittance - oc.transmittance));
      // cross-check against the continuous expectation too
      max_depth = std::max(0.0, max_depth);
      (void)oc.depth;
    }
    std::cout << "delta " << delta << ": color " << max_color << ", depth " << max_depth
              << ", transmittance " << max_trans;
    if (prev_depth_err >= 0 && max_depth > 0)
      std::cout << ", depth ratio vs prev " << prev_depth_err / max_depth;
    std::cout << "\n";
    prev_depth_err = max_depth;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::vector<std::string> overrides = extract_overrides(args);

  CLI::App cli("nsmae: LiDAR-camera masked autoencoding with NeRF-style rendering supervision");
  cli.require_subcommand(1);
  cli.fallthrough();
  std::string config_path, out_dir = "out", data_path, eval_path, ckpt_path, resume_path;
  std::string view = "per";
  int threads_flag = 0, sample_index = 0;
  bool random_init = false;
  std::uint64_t seed = 1;
  std::vector<double> deltas = {0.8, 0.4, 0.2, 0.1};
  cli.add_option("--config", config_path, "JSON config file");
  cli.add_option("--threads", threads_flag, "worker threads (env NSMAE_THREADS as fallback)");

  auto* sg = cli.add_subcommand("synth-gen", "generate a synthetic dataset");
  sg->add_option("--out", out_dir, "output directory");

  auto* pt = cli.add_subcommand("pretrain", "run the pre-training loop");
  pt->add_option("--data", data_path, "dataset manifest")->required();
  pt->add_option("--out", out_dir, "output directory");
  pt->add_option("--resume", resume_path, "checkpoint to resume from");

  auto* rd = cli.add_subcommand("render", "render a sample from a checkpoint");
  rd->add_option("--checkpoint", ckpt_path, "checkpoint path")->required();
  rd->add_option("--data", data_path, "dataset manifest")->required();
  rd->add_option("--sample", sample_index, "sample index");
  rd->add_option("--view", view, "'per' or 'bev'");
  rd->add_option("--out", out_dir, "output directory");

  auto* pb = cli.add_subcommand("probe", "linear-probe occupancy transfer");
  pb->add_option("--checkpoint", ckpt_path, "checkpoint path");
  pb->add_option("--data", data_path, "train dataset manifest")->required();
  pb->add_option("--eval-data", eval_path, "held-out dataset manifest")->required();
  pb->add_flag("--random-init", random_init, "probe randomly initialized parameters");
  pb->add_option("--seed", seed, "probe seed");

  auto* gc = cli.add_subcommand("gradcheck", "finite-difference gradient suite");
  gc->add_option("--seed", seed, "rng seed");

  auto* oc = cli.add_subcommand("oracle-compare", "renderer vs analytic oracle over delta");
  oc->add_option("--deltas", deltas, "sample spacings to sweep")->delimiter(',');
  oc->add_option("--seed", seed, "scene seed");

  auto* cf = cli.add_subcommand("config", "configuration utilities");
  cf->require_subcommand(1);
  auto* dump = cf->add_subcommand("dump", "print the fully defaulted config as JSON");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    cli.parse(reversed);
  } catch (const CLI::ParseError& e) {
    int code = cli.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    config::AppConfig app = config::load_config(config_path, overrides);
    int threads = resolve_threads(threads_flag);
    if (sg->parsed()) return cmd_synth_gen(app, out_dir);
    if (pt->parsed()) return cmd_pretrain(app, data_path, out_dir, resume_path);
    if (rd->parsed()) return cmd_render(app, ckpt_path, data_path, sample_index, view, out_dir, threads);
    if (pb->parsed()) {
      if (!random_init && ckpt_path.empty())
        throw CLI::ValidationError("probe", "--checkpoint or --random-init required");
      return cmd_probe(app, ckpt_path, data_path, eval_path, random_init, seed);
    }
    if (gc->parsed()) return cmd_gradcheck(seed);
    if (oc->parsed()) return cmd_oracle_compare(app, deltas, seed);
    if (dump->parsed()) {
      nlohmann::json full = config::default_config_json();
      if (!config_path.empty()) {
        std::ifstream f(config_path);
        if (!f) throw std::runtime_error("config: cannot open " + config_path);
        full = config::merge_config(std::move(full), nlohmann::json::parse(f));
      }
      for (const auto& ov : overrides) full = config::apply_override(std::move(full), ov);
      std::cout << full.dump(2) << "\n";
      return 0;
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
