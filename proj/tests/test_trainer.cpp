#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <unistd.h>

#include "nsmae/config.hpp"
#include "nsmae/trainer.hpp"

using namespace nsmae;

namespace {

std::filesystem::path temp_dir(const char* tag) {
  auto p = std::filesystem::temp_directory_path() /
           (std::string("nsmae_test_") + tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

net::ParamSet single_param(const std::string& name, std::vector<double> vals) {
  net::ParamSet p;
  std::size_t n = vals.size();
  p.values[name] = Array({n}, std::move(vals));
  return p;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.is_open());
  return std::string(std::istreambuf_iterator<char>(f), {});
}

// Small, fast training configuration over a 8x8x4 grid.
train::TrainConfig tiny_train_config() {
  config::AppConfig app = config::make_app_config(config::default_config_json());
  train::TrainConfig cfg = app.train;
  cfg.net.c_img = 3;
  cfg.net.c_lidar = 3;
  cfg.net.conv_hidden = 3;
  cfg.net.render_hidden = 4;
  cfg.net.pe_freqs = 2;
  cfg.net.patch = 4;
  cfg.grid.x_min = -2;
  cfg.grid.x_max = 2;
  cfg.grid.y_min = -2;
  cfg.grid.y_max = 2;
  cfg.grid.z_min = -1;
  cfg.grid.z_max = 1;
  cfg.grid.size_x = cfg.grid.size_y = cfg.grid.size_z = 0.5;
  cfg.samples_per = 12;
  cfg.color_rays = 4;
  cfg.depth_rays = 4;
  cfg.bev_ray_count = 8;
  cfg.batch = 2;
  cfg.steps = 3;
  cfg.checkpoint_every = 2;
  return cfg;
}

std::vector<train::Sample> tiny_samples(const train::TrainConfig& cfg, int n_scenes,
                                        std::uint64_t seed, const char* tag,
                                        std::vector<synth::SceneSpec>* scenes_out = nullptr) {
  synth::SynthDatasetParams params;
  params.n_scenes = n_scenes;
  params.image_width = 16;
  params.image_height = 16;
  params.n_cameras = 1;
  params.lidar_azimuth = 48;
  params.lidar_elevation = 10;
  params.seed = seed;
  auto dir = temp_dir(tag);
  auto manifest = synth::write_synth_dataset(params, cfg.grid, dir.string());
  if (scenes_out)
    for (const auto& s : manifest.samples)
      scenes_out->push_back(synth::load_scene_json(s.scene_path));
  return train::load_samples(manifest);
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("adamw follows the hand-rolled recurrence") {
  net::ParamSet params = single_param("w", {1.0, -2.0, 0.5});
  train::OptimHyper hyper;
  hyper.beta1 = 0.9;
  hyper.beta2 = 0.999;
  hyper.eps = 1e-8;
  hyper.weight_decay = 0.01;
  auto state = train::OptimState::init(params, hyper);

  // reference implementation, kept deliberately naive
  std::vector<double> theta{1.0, -2.0, 0.5}, m(3, 0.0), v(3, 0.0);
  std::mt19937_64 rng(31);
  std::normal_distribution<double> gd(0.0, 1.0);
  for (int step = 1; step <= 10; ++step) {
    std::vector<double> g{gd(rng), gd(rng), gd(rng)};
    double lr = 1e-3 * step;
    std::map<std::string, Array> grads;
    grads["w"] = Array({3}, std::vector<double>(g));
    train::adamw_step(params, grads, state, lr);
    for (int i = 0; i < 3; ++i) {
      m[static_cast<std::size_t>(i)] =
          0.9 * m[static_cast<std::size_t>(i)] + 0.1 * g[static_cast<std::size_t>(i)];
      v[static_cast<std::size_t>(i)] = 0.999 * v[static_cast<std::size_t>(i)] +
                                       0.001 * g[static_cast<std::size_t>(i)] *
                                           g[static_cast<std::size_t>(i)];
      double mh = m[static_cast<std::size_t>(i)] / (1.0 - std::pow(0.9, step));
      double vh = v[static_cast<std::size_t>(i)] / (1.0 - std::pow(0.999, step));
      theta[static_cast<std::size_t>(i)] -=
          lr * (mh / (std::sqrt(vh) + 1e-8) + 0.01 * theta[static_cast<std::size_t>(i)]);
      CHECK(params.values.at("w")[static_cast<std::size_t>(i)] ==
            doctest::Approx(theta[static_cast<std::size_t>(i)]).epsilon(1e-12));
    }
  }
  CHECK(state.step == 10);
}

TEST_CASE("adamw with zero gradients applies pure decoupled decay") {
  net::ParamSet params = single_param("w", {4.0});
  train::OptimHyper hyper;
  hyper.weight_decay = 0.1;
  auto state = train::OptimState::init(params, hyper);
  std::map<std::string, Array> grads;
  grads["w"] = Array::zeros({1});
  train::adamw_step(params, grads, state, 0.5);
  CHECK(params.values.at("w")[0] == doctest::Approx(4.0 * (1.0 - 0.5 * 0.1)).epsilon(1e-12));

  // non-finite gradient is rejected with the parameter name in the message
  grads["w"][0] = std::numeric_limits<double>::quiet_NaN();
  try {
    train::adamw_step(params, grads, state, 0.5);
    FAIL("expected throw");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("w") != std::string::npos);
  }
}

TEST_CASE("one-cycle schedule hits its endpoints") {
  double lr_max = 2e-3;
  std::uint64_t total = 1000;
  CHECK(train::one_cycle_lr(0, total, lr_max) == doctest::Approx(lr_max / 25.0).epsilon(1e-12));
  CHECK(train::one_cycle_lr(300, total, lr_max) == doctest::Approx(lr_max).epsilon(1e-12));
  CHECK(train::one_cycle_lr(total, total, lr_max) ==
        doctest::Approx(lr_max / 1e4).epsilon(1e-9));
  // monotone up then down
  for (std::uint64_t s = 1; s <= 300; ++s)
    CHECK(train::one_cycle_lr(s, total, lr_max) >= train::one_cycle_lr(s - 1, total, lr_max));
  for (std::uint64_t s = 301; s <= total; ++s)
    CHECK(train::one_cycle_lr(s, total, lr_max) <= train::one_cycle_lr(s - 1, total, lr_max));
}

TEST_CASE("checkpoints round trip bit-exactly and reject corruption") {
  std::mt19937_64 rng(7);
  net::NetConfig ncfg;
  ncfg.c_img = 3;
  ncfg.c_lidar = 3;
  ncfg.conv_hidden = 3;
  ncfg.render_hidden = 4;
  train::Checkpoint ckpt;
  ckpt.config_hash = 0xDEADBEEFCAFEF00DULL;
  ckpt.params = net::init_params(ncfg, rng);
  ckpt.optim = train::OptimState::init(ckpt.params, {});
  ckpt.optim.step = 17;
  ckpt.step = 17;
  std::ostringstream rs;
  rs << rng;
  ckpt.rng_state = rs.str();

  auto dir = temp_dir("ckpt");
  auto path = (dir / "a.ckpt").string();
  train::save_checkpoint(ckpt, path);
  auto back = train::load_checkpoint(path, ckpt.config_hash);
  CHECK(back.step == 17);
  CHECK(back.config_hash == ckpt.config_hash);
  CHECK(back.rng_state == ckpt.rng_state);
  for (const auto& [name, arr] : ckpt.params.values) {
    const Array& other = back.params.at(name);
    REQUIRE(other.data.size() == arr.data.size());
    for (std::size_t i = 0; i < arr.data.size(); ++i) CHECK(other.data[i] == arr.data[i]);
  }
  for (const auto& [name, arr] : ckpt.optim.m) {
    for (std::size_t i = 0; i < arr.data.size(); ++i)
      CHECK(back.optim.m.at(name).data[i] == arr.data[i]);
  }

  // wrong expected hash
  try {
    static_cast<void>(train::load_checkpoint(path, 123u));
    FAIL("expected throw");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("config") != std::string::npos);
  }

  // truncation at several byte offsets never crashes, always throws
  auto bytes = slurp(path);
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{10}, bytes.size() / 2,
                          bytes.size() - 1}) {
    auto tp = (dir / "trunc.ckpt").string();
    std::ofstream out(tp, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(cut));
    out.close();
    CHECK_THROWS(static_cast<void>(train::load_checkpoint(tp, std::nullopt)));
  }

  // wrong magic
  {
    auto bad = bytes;
    bad[0] = 'X';
    auto bp = (dir / "badmagic.ckpt").string();
    std::ofstream out(bp, std::ios::binary);
    out.write(bad.data(), static_cast<std::streamsize>(bad.size()));
    out.close();
    CHECK_THROWS(static_cast<void>(train::load_checkpoint(bp, std::nullopt)));
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("identical runs are bit-identical and resume continues exactly") {
  auto cfg = tiny_train_config();
  auto samples = tiny_samples(cfg, 3, 11, "train_det");

  auto dir_a = temp_dir("run_a");
  auto dir_b = temp_dir("run_b");
  auto ra = train::pretrain(cfg, samples, dir_a.string());
  auto rb = train::pretrain(cfg, samples, dir_b.string());
  CHECK(slurp(dir_a / "loss_log.jsonl") == slurp(dir_b / "loss_log.jsonl"));
  for (const auto& [name, arr] : ra.checkpoint.params.values)
    for (std::size_t i = 0; i < arr.data.size(); ++i)
      CHECK(rb.checkpoint.params.at(name).data[i] == arr.data[i]);

  // run 5 steps straight, then redo the tail from the step-4 checkpoint:
  // identical parameters (the schedule depends on total steps, so resume
  // must reuse the same configuration)
  auto cfg5 = cfg;
  cfg5.steps = 5;
  cfg5.checkpoint_every = 4;
  auto dir_c = temp_dir("run_c");
  auto rc = train::pretrain(cfg5, samples, dir_c.string());

  auto dir_d = temp_dir("run_d");
  auto mid = train::load_checkpoint((dir_c / "step_4.ckpt").string(), cfg5.config_hash);
  auto rd = train::pretrain(cfg5, samples, dir_d.string(), mid);
  CHECK(rd.checkpoint.step == 5);
  for (const auto& [name, arr] : rc.checkpoint.params.values)
    for (std::size_t i = 0; i < arr.data.size(); ++i)
      CHECK(rd.checkpoint.params.at(name).data[i] == arr.data[i]);

  // the resumed log is the tail of the straight-through log
  auto log_c = slurp(dir_c / "loss_log.jsonl");
  auto log_d = slurp(dir_d / "loss_log.jsonl");
  CHECK(!log_d.empty());
  CHECK(log_c.size() > log_d.size());
  CHECK(log_c.compare(log_c.size() - log_d.size(), log_d.size(), log_d) == 0);

  for (const auto& d : {dir_a, dir_b, dir_c, dir_d}) std::filesystem::remove_all(d);
}

TEST_CASE("zero-step pretraining returns the seeded initialization") {
  auto cfg = tiny_train_config();
  cfg.steps = 0;
  auto samples = tiny_samples(cfg, 2, 13, "train_zero");
  auto dir = temp_dir("run_zero");
  auto r = train::pretrain(cfg, samples, dir.string());
  CHECK(r.checkpoint.step == 0);
  CHECK(r.log.empty());
  std::mt19937_64 rng(cfg.seed);
  auto expect = net::init_params(cfg.net, rng);
  for (const auto& [name, arr] : expect.values)
    for (std::size_t i = 0; i < arr.data.size(); ++i)
      CHECK(r.checkpoint.params.at(name).data[i] == arr.data[i]);
  std::filesystem::remove_all(dir);
}

TEST_CASE("probe on random labels scores near chance") {
  // scramble the link between features and labels by probing scenes whose
  // geometry is unrelated to the occupancy labels used for scoring
  auto cfg = tiny_train_config();
  std::vector<synth::SceneSpec> train_scenes, eval_scenes, shuffled;
  auto train_samples = tiny_samples(cfg, 4, 17, "probe_train", &train_scenes);
  auto eval_samples = tiny_samples(cfg, 3, 29, "probe_eval", &eval_scenes);
  // shuffled: labels from unrelated scenes
  for (std::size_t i = 0; i < eval_scenes.size(); ++i)
    shuffled.push_back(train_scenes[(i + 1) % train_scenes.size()]);

  std::mt19937_64 rng(cfg.seed);
  auto params = net::init_params(cfg.net, rng);
  double auc_sum = 0;
  int n = 0;
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL, 5ULL}) {
    auto res = train::linear_probe_eval(cfg, params, train_samples, train_scenes, eval_samples,
                                        shuffled, seed);
    auc_sum += res.auc;
    ++n;
  }
  CHECK(std::abs(auc_sum / n - 0.5) < 0.2);

  // matched labels with the same features do much better than scrambled ones
  auto matched = train::linear_probe_eval(cfg, params, train_samples, train_scenes, eval_samples,
                                          eval_scenes, 1);
  CHECK(matched.auc > auc_sum / n);
}

}  // TEST_SUITE
