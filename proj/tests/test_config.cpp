#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>

#include "nsmae/config.hpp"

using namespace nsmae;
using nlohmann::json;

TEST_SUITE("config") {

TEST_CASE("defaults describe the desk-scale configuration") {
  json j = config::default_config_json();
  auto app = config::make_app_config(j);
  CHECK(app.train.grid.extent_x() == 16);
  CHECK(app.train.grid.extent_y() == 16);
  CHECK(app.train.grid.extent_z() == 8);
  CHECK(app.train.net.c_img == 4);
  CHECK(app.train.net.c_lidar == 4);
  CHECK(app.train.steps == 2000);
  CHECK(app.train.batch == 4);
  CHECK(app.train.optim.lr_max == doctest::Approx(1e-4));
  CHECK(app.train.optim.weight_decay == doctest::Approx(0.01));
  CHECK(app.train.loss.at("C").lambda == doctest::Approx(1e4));
  CHECK(app.train.loss.at("D_PER").p == 1.0);
  CHECK(app.synth.n_scenes == 32);
  CHECK(app.train.config_hash == app.hash);
  CHECK(app.hash != 0);
}

TEST_CASE("strict merge rejects unknown keys and wrong types") {
  json base = config::default_config_json();

  // valid override merges cleanly
  json good = {{"optim", {{"lr", 5e-4}}}};
  json merged = config::merge_config(base, good);
  CHECK(merged["optim"]["lr"].get<double>() == doctest::Approx(5e-4));
  // untouched siblings keep their defaults
  CHECK(merged["optim"]["beta1"] == base["optim"]["beta1"]);

  // unknown key names the dotted path
  try {
    static_cast<void>(config::merge_config(base, {{"optim", {{"momentum", 0.9}}}}));
    FAIL("expected throw");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("optim.momentum") != std::string::npos);
  }

  // type mismatch is rejected
  CHECK_THROWS(static_cast<void>(config::merge_config(base, {{"optim", "fast"}})));
  CHECK_THROWS(static_cast<void>(config::merge_config(base, {{"train", {{"steps", "many"}}}})));
}

TEST_CASE("dotted overrides parse JSON literals with a string fallback") {
  json base = config::default_config_json();
  json j = config::apply_override(base, "optim.lr=2.5e-4");
  CHECK(j["optim"]["lr"].get<double>() == doctest::Approx(2.5e-4));
  j = config::apply_override(j, "train.steps=50");
  CHECK(j["train"]["steps"].get<int>() == 50);
  j = config::apply_override(j, "mask.voxel.mode=range_aware");
  CHECK(j["mask"]["voxel"]["mode"].get<std::string>() == "range_aware");
  j = config::apply_override(j, "seed=9");
  CHECK(j["seed"].get<int>() == 9);

  CHECK_THROWS(static_cast<void>(config::apply_override(base, "no.such.key=1")));
  CHECK_THROWS(static_cast<void>(config::apply_override(base, "optim.lr")));  // missing '='
}

TEST_CASE("the hash is stable, canonical, and sensitive to every field") {
  json base = config::default_config_json();
  auto a = config::make_app_config(base);
  auto b = config::make_app_config(base);
  CHECK(a.hash == b.hash);

  auto c = config::make_app_config(config::apply_override(base, "optim.lr=3e-4"));
  CHECK(c.hash != a.hash);
  auto d = config::make_app_config(config::apply_override(base, "seed=123"));
  CHECK(d.hash != a.hash);
  CHECK(d.hash != c.hash);

  // FNV-1a reference values
  CHECK(config::fnv1a_hash("") == 0xcbf29ce484222325ULL);
  CHECK(config::fnv1a_hash("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(config::fnv1a_hash("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("load_config layers file and flag overrides") {
  auto dir = std::filesystem::temp_directory_path() /
             ("nsmae_test_config_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  auto path = (dir / "run.json").string();
  {
    std::ofstream f(path);
    f << R"({"optim": {"lr": 7e-4}, "train": {"steps": 10}})";
  }
  auto app = config::load_config(path, {"train.steps=20"});
  CHECK(app.train.optim.lr_max == doctest::Approx(7e-4));  // from the file
  CHECK(app.train.steps == 20);                            // flag wins over file

  // empty path means pure defaults
  auto defaults = config::load_config("", {});
  CHECK(defaults.train.steps == 2000);

  // a file with an unknown section is rejected
  auto bad = (dir / "bad.json").string();
  {
    std::ofstream f(bad);
    f << R"({"optimizer": {"lr": 1e-3}})";
  }
  CHECK_THROWS(static_cast<void>(config::load_config(bad, {})));
  // malformed JSON is rejected
  auto broken = (dir / "broken.json").string();
  {
    std::ofstream f(broken);
    f << "{not json";
  }
  CHECK_THROWS(static_cast<void>(config::load_config(broken, {})));
  // missing file is rejected
  CHECK_THROWS(static_cast<void>(config::load_config((dir / "nope.json").string(), {})));
  std::filesystem::remove_all(dir);
}

TEST_CASE("mask mode strings map to the enum") {
  json base = config::default_config_json();
  auto uni = config::make_app_config(base);
  CHECK(uni.train.voxel_mask_mode == mask::VoxelMaskMode::kUniform);
  auto ra = config::make_app_config(config::apply_override(base, "mask.voxel.mode=range_aware"));
  CHECK(ra.train.voxel_mask_mode == mask::VoxelMaskMode::kRangeAware);
  CHECK_THROWS(static_cast<void>(
      config::make_app_config(config::apply_override(base, "mask.voxel.mode=sometimes"))));
}

}  // TEST_SUITE
