#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nsmae/embednet.hpp"
#include "nsmae/masking.hpp"
#include "nsmae/objective.hpp"
#include "nsmae/synth.hpp"

namespace nsmae::train {

struct OptimHyper {
  double lr_max = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct OptimState {
  std::map<std::string, Array> m, v;  // first/second moment estimates
  std::uint64_t step = 0;
  OptimHyper hyper;

  static OptimState init(const net::ParamSet& params, OptimHyper hyper);
};

// Decoupled AdamW update in place. Throws on non-finite gradients, naming
// the parameter.
void adamw_step(net::ParamSet& params, const std::map<std::string, Array>& grads,
                OptimState& state, double lr);

// Linear warmup lr_max/25 -> lr_max over the first 30% of steps, then cosine
// decay to lr_max/1e4.
double one_cycle_lr(std::uint64_t step, std::uint64_t total_steps, double lr_max,
                    double warmup_frac = 0.3, double div_factor = 25.0,
                    double final_div_factor = 1e4);

struct TrainConfig {
  net::NetConfig net;
  geom::GridSpec grid;

  double image_mask_ratio = 0.5;
  double voxel_mask_ratio = 0.8;
  mask::VoxelMaskMode voxel_mask_mode = mask::VoxelMaskMode::kUniform;

  double delta_per = 0.8;
  int samples_per = 64;
  double t_near_per = 0.5;
  double delta_bev = 0.2;

  int color_rays = 32;  // per camera per step
  int depth_rays = 32;  // per camera per step
  int bev_ray_count = 64;

  loss::LossConfig loss = loss::LossConfig::defaults();

  OptimHyper optim;
  std::uint64_t steps = 2000;
  int batch = 4;
  double warmup_frac = 0.3;
  double div_factor = 25.0;
  double final_div_factor = 1e4;

  std::uint64_t seed = 1;
  std::uint64_t checkpoint_every = 500;
  std::uint64_t config_hash = 0;
};

struct Checkpoint {
  std::uint32_t version = 1;
  std::uint64_t config_hash = 0;
  net::ParamSet params;
  OptimState optim;
  std::string rng_state;
  std::uint64_t step = 0;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path, std::optional<std::uint64_t> expect_hash);

// In-memory training sample with precomputed targets.
struct Sample {
  data::PointCloud cloud;
  data::VoxelGrid voxels;
  std::vector<data::ImageFrame> images;
  std::vector<geom::CameraModel> cameras;
  std::vector<data::DepthMap> depth_per;  // one per camera
  data::DepthMap depth_bev;
  std::string scene_path;
};

std::vector<Sample> load_samples(const data::Manifest& manifest);

struct StepResult {
  loss::LossReport report;
  double lr = 0;
};

struct PretrainResult {
  Checkpoint checkpoint;
  std::vector<StepResult> log;
};

// The full pre-training loop: mask -> embed/align/fuse -> render -> loss ->
// AdamW, deterministic given (config, seed). Writes loss_log.jsonl plus
// periodic checkpoints under out_dir; resume continues bit-identically.
PretrainResult pretrain(const TrainConfig& config, const std::vector<Sample>& samples,
                        const std::string& out_dir,
                        const std::optional<Checkpoint>& resume = std::nullopt);

// Fused feature volume of one unmasked sample under the given parameters.
net::FeatureVolume compute_fused_volume(const TrainConfig& config, const Sample& sample,
                                        const net::ParamSet& params);

struct ProbeResult {
  double auc = 0;
  double accuracy = 0;
};

// Freezes the embedding parameters, fits a per-voxel logistic occupancy
// readout on the train scenes (200 AdamW steps) and scores held-out scenes.
ProbeResult linear_probe_eval(const TrainConfig& config, const net::ParamSet& params,
                              const std::vector<Sample>& train_samples,
                              const std::vector<synth::SceneSpec>& train_scenes,
                              const std::vector<Sample>& eval_samples,
                              const std::vector<synth::SceneSpec>& eval_scenes,
                              std::uint64_t seed);

}  // namespace nsmae::train
