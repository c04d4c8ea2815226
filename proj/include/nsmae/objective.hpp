#pragma once

#include <string>
#include <vector>

#include "nsmae/dataio.hpp"
#include "nsmae/renderer.hpp"
#include "nsmae/tape.hpp"

namespace nsmae::loss {

struct TargetConfig {
  std::string id;      // "C", "D_PER", "D_BEV", ...
  double p = 2.0;      // exponent, 1 or 2
  double lambda = 1.0; // coefficient
};

struct LossConfig {
  std::vector<TargetConfig> targets;

  static LossConfig defaults();  // (C, p=2, 1e4), (D_PER, p=1, 1e-2), (D_BEV, p=1, 1e-2)
  const TargetConfig& at(const std::string& id) const;
};

struct TargetReport {
  std::string id;
  double raw = 0;
  double weighted = 0;
  std::size_t ray_count = 0;
};

struct LossReport {
  std::vector<TargetReport> targets;
  double total = 0;
};

// (1/|S_r|) sum_r ||C_hat(r) - C(r)||_2^2 over the rendered provenance pixels.
double color_loss(const render::RenderedMap& rendered, const data::ImageFrame& target);

// (1/|S_r|) sum over valid rays of |A_hat - A|^p. The valid mask selects
// rays; rendered rows and mask are index-aligned.
double modality_loss(const std::vector<double>& rendered, const std::vector<double>& target,
                     const std::vector<std::uint8_t>& valid, double p);

LossReport total_loss(const std::vector<std::pair<std::string, double>>& raw_losses,
                      const LossConfig& config,
                      const std::vector<std::size_t>& ray_counts = {});

// --- tape builders ----------------------------------------------------------

// mean over rows of sum_c |pred - target|^p; target is a constant.
int lp_loss_tape(ndgrad::Tape& tape, int pred_node, const Array& target, double p);

}  // namespace nsmae::loss
