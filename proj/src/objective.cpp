#include "nsmae/objective.hpp"

#include <cmath>
#include <stdexcept>

namespace nsmae::loss {

LossConfig LossConfig::defaults() {
  LossConfig c;
  c.targets = {{"C", 2.0, 1e4}, {"D_PER", 1.0, 1e-2}, {"D_BEV", 1.0, 1e-2}};
  return c;
}

const TargetConfig& LossConfig::at(const std::string& id) const {
  for (const TargetConfig& t : targets)
    if (t.id == id) return t;
  throw std::runtime_error("loss: no config entry for target " + id);
}

double color_loss(const render::RenderedMap& rendered, const data::ImageFrame& target) {
  if (rendered.rows.empty()) throw std::runtime_error("color_loss: empty ray set");
  double acc = 0.0;
  for (std::size_t i = 0; i < rendered.rows.size(); ++i) {
    const auto& prov = rendered.provenance[i];
    if (prov.a < 0 || prov.a >= target.width || prov.b < 0 || prov.b >= target.height)
      throw std::runtime_error("color_loss: provenance pixel outside target");
    for (int c = 0; c < 3; ++c) {
      double d = rendered.rows[i].value[static_cast<std::size_t>(c)] - target.at(prov.b, prov.a, c);
      acc += d * d;
    }
  }
  return acc / static_cast<double>(rendered.rows.size());
}

double modality_loss(const std::vector<double>& rendered, const std::vector<double>& target,
                     const std::vector<std::uint8_t>& valid, double p) {
  if (p != 1.0 && p != 2.0) throw std::runtime_error("modality_loss: p must be 1 or 2");
  if (rendered.size() != target.size() || rendered.size() != valid.size())
    throw std::runtime_error("modality_loss: size mismatch");
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < rendered.size(); ++i) {
    if (!valid[i]) continue;
    double d = std::abs(rendered[i] - target[i]);
    acc += (p == 1.0) ? d : d * d;
    ++n;
  }
  if (n == 0) throw std::runtime_error("modality_loss: zero valid rays");
  return acc / static_cast<double>(n);
}

LossReport total_loss(const std::vector<std::pair<std::string, double>>& raw_losses,
                      const LossConfig& config, const std::vector<std::size_t>& ray_counts) {
  LossReport report;
  for (std::size_t k = 0; k < config.targets.size(); ++k) {
    const TargetConfig& t = config.targets[k];
    const std::pair<std::string, double>* found = nullptr;
    for (const auto& rl : raw_losses)
      if (rl.first == t.id) found = &rl;
    if (!found) throw std::runtime_error("total_loss: missing target " + t.id);
    TargetReport tr;
    tr.id = t.id;
    tr.raw = found->second;
    tr.weighted = t.lambda * found->second;
    if (k < ray_counts.size()) tr.ray_count = ray_counts[k];
    report.total += tr.weighted;
    report.targets.push_back(tr);
  }
  return report;
}

int lp_loss_tape(ndgrad::Tape& tape, int pred_node, const Array& target, double p) {
  const Shape& s = tape.shape_of(pred_node);
  if (target.shape != s)
    throw std::runtime_error("lp_loss_tape: target shape " + shape_str(target.shape) +
                             " != prediction " + shape_str(s));
  std::size_t rows = s.empty() ? 1 : shape_numel(s) / s.back();
  if (s.size() < 2) rows = shape_numel(s);  // vector prediction: one scalar per ray
  if (rows == 0) throw std::runtime_error("lp_loss_tape: empty ray set");
  int diff = tape.sub(pred_node, tape.constant(target));
  return tape.scale(tape.sum(tape.abs_pow(diff, p)), 1.0 / static_cast<double>(rows));
}

}  // namespace nsmae::loss
