#include "budgetdet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace budgetdet {

double cls_error(std::span<const double> probs, std::span<const double> onehot) {
  if (probs.size() != onehot.size()) {
    throw std::invalid_argument("cls_error: dimension mismatch");
  }
  double e = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    if (onehot[k] != 0.0) e -= onehot[k] * std::log(std::max(probs[k], kProbFloor));
  }
  return e;
}

double cls_error(std::span<const double> probs, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= probs.size()) {
    throw std::invalid_argument("cls_error: label out of range");
  }
  return -std::log(std::max(probs[static_cast<std::size_t>(label)], kProbFloor));
}

std::vector<double> cls_error_grad(std::span<const double> probs, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= probs.size()) {
    throw std::invalid_argument("cls_error_grad: label out of range");
  }
  std::vector<double> g(probs.size(), 0.0);
  const double p = probs[static_cast<std::size_t>(label)];
  g[static_cast<std::size_t>(label)] = p > kProbFloor ? -1.0 / p : 0.0;
  return g;
}

namespace {

double length_scale(const Segment& g, LengthScaling scaling) {
  const double len = g.length();
  if (!(len > 0.0)) {
    throw std::invalid_argument("loc_error: zero-length ground truth segment");
  }
  return scaling == LengthScaling::inverse_length ? 1.0 / len : 1.0;
}

double sign(double x) { return static_cast<double>((x > 0.0) - (x < 0.0)); }

}  // namespace

double loc_error(const Segment& m, const Segment& g, LengthScaling scaling) {
  const double zeta = length_scale(g, scaling);
  return zeta * 0.5 * (std::abs(m.start - g.start) + std::abs(m.end - g.end));
}

std::array<double, 2> loc_error_grad(const Segment& m, const Segment& g, LengthScaling scaling) {
  const double zeta = length_scale(g, scaling);
  return {zeta * 0.5 * sign(m.start - g.start), zeta * 0.5 * sign(m.end - g.end)};
}

double retrieval_error(std::span<const Detection> dets, const GroundTruthSet& gts, double tau_iou) {
  if (dets.empty()) return 1.0;
  const std::vector<Detection> one(dets.begin(), dets.end());
  return 1.0 - mean_ap(std::span<const std::vector<Detection>>(&one, 1),
                       std::span<const GroundTruthSet>(&gts, 1), tau_iou,
                       RankingMode::paper_overlap);
}

LossBreakdown total_loss(std::span<const Detection> dets, const GroundTruthSet& gts,
                         const LossConfig& cfg) {
  LossBreakdown out;
  std::vector<Detection> kept;
  kept.reserve(dets.size());
  for (const auto& d : dets) {
    if (d.label() == 0) continue;
    kept.push_back(d);
    if (const auto j = assign(d, gts)) {
      const auto& g = gts.items[*j];
      out.cls += cls_error(d.class_probs, g.label);
      out.loc += loc_error(d.segment, g.segment, cfg.scaling);
    }
  }
  out.ret = gts.empty() ? 0.0 : retrieval_error(kept, gts, cfg.tau_iou);
  out.total = cfg.weights.lambda_c * out.cls + cfg.weights.lambda_l * out.loc +
              cfg.weights.lambda_r * out.ret;
  return out;
}

}  // namespace budgetdet
