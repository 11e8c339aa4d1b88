#pragma once

#include <array>
#include <span>
#include <vector>

#include "budgetdet/segmetrics.hpp"

namespace budgetdet {

struct LossWeights {
  double lambda_c = 1.0;
  double lambda_l = 1.0;
  double lambda_r = 0.5;
};

/// How the localization error is scaled by the ground-truth length.
enum class LengthScaling { inverse_length, none };

struct LossConfig {
  LossWeights weights;
  double tau_iou = 0.5;  // threshold for the retrieval term
  LengthScaling scaling = LengthScaling::inverse_length;
};

struct LossBreakdown {
  double cls = 0.0;
  double loc = 0.0;
  double ret = 0.0;
  double total = 0.0;
};

inline constexpr double kProbFloor = 1e-12;

/// Cross-entropy -sum_k onehot_k * log(max(probs_k, 1e-12)).
double cls_error(std::span<const double> probs, std::span<const double> onehot);
double cls_error(std::span<const double> probs, int label);
/// d cls_error / d probs for a one-hot target.
std::vector<double> cls_error_grad(std::span<const double> probs, int label);

/// zeta(g) * 0.5 * (|m_s - g_s| + |m_e - g_e|) with zeta(g) = 1 / (g_e - g_s)
/// under inverse_length scaling. Throws on a zero-length ground truth.
double loc_error(const Segment& m, const Segment& g,
                 LengthScaling scaling = LengthScaling::inverse_length);
/// d loc_error / d (m_s, m_e); sign(0) taken as 0.
std::array<double, 2> loc_error_grad(const Segment& m, const Segment& g,
                                     LengthScaling scaling = LengthScaling::inverse_length);

/// 1 - mAP under overlap ranking; 1 for an empty detection set.
double retrieval_error(std::span<const Detection> dets, const GroundTruthSet& gts, double tau_iou);

/// Composite loss over a detection set. Detections whose argmax is
/// background are ignored. Classification and localization terms are
/// summed over detections that are assigned to a ground truth. With no
/// ground truth the retrieval term is 0.
LossBreakdown total_loss(std::span<const Detection> dets, const GroundTruthSet& gts,
                         const LossConfig& cfg);

}  // namespace budgetdet
