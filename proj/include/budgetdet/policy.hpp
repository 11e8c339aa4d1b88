#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "budgetdet/diffkit.hpp"
#include "budgetdet/envsim.hpp"
#include "budgetdet/rng.hpp"

namespace budgetdet {

/// pure_score_function samples the next location, the class and the
/// segment, so a frozen trajectory's rewards do not depend on the weights.
/// hybrid samples only the next location and backpropagates the
/// classification and localization errors through the heads directly.
enum class TrainingMode { pure_score_function, hybrid };

/// How the next frame is chosen during a rollout.
enum class Selection {
  stochastic,     // Gaussian around the predicted mean, clamped to [0, 1]
  deterministic,  // the predicted mean
  uniform_random  // uniform on [0, 1], heads still deterministic
};

struct PolicyConfig {
  int steps = 6;
  int hidden = 64;
  int layers = 2;
  double next_variance = 0.18;
  double loc_variance = 0.05;
  TrainingMode mode = TrainingMode::hybrid;
  int num_classes = 3;  // foreground classes; background is extra
  int neighborhood = 15;
  int feature_dim = 16;
  bool use_diff = false;

  int num_outputs() const { return num_classes + 1; }
};

void validate(const PolicyConfig& cfg);
NetShape net_shape(const PolicyConfig& cfg);
PolicyNet make_policy(const PolicyConfig& cfg, std::uint64_t seed);

/// (start, end) = clamp(center -+ width / 2) to [0, 1].
Segment segment_from_center_width(double center, double width);

struct SampledAction {
  double next_xi = 0.5;
  int cls = -1;  // sampled class, pure mode only
  double center = 0.5;
  double width = 0.5;
};

struct StepRecord {
  int frame = 0;
  Observation obs;
  std::vector<double> input;
  LstmStepCache cache;
  std::vector<double> hidden;
  HeadOutput out;
  SampledAction action;
  Detection detection;
  bool appended = false;
  std::optional<std::size_t> matched_gt;
  double logdensity = 0.0;
  double reward = 0.0;
};

struct TrajectoryRecord {
  std::vector<StepRecord> steps;
  std::vector<Detection> detections;
  LossBreakdown final_loss;
  TrainingMode mode = TrainingMode::hybrid;
  Selection selection = Selection::deterministic;

  std::vector<double> rewards() const;
};

/// Runs the policy for cfg.steps steps on `video`. Rewards are computed
/// only when `gts` is non-null. Throws std::runtime_error on non-finite
/// activations.
TrajectoryRecord rollout(const PolicyNet& net, const PolicyConfig& cfg, const FeatureVideo& video,
                         const GroundTruthSet* gts, Rng& rng, Selection selection,
                         const LossConfig& loss);

/// log pi(nu_t | h_{t-1}, o_t) of the sampled action. Hybrid mode counts
/// the next-location term only.
double action_logdensity(const HeadOutput& out, const SampledAction& action,
                         const PolicyConfig& cfg);
/// Gradient of action_logdensity with respect to the head pre-activations.
HeadGrad action_logdensity_grad(const HeadOutput& out, const SampledAction& action,
                                const PolicyConfig& cfg);

/// Deterministic inference path: non-background detections only.
std::vector<Detection> detect(const PolicyNet& net, const PolicyConfig& cfg,
                              const FeatureVideo& video);

enum class Exec { serial, parallel };

std::vector<std::vector<Detection>> detect_all(const PolicyNet& net, const PolicyConfig& cfg,
                                               const Dataset& data, Exec exec = Exec::parallel);

/// Detections with uniformly random frame selection and the network's own
/// deterministic heads; video v uses a stream derived from (seed, v).
std::vector<std::vector<Detection>> detect_all_random(const PolicyNet& net,
                                                      const PolicyConfig& cfg, const Dataset& data,
                                                      std::uint64_t seed,
                                                      Exec exec = Exec::parallel);

std::vector<GroundTruthSet> ground_truths(const Dataset& data);

}  // namespace budgetdet
