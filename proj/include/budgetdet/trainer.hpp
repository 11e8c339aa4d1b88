#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "budgetdet/diffkit.hpp"
#include "budgetdet/policy.hpp"

namespace budgetdet {

enum class BaselineMode { random_policy, none, constant };

struct TrainConfig {
  int epochs = 100;
  int batch_size = 32;
  double discount = 0.9;
  BaselineMode baseline = BaselineMode::random_policy;
  double constant_baseline = 0.0;
  int baseline_rollouts = 64;
  std::uint64_t seed = 0;
  LossConfig loss;
  AdamConfig adam;
  double clip_norm = 5.0;
  std::vector<double> eval_thresholds = kDefaultIouThresholds;
  double select_threshold = 0.5;  // validation mAP threshold for model selection
  Exec exec = Exec::parallel;
  std::string log_path;         // JSON lines, appended per epoch
  std::string checkpoint_path;  // best-validation model
};

void validate(const TrainConfig& cfg);

/// Expected discounted return per step under uniformly random frame
/// selection with the current heads.
struct BaselineEstimate {
  std::vector<double> per_step;
  std::vector<double> std_error;
  long samples = 0;
};

BaselineEstimate estimate_baseline(const PolicyNet& net, const PolicyConfig& pcfg,
                                   const Dataset& data, const TrainConfig& tcfg, Rng& rng);

/// Objective minimized for one frozen trajectory:
///   -sum_t log pi_t * (R_t - b_t)
///   + (hybrid) sum over kept, matched steps of lambda_c*cls + lambda_l*loc.
/// Recorded observations, sampled actions, matches and returns are held
/// fixed; only the network is re-evaluated.
double surrogate_loss(const PolicyNet& net, const PolicyConfig& pcfg, const TrainConfig& tcfg,
                      const TrajectoryRecord& traj, const GroundTruthSet& gts,
                      std::span<const double> baseline);

/// Accumulates d surrogate_loss / d params into `tape`.
void trajectory_gradient(const PolicyNet& net, const PolicyConfig& pcfg, const TrainConfig& tcfg,
                         const TrajectoryRecord& traj, const GroundTruthSet& gts,
                         std::span<const double> baseline, GradTape& tape);

struct BatchStats {
  double mean_return = 0.0;  // R(H_1) averaged over the batch
  double mean_loss = 0.0;
  double mean_cls = 0.0;
  double mean_loc = 0.0;
  double mean_ret = 0.0;
  double grad_norm = 0.0;  // before clipping
  std::size_t videos = 0;
};

struct BatchGradient {
  GradTape tape;
  BatchStats stats;
  bool finite = true;
};

/// Monte-Carlo estimate over `videos`: one stochastic rollout each, with
/// video n drawing from a stream derived from (batch_seed, n). Per-video
/// tapes are summed in index order, so serial and parallel execution give
/// bit-identical results.
BatchGradient policy_gradient_batch(const PolicyNet& net, const PolicyConfig& pcfg,
                                    const TrainConfig& tcfg,
                                    std::span<const LabeledVideo* const> videos,
                                    const BaselineEstimate& baseline, std::uint64_t batch_seed,
                                    Exec exec);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_cls = 0.0;
  double train_loc = 0.0;
  double train_ret = 0.0;
  double mean_return = 0.0;
  double baseline_mean = 0.0;
  double grad_norm = 0.0;
  long skipped_batches = 0;
  std::vector<double> val_map;  // one per eval threshold, confidence ranking
  double wall_seconds = 0.0;

  /// Equality of every field except wall time.
  bool same_metrics(const EpochRecord& other) const;
};

std::string to_json_line(const EpochRecord& rec, std::span<const double> thresholds);

struct TrainResult {
  PolicyNet net;  // best-validation model
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_map = -1.0;
  bool diverged = false;
  std::string message;
};

TrainResult train(const Dataset& train_set, const Dataset& val_set, const PolicyConfig& pcfg,
                  const TrainConfig& tcfg);
/// Continues from `init` instead of a fresh initialization.
TrainResult train(const Dataset& train_set, const Dataset& val_set, const PolicyConfig& pcfg,
                  const TrainConfig& tcfg, PolicyNet init);

/// Validation mAP at each threshold with confidence ranking. Empty
/// ground truth everywhere yields zeros.
std::vector<double> validation_map(std::span<const std::vector<Detection>> dets,
                                   std::span<const GroundTruthSet> gts,
                                   std::span<const double> thresholds);

void save_policy(const std::string& path, const PolicyNet& net, const PolicyConfig& cfg);

struct LoadedPolicy {
  PolicyNet net;
  PolicyConfig cfg;
};

LoadedPolicy load_policy(const std::string& path);

}  // namespace budgetdet
