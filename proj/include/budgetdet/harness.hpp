#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "budgetdet/baselines.hpp"
#include "budgetdet/policy.hpp"
#include "budgetdet/trainer.hpp"

namespace budgetdet {

// --- time budget ----------------------------------------------------------------

/// Per-component costs in milliseconds.
struct BudgetCostModel {
  double feature_ms = 3.0;    // per-frame feature extraction
  double diff_ms = 0.1;       // per-frame difference
  double recurrent_ms = 5.4;  // one recurrent step
  double regression_ms = 5.5;
  int neighborhood = 15;
  int kappa = 10;
};

/// Neighborhood features and differences plus one recurrent step per policy
/// step, and optionally the kappa-frame boundary regression.
double estimate_budget(const BudgetCostModel& model, int steps, bool use_regression);

/// "347.9 ms (~348 ms)"
std::string format_budget(double ms);

// --- evaluation -----------------------------------------------------------------

struct EvalReport {
  std::vector<double> thresholds;
  std::vector<double> map;  // confidence-ranked mAP per threshold
  /// per_class_ap[i][c - 1]: AP of class c at thresholds[i]; empty when
  /// the class has no ground truth.
  std::vector<std::vector<std::optional<double>>> per_class_ap;
  long videos = 0;
  long detections = 0;
  int steps = 0;
  double wall_ms_per_video = 0.0;

  bool operator==(const EvalReport&) const = default;
  bool same_metrics(const EvalReport& other) const;
};

EvalReport evaluate_detections(std::span<const std::vector<Detection>> dets,
                               std::span<const GroundTruthSet> gts,
                               std::span<const double> thresholds, int num_classes);

EvalReport evaluate(const PolicyNet& net, const PolicyConfig& cfg, const Dataset& data,
                    std::span<const double> thresholds, Exec exec = Exec::parallel);

/// Structured text (JSON, fixed key order).
std::string to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);

std::string detections_to_json(const Dataset& data,
                               std::span<const std::vector<Detection>> dets);

// --- sweeps ---------------------------------------------------------------------

struct SweepRow {
  int steps = 0;
  double map50 = 0.0;
  double wall_ms_per_video = 0.0;  // measured, serial inference
  double budget_ms = 0.0;          // cost model, regression off
};

/// Mean wall time of serial deterministic inference per video, best of
/// `repeats` passes.
double measure_inference_ms(const PolicyNet& net, const PolicyConfig& cfg, const Dataset& data,
                            int repeats = 3);

/// One row per entry of `steps_values` (ascending). With `train_each` a
/// policy is trained per step count; otherwise `fixed` is evaluated with
/// the step count overridden.
std::vector<SweepRow> steps_sweep(const Dataset& train_set, const Dataset& val_set,
                                  const PolicyConfig& pcfg, const TrainConfig& tcfg,
                                  std::span<const int> steps_values, bool train_each,
                                  const PolicyNet* fixed = nullptr,
                                  const BudgetCostModel& cost = {});

std::string sweep_table(std::span<const SweepRow> rows);

struct KappaRow {
  int kappa = 0;
  double map50_unrefined = 0.0;
  double map50_refined = 0.0;
  std::size_t train_pairs = 0;
};

/// Fits one boundary regressor per kappa on the policy's training-set
/// detections and reports validation mAP@0.5 before and after refinement.
std::vector<KappaRow> kappa_sweep(const PolicyNet& net, const PolicyConfig& pcfg,
                                  const Dataset& train_set, const Dataset& val_set,
                                  std::span<const int> kappas, double ridge = 1e-6);

std::string kappa_table(std::span<const KappaRow> rows);

/// Human-readable per-step listing of a rollout.
std::string format_trace(const TrajectoryRecord& traj, const FeatureVideo& video,
                         const GroundTruthSet* gts);

}  // namespace budgetdet
