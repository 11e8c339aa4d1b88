#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "budgetdet/diffkit.hpp"
#include "budgetdet/envsim.hpp"

namespace budgetdet {

// --- per-frame classification + NMS -----------------------------------------

enum class ClassifierVariant {
  dense,  // single dense + softmax layer per frame
  lstm    // stacked LSTM over the frame sequence, softmax per step
};

struct FrameClassifierConfig {
  ClassifierVariant variant = ClassifierVariant::dense;
  int hidden = 32;
  int layers = 2;
  int epochs = 20;
  int batch_frames = 256;  // dense variant
  int batch_videos = 8;    // lstm variant
  AdamConfig adam{1e-2, 0.9, 0.999, 1e-8};
  std::uint64_t seed = 0;
  bool use_diff = false;  // concatenate the frame-difference channel
};

struct FrameClassifier {
  ClassifierVariant variant = ClassifierVariant::dense;
  int input_dim = 0;
  int num_outputs = 0;
  bool use_diff = false;
  ParamSet params;
  LstmSpec lstm;
  DenseSpec out;
};

/// Frame i is labeled with the class of the ground truth containing its
/// normalized midpoint (i + 0.5) / n, background otherwise.
std::vector<int> frame_labels(const LabeledVideo& lv);

/// Frame features, with the difference channel appended when `use_diff`.
/// The difference is computed on the fly if the video has none attached.
std::vector<double> frame_input(const FeatureVideo& video, int frame, bool use_diff);

FrameClassifier train_frame_classifier(const Dataset& data, int num_classes,
                                       const FrameClassifierConfig& cfg);

/// Per-frame class distributions (num_frames rows of K+1).
std::vector<std::vector<double>> classify_frames(const FrameClassifier& clf,
                                                 const FeatureVideo& video);

double frame_accuracy(const FrameClassifier& clf, const Dataset& data);

struct NmsConfig {
  double prob_threshold = 0.5;
  double iou_threshold = 0.4;
};

/// Greedy 1-D NMS by confidence; suppresses candidates whose IoU with an
/// already kept detection of the same class is >= iou_threshold.
std::vector<Detection> nms(std::vector<Detection> candidates, double iou_threshold);

/// Thresholds each foreground class per frame, merges consecutive frames
/// into candidates scored by their mean distribution, then applies nms.
std::vector<Detection> nms_aggregate(const std::vector<std::vector<double>>& frame_probs,
                                     const NmsConfig& cfg);

// --- boundary refinement ------------------------------------------------------

/// Linear map [start, end, kappa sampled frame features, their frame
/// differences] -> (d_start, d_end), plus an intercept.
struct BoundaryRegressor {
  int kappa = 10;
  int feature_dim = 0;
  std::vector<double> weights;  // 2 x input_dim, row-major
  std::array<double, 2> bias{};

  int input_dim() const { return 2 + kappa * 2 * feature_dim; }
};

std::vector<double> regressor_features(const FeatureVideo& video, const Segment& seg, int kappa);

struct RegressionPairs {
  std::vector<std::vector<double>> inputs;
  std::vector<std::array<double, 2>> targets;  // gt boundary minus detected boundary
};

/// One pair per detection assigned to a ground truth (IoU > 0).
RegressionPairs collect_regression_pairs(const Dataset& data,
                                         std::span<const std::vector<Detection>> dets, int kappa);

/// Closed-form ridge least squares via the normal equations.
BoundaryRegressor fit_boundary_regressor(const RegressionPairs& pairs, int kappa, int feature_dim,
                                         double ridge = 1e-6);

std::array<double, 2> predict_offsets(const BoundaryRegressor& reg, std::span<const double> x);

/// Shifts boundaries by the predicted offsets, clamps to [0, 1] and
/// collapses to the midpoint if start passes end.
std::vector<Detection> refine_boundaries(const BoundaryRegressor& reg, const FeatureVideo& video,
                                         std::vector<Detection> dets);

}  // namespace budgetdet
