#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace budgetdet {

/// Temporal extent in normalized video time, 0 <= start <= end <= 1.
struct Segment {
  double start = 0.0;
  double end = 0.0;

  double length() const { return end - start; }
  bool operator==(const Segment&) const = default;
};

bool is_valid(const Segment& s);

/// Temporal intersection over union. Two identical zero-length segments
/// have IoU 1; any other pair with an empty union has IoU 0.
double iou(const Segment& a, const Segment& b);

/// A predicted segment with a distribution over K+1 classes (index 0 is
/// background) and the policy step that produced it.
struct Detection {
  Segment segment;
  std::vector<double> class_probs;
  int step_index = 1;

  /// Argmax class, lowest index on ties.
  int label() const;
  double confidence() const;
};

struct GroundTruthSegment {
  Segment segment;
  int label = 1;  // 1..K, never background
};

struct GroundTruthSet {
  std::vector<GroundTruthSegment> items;

  bool empty() const { return items.empty(); }
  std::size_t size() const { return items.size(); }
  int max_label() const;
  std::size_t count_label(int label) const;
};

/// Index of the ground truth with the largest IoU against `seg`, provided
/// that IoU is positive. Ties go to the lowest index.
std::optional<std::size_t> assign(const Segment& seg, const GroundTruthSet& gts);
std::optional<std::size_t> assign(const Detection& det, const GroundTruthSet& gts);

/// paper_overlap ranks detections by their best IoU with any ground truth
/// (usable as a training signal); confidence ranks by the probability of
/// the predicted class (benchmark evaluation).
enum class RankingMode { paper_overlap, confidence };

struct ApResult {
  double ap = 0.0;
  bool class_absent = false;  // no ground truth of this class anywhere
};

/// A detection taken from video `video` for pooled, cross-video ranking.
struct RankedDetection {
  std::size_t video = 0;
  const Detection* detection = nullptr;
};

/// Detections whose argmax label is `cls`, pooled over videos and ordered
/// by `mode`. The sort is stable so equal keys keep (video, input) order.
std::vector<RankedDetection> rank_detections(std::span<const std::vector<Detection>> dets_per_video,
                                             std::span<const GroundTruthSet> gts_per_video,
                                             int cls, RankingMode mode);

/// Non-interpolated AP = sum_i Prec(i) * dRecall(i) over an already ranked
/// list. A detection is a true positive when the ground truth it is
/// assigned to has label `cls`, IoU >= tau_iou and has not been claimed by
/// a higher-ranked detection. Recall counts claimed ground truths.
ApResult average_precision(std::span<const RankedDetection> ranked,
                           std::span<const GroundTruthSet> gts_per_video, int cls, double tau_iou);

/// Single-video AP for detections already ranked by the caller; only
/// detections labeled `cls` take part, in the given order.
ApResult average_precision_paper(std::span<const Detection> ranked, const GroundTruthSet& gts,
                                 int cls, double tau_iou);

/// Per-class AP for classes 1..num_classes. Entry 0 is unused.
std::vector<ApResult> per_class_ap(std::span<const std::vector<Detection>> dets_per_video,
                                   std::span<const GroundTruthSet> gts_per_video, double tau_iou,
                                   RankingMode mode, int num_classes);

/// Unweighted mean of AP over classes present in the ground truth.
/// Throws std::invalid_argument when there is no ground truth at all.
double mean_ap(std::span<const std::vector<Detection>> dets_per_video,
               std::span<const GroundTruthSet> gts_per_video, double tau_iou, RankingMode mode);

inline const std::vector<double> kDefaultIouThresholds = {0.3, 0.4, 0.5, 0.6, 0.7};

}  // namespace budgetdet
