#include "budgetdet/segmetrics.hpp"

#include <algorithm>
#include <stdexcept>

namespace budgetdet {

bool is_valid(const Segment& s) {
  return s.start >= 0.0 && s.start <= s.end && s.end <= 1.0;
}

double iou(const Segment& a, const Segment& b) {
  const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = a.length() + b.length() - inter;
  if (uni <= 0.0) {
    return a == b ? 1.0 : 0.0;
  }
  return inter / uni;
}

int Detection::label() const {
  if (class_probs.empty()) {
    return 0;
  }
  return static_cast<int>(std::max_element(class_probs.begin(), class_probs.end()) -
                          class_probs.begin());
}

double Detection::confidence() const {
  return class_probs.empty() ? 0.0 : class_probs[static_cast<std::size_t>(label())];
}

int GroundTruthSet::max_label() const {
  int k = 0;
  for (const auto& g : items) k = std::max(k, g.label);
  return k;
}

std::size_t GroundTruthSet::count_label(int label) const {
  return static_cast<std::size_t>(
      std::count_if(items.begin(), items.end(), [&](const auto& g) { return g.label == label; }));
}

std::optional<std::size_t> assign(const Segment& seg, const GroundTruthSet& gts) {
  std::optional<std::size_t> best;
  double best_iou = 0.0;
  for (std::size_t j = 0; j < gts.items.size(); ++j) {
    const double o = iou(seg, gts.items[j].segment);
    if (o > best_iou) {
      best_iou = o;
      best = j;
    }
  }
  return best;
}

std::optional<std::size_t> assign(const Detection& det, const GroundTruthSet& gts) {
  return assign(det.segment, gts);
}

namespace {

double best_overlap(const Segment& seg, const GroundTruthSet& gts) {
  double best = 0.0;
  for (const auto& g : gts.items) best = std::max(best, iou(seg, g.segment));
  return best;
}

std::size_t count_class(std::span<const GroundTruthSet> gts_per_video, int cls) {
  std::size_t n = 0;
  for (const auto& gts : gts_per_video) n += gts.count_label(cls);
  return n;
}

}  // namespace

std::vector<RankedDetection> rank_detections(std::span<const std::vector<Detection>> dets_per_video,
                                             std::span<const GroundTruthSet> gts_per_video,
                                             int cls, RankingMode mode) {
  struct Keyed {
    RankedDetection entry;
    double key;
  };
  std::vector<Keyed> keyed;
  for (std::size_t v = 0; v < dets_per_video.size(); ++v) {
    for (const auto& d : dets_per_video[v]) {
      if (d.label() != cls) continue;
      const double key = mode == RankingMode::confidence
                             ? d.confidence()
                             : best_overlap(d.segment, gts_per_video[v]);
      keyed.push_back({{v, &d}, key});
    }
  }
  std::stable_sort(keyed.begin(), keyed.end(),
                   [](const Keyed& a, const Keyed& b) { return a.key > b.key; });
  std::vector<RankedDetection> out;
  out.reserve(keyed.size());
  for (const auto& k : keyed) out.push_back(k.entry);
  return out;
}

ApResult average_precision(std::span<const RankedDetection> ranked,
                           std::span<const GroundTruthSet> gts_per_video, int cls, double tau_iou) {
  const std::size_t positives = count_class(gts_per_video, cls);
  if (positives == 0) {
    return {0.0, true};
  }
  std::vector<std::vector<bool>> claimed(gts_per_video.size());
  for (std::size_t v = 0; v < gts_per_video.size(); ++v) {
    claimed[v].assign(gts_per_video[v].size(), false);
  }

  double ap = 0.0;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const auto& gts = gts_per_video[ranked[i].video];
    const auto g = assign(*ranked[i].detection, gts);
    if (!g) continue;
    const auto& gt = gts.items[*g];
    if (gt.label != cls || claimed[ranked[i].video][*g] ||
        iou(ranked[i].detection->segment, gt.segment) < tau_iou) {
      continue;
    }
    claimed[ranked[i].video][*g] = true;
    ++tp;
    // recall moves by 1/positives exactly at true positives
    ap += (static_cast<double>(tp) / static_cast<double>(i + 1)) / static_cast<double>(positives);
  }
  return {ap, false};
}

ApResult average_precision_paper(std::span<const Detection> ranked, const GroundTruthSet& gts,
                                 int cls, double tau_iou) {
  std::vector<RankedDetection> entries;
  for (const auto& d : ranked) {
    if (d.label() == cls) entries.push_back({0, &d});
  }
  return average_precision(entries, std::span<const GroundTruthSet>(&gts, 1), cls, tau_iou);
}

std::vector<ApResult> per_class_ap(std::span<const std::vector<Detection>> dets_per_video,
                                   std::span<const GroundTruthSet> gts_per_video, double tau_iou,
                                   RankingMode mode, int num_classes) {
  if (dets_per_video.size() != gts_per_video.size()) {
    throw std::invalid_argument("per_class_ap: detection and ground-truth video counts differ");
  }
  std::vector<ApResult> out(static_cast<std::size_t>(num_classes) + 1, ApResult{0.0, true});
  for (int c = 1; c <= num_classes; ++c) {
    const auto ranked = rank_detections(dets_per_video, gts_per_video, c, mode);
    out[static_cast<std::size_t>(c)] = average_precision(ranked, gts_per_video, c, tau_iou);
  }
  return out;
}

double mean_ap(std::span<const std::vector<Detection>> dets_per_video,
               std::span<const GroundTruthSet> gts_per_video, double tau_iou, RankingMode mode) {
  int k = 0;
  for (const auto& gts : gts_per_video) k = std::max(k, gts.max_label());
  if (k == 0) {
    throw std::invalid_argument("mean_ap: no ground truth segments");
  }
  const auto aps = per_class_ap(dets_per_video, gts_per_video, tau_iou, mode, k);
  double sum = 0.0;
  int present = 0;
  for (int c = 1; c <= k; ++c) {
    if (aps[static_cast<std::size_t>(c)].class_absent) continue;
    sum += aps[static_cast<std::size_t>(c)].ap;
    ++present;
  }
  return sum / present;
}

}  // namespace budgetdet
