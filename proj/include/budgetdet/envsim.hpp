#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "budgetdet/losses.hpp"
#include "budgetdet/segmetrics.hpp"

namespace budgetdet {

/// Per-frame feature rows (num_frames x dim, row-major) with an optional
/// frame-difference channel of the same shape whose first row is zero.
struct FeatureVideo {
  std::string id;
  int num_frames = 0;
  int dim = 0;
  std::vector<double> frames;
  std::vector<double> diff;

  bool has_diff() const { return !diff.empty(); }
  std::span<const double> frame(int i) const;
  std::span<const double> diff_frame(int i) const;
};

/// Fills `video.diff` with consecutive-frame differences.
void attach_diff_channel(FeatureVideo& video);

struct LabeledVideo {
  FeatureVideo video;
  GroundTruthSet gts;
};

using Dataset = std::vector<LabeledVideo>;

struct SyntheticSpec {
  int num_videos = 10;
  int frames_per_video = 100;
  int feature_dim = 16;
  int num_classes = 3;
  int min_segments = 1;
  int max_segments = 2;
  int min_segment_frames = 15;
  int max_segment_frames = 35;
  double noise_level = 0.8;
  std::uint64_t prototype_seed = 1;
  bool with_diff = false;
};

/// Throws std::invalid_argument when the spec is malformed or the planted
/// segments could not fit without overlap.
void validate(const SyntheticSpec& spec);

/// Row 0 is the background prototype, row c the prototype of class c.
std::vector<std::vector<double>> class_prototypes(const SyntheticSpec& spec);

/// Deterministic in (spec, seed). Video v depends only on (seed, v).
Dataset generate_dataset(const SyntheticSpec& spec, std::uint64_t seed);

// --- frame/time conversions -------------------------------------------------

/// Normalized location frame / (num_frames - 1) used for xi.
double frame_to_xi(int frame, int num_frames);
/// Inverse of frame_to_xi, rounded and clamped to a valid index.
int xi_to_frame(double xi, int num_frames);
/// Frame i covers [i/n, (i+1)/n] in normalized time.
Segment frames_to_segment(int first, int last, int num_frames);
/// Inclusive frame range whose extent overlaps `seg`; first > last if none.
std::pair<int, int> segment_frame_range(const Segment& seg, int num_frames);

// --- episodes ---------------------------------------------------------------

struct EpisodeState {
  int current_frame = 0;
  std::vector<bool> selected;
  std::vector<Detection> detections;  // non-background only
  int step = 0;
  double prev_loss = 0.0;
};

/// Episode at the video center with that frame selected. `prev_loss` is
/// the loss of the empty detection set, or 0 without ground truth.
EpisodeState start_episode(const FeatureVideo& video, const GroundTruthSet* gts,
                           const LossConfig& loss);

struct Observation {
  std::vector<double> psi;       // selection indicator over the neighborhood
  std::vector<double> phi;       // mean class distribution of nearby detections
  double xi = 0.0;               // normalized current location
  std::vector<double> features;  // neighborhood mean (plus diff mean)

  std::vector<double> flatten() const;
};

int observation_dim(int neighborhood, int num_outputs, int feature_dim, bool with_diff);

Observation observe(const FeatureVideo& video, const EpisodeState& state, int neighborhood,
                    int num_outputs);

struct StepOutcome {
  double reward = 0.0;
  bool appended = false;
};

/// Appends `prediction` unless its argmax is background, pays the decrease
/// in total loss as reward (0 without ground truth) and moves to the frame
/// at `next_xi`.
StepOutcome step_env(const FeatureVideo& video, const GroundTruthSet* gts, EpisodeState& state,
                     const Detection& prediction, double next_xi, const LossConfig& loss);

/// sum_{k>=0} tau^k * rewards[k].
double discounted_return(std::span<const double> rewards, double tau);
/// discounted_return of every suffix.
std::vector<double> returns_to_go(std::span<const double> rewards, double tau);

}  // namespace budgetdet
