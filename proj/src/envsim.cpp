#include "budgetdet/envsim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "budgetdet/rng.hpp"

namespace budgetdet {

std::span<const double> FeatureVideo::frame(int i) const {
  const auto d = static_cast<std::size_t>(dim);
  return {frames.data() + static_cast<std::size_t>(i) * d, d};
}

std::span<const double> FeatureVideo::diff_frame(int i) const {
  const auto d = static_cast<std::size_t>(dim);
  return {diff.data() + static_cast<std::size_t>(i) * d, d};
}

void attach_diff_channel(FeatureVideo& video) {
  const auto d = static_cast<std::size_t>(video.dim);
  video.diff.assign(video.frames.size(), 0.0);
  for (std::size_t i = 1; i < static_cast<std::size_t>(video.num_frames); ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      video.diff[i * d + k] = video.frames[i * d + k] - video.frames[(i - 1) * d + k];
    }
  }
}

void validate(const SyntheticSpec& s) {
  if (s.num_videos < 0 || s.frames_per_video < 2 || s.feature_dim < 1 || s.num_classes < 1) {
    throw std::invalid_argument("synthetic spec: invalid sizes");
  }
  if (s.min_segments < 0 || s.max_segments < s.min_segments) {
    throw std::invalid_argument("synthetic spec: invalid segment count range");
  }
  if (s.min_segment_frames < 1 || s.max_segment_frames < s.min_segment_frames) {
    throw std::invalid_argument("synthetic spec: invalid segment length range");
  }
  if (s.noise_level < 0.0) {
    throw std::invalid_argument("synthetic spec: negative noise level");
  }
  if (static_cast<long>(s.max_segments) * s.max_segment_frames > s.frames_per_video) {
    throw std::invalid_argument("synthetic spec: segments cannot fit without overlap");
  }
}

std::vector<std::vector<double>> class_prototypes(const SyntheticSpec& spec) {
  Rng rng(derive_seed(spec.prototype_seed, {tag(Stream::data), 0xfeedULL}));
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<std::vector<double>> protos(static_cast<std::size_t>(spec.num_classes) + 1);
  for (auto& p : protos) {
    p.resize(static_cast<std::size_t>(spec.feature_dim));
    for (auto& x : p) x = n01(rng);
  }
  return protos;
}

Dataset generate_dataset(const SyntheticSpec& spec, std::uint64_t seed) {
  validate(spec);
  const auto protos = class_prototypes(spec);
  const int n = spec.frames_per_video;
  const auto d = static_cast<std::size_t>(spec.feature_dim);

  Dataset out;
  out.reserve(static_cast<std::size_t>(spec.num_videos));
  for (int v = 0; v < spec.num_videos; ++v) {
    Rng rng(derive_seed(seed, {tag(Stream::data), static_cast<std::uint64_t>(v)}));
    std::uniform_int_distribution<int> count_dist(spec.min_segments, spec.max_segments);
    std::uniform_int_distribution<int> len_dist(spec.min_segment_frames, spec.max_segment_frames);
    std::uniform_int_distribution<int> class_dist(1, spec.num_classes);
    std::normal_distribution<double> noise(0.0, 1.0);

    const int count = count_dist(rng);
    std::vector<int> lengths(static_cast<std::size_t>(count));
    int total = 0;
    for (auto& len : lengths) {
      len = len_dist(rng);
      total += len;
    }
    const int slack = n - total;
    std::uniform_int_distribution<int> cut_dist(0, slack);
    std::vector<int> cuts(static_cast<std::size_t>(count));
    for (auto& c : cuts) c = cut_dist(rng);
    std::sort(cuts.begin(), cuts.end());

    LabeledVideo lv;
    char id[32];
    std::snprintf(id, sizeof(id), "v%05d", v);
    lv.video.id = id;
    lv.video.num_frames = n;
    lv.video.dim = spec.feature_dim;
    std::vector<int> frame_label(static_cast<std::size_t>(n), 0);
    int cursor = 0;
    int prev_cut = 0;
    for (int j = 0; j < count; ++j) {
      cursor += cuts[static_cast<std::size_t>(j)] - prev_cut;
      prev_cut = cuts[static_cast<std::size_t>(j)];
      const int first = cursor;
      const int last = cursor + lengths[static_cast<std::size_t>(j)] - 1;
      const int label = class_dist(rng);
      for (int f = first; f <= last; ++f) frame_label[static_cast<std::size_t>(f)] = label;
      lv.gts.items.push_back({frames_to_segment(first, last, n), label});
      cursor = last + 1;
    }

    lv.video.frames.resize(static_cast<std::size_t>(n) * d);
    for (std::size_t f = 0; f < static_cast<std::size_t>(n); ++f) {
      const auto& proto = protos[static_cast<std::size_t>(frame_label[f])];
      for (std::size_t k = 0; k < d; ++k) {
        const double eps = noise(rng);
        lv.video.frames[f * d + k] = proto[k] + spec.noise_level * eps;
      }
    }
    if (spec.with_diff) attach_diff_channel(lv.video);
    out.push_back(std::move(lv));
  }
  return out;
}

double frame_to_xi(int frame, int num_frames) {
  return num_frames > 1 ? static_cast<double>(frame) / static_cast<double>(num_frames - 1) : 0.0;
}

int xi_to_frame(double xi, int num_frames) {
  const double clamped = std::clamp(xi, 0.0, 1.0);
  const int f = static_cast<int>(std::lround(clamped * static_cast<double>(num_frames - 1)));
  return std::clamp(f, 0, num_frames - 1);
}

Segment frames_to_segment(int first, int last, int num_frames) {
  const double n = static_cast<double>(num_frames);
  return {static_cast<double>(first) / n, static_cast<double>(last + 1) / n};
}

std::pair<int, int> segment_frame_range(const Segment& seg, int num_frames) {
  const double n = static_cast<double>(num_frames);
  // frames strictly overlapping the open interval; a zero-length segment
  // touches the frame that contains it
  int first = static_cast<int>(std::floor(seg.start * n));
  int last = static_cast<int>(std::ceil(seg.end * n)) - 1;
  if (seg.length() <= 0.0) last = first;
  first = std::clamp(first, 0, num_frames - 1);
  last = std::clamp(last, 0, num_frames - 1);
  return {first, last};
}

EpisodeState start_episode(const FeatureVideo& video, const GroundTruthSet* gts,
                           const LossConfig& loss) {
  EpisodeState s;
  s.selected.assign(static_cast<std::size_t>(video.num_frames), false);
  s.current_frame = xi_to_frame(0.5, video.num_frames);
  s.selected[static_cast<std::size_t>(s.current_frame)] = true;
  s.prev_loss = gts ? total_loss({}, *gts, loss).total : 0.0;
  return s;
}

std::vector<double> Observation::flatten() const {
  std::vector<double> x;
  x.reserve(psi.size() + phi.size() + 1 + features.size());
  x.insert(x.end(), psi.begin(), psi.end());
  x.insert(x.end(), phi.begin(), phi.end());
  x.push_back(xi);
  x.insert(x.end(), features.begin(), features.end());
  return x;
}

int observation_dim(int neighborhood, int num_outputs, int feature_dim, bool with_diff) {
  return neighborhood + num_outputs + 1 + feature_dim * (with_diff ? 2 : 1);
}

Observation observe(const FeatureVideo& video, const EpisodeState& state, int neighborhood,
                    int num_outputs) {
  const int half = neighborhood / 2;
  const int i = state.current_frame;
  const int lo = std::max(0, i - half);
  const int hi = std::min(video.num_frames - 1, i - half + neighborhood - 1);

  Observation o;
  o.psi.assign(static_cast<std::size_t>(neighborhood), 0.0);
  for (int k = 0; k < neighborhood; ++k) {
    const int f = i - half + k;
    if (f >= 0 && f < video.num_frames && state.selected[static_cast<std::size_t>(f)]) {
      o.psi[static_cast<std::size_t>(k)] = 1.0;
    }
  }

  o.phi.assign(static_cast<std::size_t>(num_outputs), 0.0);
  int overlapping = 0;
  for (const auto& d : state.detections) {
    const auto [first, last] = segment_frame_range(d.segment, video.num_frames);
    if (last < lo || first > hi) continue;
    for (std::size_t k = 0; k < o.phi.size(); ++k) o.phi[k] += d.class_probs[k];
    ++overlapping;
  }
  if (overlapping > 0) {
    for (auto& p : o.phi) p /= overlapping;
  }

  o.xi = frame_to_xi(i, video.num_frames);

  const auto dim = static_cast<std::size_t>(video.dim);
  o.features.assign(dim * (video.has_diff() ? 2 : 1), 0.0);
  for (int f = lo; f <= hi; ++f) {
    const auto row = video.frame(f);
    for (std::size_t k = 0; k < dim; ++k) o.features[k] += row[k];
    if (video.has_diff()) {
      const auto drow = video.diff_frame(f);
      for (std::size_t k = 0; k < dim; ++k) o.features[dim + k] += drow[k];
    }
  }
  const double count = static_cast<double>(hi - lo + 1);
  for (auto& x : o.features) x /= count;
  return o;
}

StepOutcome step_env(const FeatureVideo& video, const GroundTruthSet* gts, EpisodeState& state,
                     const Detection& prediction, double next_xi, const LossConfig& loss) {
  StepOutcome out;
  if (prediction.label() != 0) {
    state.detections.push_back(prediction);
    out.appended = true;
    if (gts) {
      const double now = total_loss(state.detections, *gts, loss).total;
      out.reward = state.prev_loss - now;
      state.prev_loss = now;
    }
  }
  state.current_frame = xi_to_frame(next_xi, video.num_frames);
  state.selected[static_cast<std::size_t>(state.current_frame)] = true;
  ++state.step;
  return out;
}

double discounted_return(std::span<const double> rewards, double tau) {
  double r = 0.0;
  for (std::size_t k = rewards.size(); k-- > 0;) r = rewards[k] + tau * r;
  return r;
}

std::vector<double> returns_to_go(std::span<const double> rewards, double tau) {
  std::vector<double> out(rewards.size());
  double r = 0.0;
  for (std::size_t k = rewards.size(); k-- > 0;) {
    r = rewards[k] + tau * r;
    out[k] = r;
  }
  return out;
}

}  // namespace budgetdet
