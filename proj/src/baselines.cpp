#include "budgetdet/baselines.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "budgetdet/rng.hpp"

namespace budgetdet {

std::vector<int> frame_labels(const LabeledVideo& lv) {
  const int n = lv.video.num_frames;
  std::vector<int> labels(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i) {
    const double mid = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    for (const auto& g : lv.gts.items) {
      if (mid >= g.segment.start && mid <= g.segment.end) {
        labels[static_cast<std::size_t>(i)] = g.label;
        break;
      }
    }
  }
  return labels;
}

std::vector<double> frame_input(const FeatureVideo& video, int frame, bool use_diff) {
  const auto row = video.frame(frame);
  std::vector<double> x(row.begin(), row.end());
  if (!use_diff) return x;
  if (video.has_diff()) {
    const auto d = video.diff_frame(frame);
    x.insert(x.end(), d.begin(), d.end());
  } else {
    for (std::size_t k = 0; k < row.size(); ++k) {
      x.push_back(frame > 0 ? row[k] - video.frame(frame - 1)[k] : 0.0);
    }
  }
  return x;
}

namespace {

FrameClassifier make_classifier(int feature_dim, int num_classes, const FrameClassifierConfig& cfg) {
  FrameClassifier clf;
  clf.variant = cfg.variant;
  clf.use_diff = cfg.use_diff;
  clf.input_dim = feature_dim * (cfg.use_diff ? 2 : 1);
  clf.num_outputs = num_classes + 1;
  Rng rng(derive_seed(cfg.seed, {tag(Stream::classifier), tag(Stream::init)}));
  if (cfg.variant == ClassifierVariant::dense) {
    clf.out = add_dense(clf.params, "frame.out", clf.input_dim, clf.num_outputs);
  } else {
    clf.lstm = add_lstm(clf.params, "frame.lstm", clf.input_dim, cfg.hidden, cfg.layers);
    clf.out = add_dense(clf.params, "frame.out", cfg.hidden, clf.num_outputs);
    init_lstm(clf.params, clf.lstm, rng);
  }
  init_dense(clf.params, clf.out, rng);
  return clf;
}

std::vector<std::vector<double>> video_inputs(const FeatureVideo& v, bool use_diff) {
  std::vector<std::vector<double>> xs;
  xs.reserve(static_cast<std::size_t>(v.num_frames));
  for (int f = 0; f < v.num_frames; ++f) xs.push_back(frame_input(v, f, use_diff));
  return xs;
}

void train_dense(FrameClassifier& clf, const Dataset& data, const FrameClassifierConfig& cfg) {
  std::vector<std::vector<double>> xs;
  std::vector<int> ys;
  for (const auto& lv : data) {
    const auto labels = frame_labels(lv);
    for (int f = 0; f < lv.video.num_frames; ++f) {
      xs.push_back(frame_input(lv.video, f, cfg.use_diff));
      ys.push_back(labels[static_cast<std::size_t>(f)]);
    }
  }
  AdamState adam(clf.params, cfg.adam);
  std::vector<std::size_t> order(xs.size());
  std::vector<double> logits(static_cast<std::size_t>(clf.num_outputs));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.seed, {tag(Stream::classifier), tag(Stream::shuffle),
                                   static_cast<std::uint64_t>(epoch)}));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(cfg.batch_frames)) {
      const std::size_t e = std::min(order.size(), s + static_cast<std::size_t>(cfg.batch_frames));
      GradTape tape(clf.params);
      for (std::size_t i = s; i < e; ++i) {
        dense_forward(clf.params, clf.out, xs[order[i]], logits);
        const auto xent = softmax_cross_entropy(logits, ys[order[i]]);
        dense_backward(clf.params, clf.out, xs[order[i]], xent.d_logits, tape, {});
      }
      tape.scale(1.0 / static_cast<double>(e - s));
      adam_step(clf.params, tape, adam);
    }
  }
}

void train_lstm(FrameClassifier& clf, const Dataset& data, const FrameClassifierConfig& cfg) {
  AdamState adam(clf.params, cfg.adam);
  std::vector<std::size_t> order(data.size());
  std::vector<double> logits(static_cast<std::size_t>(clf.num_outputs));
  std::vector<double> dh(static_cast<std::size_t>(cfg.hidden));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.seed, {tag(Stream::classifier), tag(Stream::shuffle),
                                   static_cast<std::uint64_t>(epoch)}));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(cfg.batch_videos)) {
      const std::size_t e = std::min(order.size(), s + static_cast<std::size_t>(cfg.batch_videos));
      GradTape tape(clf.params);
      std::size_t frames = 0;
      for (std::size_t i = s; i < e; ++i) {
        const auto& lv = data[order[i]];
        const auto labels = frame_labels(lv);
        const auto xs = video_inputs(lv.video, cfg.use_diff);
        const auto trace = lstm_forward(clf.params, clf.lstm, xs, zero_state(clf.lstm));
        std::vector<std::vector<double>> d_out(xs.size());
        for (std::size_t t = 0; t < xs.size(); ++t) {
          dense_forward(clf.params, clf.out, trace.outputs[t], logits);
          const auto xent = softmax_cross_entropy(logits, labels[t]);
          dense_backward(clf.params, clf.out, trace.outputs[t], xent.d_logits, tape, dh);
          d_out[t] = dh;
        }
        lstm_backward(clf.params, clf.lstm, trace.caches, d_out, tape);
        frames += xs.size();
      }
      tape.scale(1.0 / static_cast<double>(std::max<std::size_t>(frames, 1)));
      tape.clip(5.0);
      adam_step(clf.params, tape, adam);
    }
  }
}

}  // namespace

FrameClassifier train_frame_classifier(const Dataset& data, int num_classes,
                                       const FrameClassifierConfig& cfg) {
  if (data.empty()) throw std::invalid_argument("train_frame_classifier: empty dataset");
  FrameClassifier clf = make_classifier(data.front().video.dim, num_classes, cfg);
  if (cfg.variant == ClassifierVariant::dense) {
    train_dense(clf, data, cfg);
  } else {
    train_lstm(clf, data, cfg);
  }
  return clf;
}

std::vector<std::vector<double>> classify_frames(const FrameClassifier& clf,
                                                 const FeatureVideo& video) {
  const auto xs = video_inputs(video, clf.use_diff);
  std::vector<std::vector<double>> probs;
  probs.reserve(xs.size());
  std::vector<double> logits(static_cast<std::size_t>(clf.num_outputs));
  if (clf.variant == ClassifierVariant::dense) {
    for (const auto& x : xs) {
      dense_forward(clf.params, clf.out, x, logits);
      probs.push_back(softmax(logits));
    }
    return probs;
  }
  const auto trace = lstm_forward(clf.params, clf.lstm, xs, zero_state(clf.lstm));
  for (const auto& h : trace.outputs) {
    dense_forward(clf.params, clf.out, h, logits);
    probs.push_back(softmax(logits));
  }
  return probs;
}

double frame_accuracy(const FrameClassifier& clf, const Dataset& data) {
  std::size_t hit = 0;
  std::size_t total = 0;
  for (const auto& lv : data) {
    const auto labels = frame_labels(lv);
    const auto probs = classify_frames(clf, lv.video);
    for (std::size_t f = 0; f < probs.size(); ++f) {
      const auto arg = std::max_element(probs[f].begin(), probs[f].end()) - probs[f].begin();
      hit += static_cast<int>(arg) == labels[f];
      ++total;
    }
  }
  return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

std::vector<Detection> nms(std::vector<Detection> candidates, double iou_threshold) {
  std::stable_sort(candidates.begin(), candidates.end(), [](const Detection& a, const Detection& b) {
    return a.confidence() > b.confidence();
  });
  std::vector<Detection> kept;
  for (auto& c : candidates) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.label() == c.label() && iou(k.segment, c.segment) >= iou_threshold;
    });
    if (!suppressed) kept.push_back(std::move(c));
  }
  return kept;
}

std::vector<Detection> nms_aggregate(const std::vector<std::vector<double>>& frame_probs,
                                     const NmsConfig& cfg) {
  std::vector<Detection> candidates;
  if (frame_probs.empty()) return candidates;
  const int n = static_cast<int>(frame_probs.size());
  const std::size_t k_total = frame_probs.front().size();
  for (std::size_t k = 1; k < k_total; ++k) {
    int f = 0;
    while (f < n) {
      if (frame_probs[static_cast<std::size_t>(f)][k] < cfg.prob_threshold) {
        ++f;
        continue;
      }
      const int first = f;
      while (f < n && frame_probs[static_cast<std::size_t>(f)][k] >= cfg.prob_threshold) ++f;
      const int last = f - 1;
      Detection d;
      d.segment = frames_to_segment(first, last, n);
      d.class_probs.assign(k_total, 0.0);
      for (int i = first; i <= last; ++i) {
        for (std::size_t c = 0; c < k_total; ++c) d.class_probs[c] += frame_probs[static_cast<std::size_t>(i)][c];
      }
      for (auto& p : d.class_probs) p /= static_cast<double>(last - first + 1);
      d.step_index = 1;
      // a run of class k keeps k as its argmax unless the threshold is below 0.5
      if (d.label() == static_cast<int>(k)) candidates.push_back(std::move(d));
    }
  }
  return nms(std::move(candidates), cfg.iou_threshold);
}

std::vector<double> regressor_features(const FeatureVideo& video, const Segment& seg, int kappa) {
  const int n = video.num_frames;
  const auto d = static_cast<std::size_t>(video.dim);
  std::vector<double> x;
  x.reserve(2 + static_cast<std::size_t>(kappa) * 2 * d);
  x.push_back(seg.start);
  x.push_back(seg.end);
  std::vector<double> diffs;
  diffs.reserve(static_cast<std::size_t>(kappa) * d);
  for (int j = 0; j < kappa; ++j) {
    const double t = seg.start + (static_cast<double>(j) + 0.5) / kappa * seg.length();
    const int f = std::clamp(static_cast<int>(std::floor(t * n)), 0, n - 1);
    const auto in = frame_input(video, f, true);
    x.insert(x.end(), in.begin(), in.begin() + static_cast<std::ptrdiff_t>(d));
    diffs.insert(diffs.end(), in.begin() + static_cast<std::ptrdiff_t>(d), in.end());
  }
  x.insert(x.end(), diffs.begin(), diffs.end());
  return x;
}

RegressionPairs collect_regression_pairs(const Dataset& data,
                                         std::span<const std::vector<Detection>> dets, int kappa) {
  RegressionPairs pairs;
  for (std::size_t v = 0; v < data.size() && v < dets.size(); ++v) {
    for (const auto& det : dets[v]) {
      const auto g = assign(det, data[v].gts);
      if (!g) continue;
      const auto& gs = data[v].gts.items[*g].segment;
      pairs.inputs.push_back(regressor_features(data[v].video, det.segment, kappa));
      pairs.targets.push_back({gs.start - det.segment.start, gs.end - det.segment.end});
    }
  }
  return pairs;
}

BoundaryRegressor fit_boundary_regressor(const RegressionPairs& pairs, int kappa, int feature_dim,
                                         double ridge) {
  BoundaryRegressor reg;
  reg.kappa = kappa;
  reg.feature_dim = feature_dim;
  const auto p = static_cast<Eigen::Index>(reg.input_dim());
  reg.weights.assign(2 * static_cast<std::size_t>(p), 0.0);
  const auto m = static_cast<Eigen::Index>(pairs.inputs.size());
  if (m == 0) return reg;

  // design matrix with a trailing intercept column
  Eigen::MatrixXd X(m, p + 1);
  Eigen::MatrixXd Y(m, 2);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& x = pairs.inputs[static_cast<std::size_t>(i)];
    if (static_cast<Eigen::Index>(x.size()) != p) {
      throw std::invalid_argument("fit_boundary_regressor: input dimension mismatch");
    }
    for (Eigen::Index j = 0; j < p; ++j) X(i, j) = x[static_cast<std::size_t>(j)];
    X(i, p) = 1.0;
    Y(i, 0) = pairs.targets[static_cast<std::size_t>(i)][0];
    Y(i, 1) = pairs.targets[static_cast<std::size_t>(i)][1];
  }
  Eigen::MatrixXd A = X.transpose() * X;
  A.diagonal().array() += ridge;
  const Eigen::MatrixXd W = A.ldlt().solve(X.transpose() * Y);
  for (Eigen::Index j = 0; j < p; ++j) {
    reg.weights[static_cast<std::size_t>(j)] = W(j, 0);
    reg.weights[static_cast<std::size_t>(p + j)] = W(j, 1);
  }
  reg.bias = {W(p, 0), W(p, 1)};
  return reg;
}

std::array<double, 2> predict_offsets(const BoundaryRegressor& reg, std::span<const double> x) {
  const auto p = static_cast<std::size_t>(reg.input_dim());
  if (x.size() != p) throw std::invalid_argument("predict_offsets: input dimension mismatch");
  std::array<double, 2> out = reg.bias;
  for (std::size_t j = 0; j < p; ++j) {
    out[0] += reg.weights[j] * x[j];
    out[1] += reg.weights[p + j] * x[j];
  }
  return out;
}

std::vector<Detection> refine_boundaries(const BoundaryRegressor& reg, const FeatureVideo& video,
                                         std::vector<Detection> dets) {
  for (auto& d : dets) {
    const auto off = predict_offsets(reg, regressor_features(video, d.segment, reg.kappa));
    double s = std::clamp(d.segment.start + off[0], 0.0, 1.0);
    double e = std::clamp(d.segment.end + off[1], 0.0, 1.0);
    if (s > e) s = e = 0.5 * (s + e);
    d.segment = {s, e};
  }
  return dets;
}

}  // namespace budgetdet
