#include "budgetdet/policy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace budgetdet {

void validate(const PolicyConfig& cfg) {
  if (cfg.steps < 1) throw std::invalid_argument("policy: steps must be >= 1");
  if (!(cfg.next_variance > 0.0) || !(cfg.loc_variance > 0.0)) {
    throw std::invalid_argument("policy: variances must be positive");
  }
  if (cfg.hidden < 1 || cfg.layers < 1 || cfg.num_classes < 1 || cfg.neighborhood < 1 ||
      cfg.feature_dim < 1) {
    throw std::invalid_argument("policy: sizes must be positive");
  }
}

NetShape net_shape(const PolicyConfig& cfg) {
  validate(cfg);
  return {observation_dim(cfg.neighborhood, cfg.num_outputs(), cfg.feature_dim, cfg.use_diff),
          cfg.hidden, cfg.layers, cfg.num_outputs()};
}

PolicyNet make_policy(const PolicyConfig& cfg, std::uint64_t seed) {
  return make_policy_net(net_shape(cfg), derive_seed(seed, {tag(Stream::init)}));
}

Segment segment_from_center_width(double center, double width) {
  return {std::clamp(center - 0.5 * width, 0.0, 1.0), std::clamp(center + 0.5 * width, 0.0, 1.0)};
}

std::vector<double> TrajectoryRecord::rewards() const {
  std::vector<double> r;
  r.reserve(steps.size());
  for (const auto& s : steps) r.push_back(s.reward);
  return r;
}

namespace {

void check_finite(const HeadOutput& out, int step) {
  bool ok = std::isfinite(out.center) && std::isfinite(out.width) && std::isfinite(out.next_mean);
  for (const double p : out.probs) ok = ok && std::isfinite(p);
  if (!ok) {
    throw std::runtime_error("rollout: non-finite policy output at step " + std::to_string(step));
  }
}

}  // namespace

TrajectoryRecord rollout(const PolicyNet& net, const PolicyConfig& cfg, const FeatureVideo& video,
                         const GroundTruthSet* gts, Rng& rng, Selection selection,
                         const LossConfig& loss) {
  if (video.dim != cfg.feature_dim || video.has_diff() != cfg.use_diff) {
    throw std::invalid_argument("rollout: video features do not match the policy configuration");
  }
  const bool sample_all = selection == Selection::stochastic &&
                          cfg.mode == TrainingMode::pure_score_function;
  const double next_sd = std::sqrt(cfg.next_variance);
  const double loc_sd = std::sqrt(cfg.loc_variance);

  TrajectoryRecord traj;
  traj.mode = cfg.mode;
  traj.selection = selection;
  traj.steps.reserve(static_cast<std::size_t>(cfg.steps));
  EpisodeState env = start_episode(video, gts, loss);
  LstmState state = zero_state(net.lstm);

  for (int t = 1; t <= cfg.steps; ++t) {
    StepRecord rec;
    rec.frame = env.current_frame;
    rec.obs = observe(video, env, cfg.neighborhood, cfg.num_outputs());
    rec.input = rec.obs.flatten();
    state = lstm_step(net.params, net.lstm, rec.input, state, &rec.cache);
    rec.hidden = state.h.back();
    rec.out = heads_forward(net.params, net.heads, rec.hidden);
    check_finite(rec.out, t);

    auto& a = rec.action;
    a.center = rec.out.center;
    a.width = rec.out.width;
    rec.detection.class_probs = rec.out.probs;
    if (sample_all) {
      std::discrete_distribution<int> cls(rec.out.probs.begin(), rec.out.probs.end());
      a.cls = cls(rng);
      a.center = std::clamp(std::normal_distribution<double>(rec.out.center, loc_sd)(rng), 0.0, 1.0);
      a.width = std::clamp(std::normal_distribution<double>(rec.out.width, loc_sd)(rng), 0.0, 1.0);
      rec.detection.class_probs.assign(rec.out.probs.size(), 0.0);
      rec.detection.class_probs[static_cast<std::size_t>(a.cls)] = 1.0;
    }
    switch (selection) {
      case Selection::stochastic:
        a.next_xi = std::clamp(std::normal_distribution<double>(rec.out.next_mean, next_sd)(rng),
                               0.0, 1.0);
        break;
      case Selection::deterministic:
        a.next_xi = rec.out.next_mean;
        break;
      case Selection::uniform_random:
        a.next_xi = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        break;
    }
    rec.detection.segment = segment_from_center_width(a.center, a.width);
    rec.detection.step_index = t;
    if (selection == Selection::stochastic) {
      rec.logdensity = action_logdensity(rec.out, a, cfg);
    }
    if (gts) rec.matched_gt = assign(rec.detection, *gts);

    const auto outcome = step_env(video, gts, env, rec.detection, a.next_xi, loss);
    rec.appended = outcome.appended;
    rec.reward = outcome.reward;
    traj.steps.push_back(std::move(rec));
  }
  traj.detections = std::move(env.detections);
  if (gts) traj.final_loss = total_loss(traj.detections, *gts, loss);
  return traj;
}

double action_logdensity(const HeadOutput& out, const SampledAction& action,
                         const PolicyConfig& cfg) {
  double lp = gaussian_logpdf(action.next_xi, out.next_mean, cfg.next_variance).value;
  if (cfg.mode == TrainingMode::pure_score_function) {
    if (action.cls < 0 || static_cast<std::size_t>(action.cls) >= out.probs.size()) {
      throw std::invalid_argument("action_logdensity: missing class sample");
    }
    lp += std::log(std::max(out.probs[static_cast<std::size_t>(action.cls)], 1e-300));
    lp += gaussian_logpdf(action.center, out.center, cfg.loc_variance).value;
    lp += gaussian_logpdf(action.width, out.width, cfg.loc_variance).value;
  }
  return lp;
}

HeadGrad action_logdensity_grad(const HeadOutput& out, const SampledAction& action,
                                const PolicyConfig& cfg) {
  HeadGrad g;
  g.d_next_pre = gaussian_logpdf(action.next_xi, out.next_mean, cfg.next_variance).d_mean *
                 out.next_mean * (1.0 - out.next_mean);
  if (cfg.mode == TrainingMode::pure_score_function) {
    g.d_logits.resize(out.probs.size());
    for (std::size_t k = 0; k < out.probs.size(); ++k) {
      g.d_logits[k] = (static_cast<int>(k) == action.cls ? 1.0 : 0.0) - out.probs[k];
    }
    g.d_loc_pre[0] = gaussian_logpdf(action.center, out.center, cfg.loc_variance).d_mean *
                     out.center * (1.0 - out.center);
    g.d_loc_pre[1] = gaussian_logpdf(action.width, out.width, cfg.loc_variance).d_mean *
                     out.width * (1.0 - out.width);
  }
  return g;
}

std::vector<Detection> detect(const PolicyNet& net, const PolicyConfig& cfg,
                              const FeatureVideo& video) {
  Rng unused(0);
  return rollout(net, cfg, video, nullptr, unused, Selection::deterministic, LossConfig{})
      .detections;
}

std::vector<std::vector<Detection>> detect_all(const PolicyNet& net, const PolicyConfig& cfg,
                                               const Dataset& data, Exec exec) {
  std::vector<std::vector<Detection>> out(data.size());
  const long n = static_cast<long>(data.size());
  if (exec == Exec::serial) {
    for (long v = 0; v < n; ++v) out[static_cast<std::size_t>(v)] = detect(net, cfg, data[static_cast<std::size_t>(v)].video);
    return out;
  }
#pragma omp parallel for schedule(dynamic)
  for (long v = 0; v < n; ++v) {
    out[static_cast<std::size_t>(v)] = detect(net, cfg, data[static_cast<std::size_t>(v)].video);
  }
  return out;
}

std::vector<std::vector<Detection>> detect_all_random(const PolicyNet& net,
                                                      const PolicyConfig& cfg, const Dataset& data,
                                                      std::uint64_t seed, Exec exec) {
  std::vector<std::vector<Detection>> out(data.size());
  const long n = static_cast<long>(data.size());
  auto one = [&](long v) {
    Rng rng(derive_seed(seed, {tag(Stream::eval), static_cast<std::uint64_t>(v)}));
    out[static_cast<std::size_t>(v)] =
        rollout(net, cfg, data[static_cast<std::size_t>(v)].video, nullptr, rng,
                Selection::uniform_random, LossConfig{})
            .detections;
  };
  if (exec == Exec::serial) {
    for (long v = 0; v < n; ++v) one(v);
    return out;
  }
#pragma omp parallel for schedule(dynamic)
  for (long v = 0; v < n; ++v) one(v);
  return out;
}

std::vector<GroundTruthSet> ground_truths(const Dataset& data) {
  std::vector<GroundTruthSet> out;
  out.reserve(data.size());
  for (const auto& lv : data) out.push_back(lv.gts);
  return out;
}

}  // namespace budgetdet
