#include "budgetdet/trainer.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace budgetdet {

void validate(const TrainConfig& cfg) {
  if (cfg.epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
  if (cfg.batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
  if (!(cfg.discount > 0.0 && cfg.discount <= 1.0)) {
    throw std::invalid_argument("train: discount must be in (0, 1]");
  }
  if (cfg.baseline == BaselineMode::random_policy && cfg.baseline_rollouts < 1) {
    throw std::invalid_argument("train: random-policy baseline needs at least one rollout");
  }
}

BaselineEstimate estimate_baseline(const PolicyNet& net, const PolicyConfig& pcfg,
                                   const Dataset& data, const TrainConfig& tcfg, Rng& rng) {
  const auto T = static_cast<std::size_t>(pcfg.steps);
  BaselineEstimate est;
  est.per_step.assign(T, 0.0);
  est.std_error.assign(T, 0.0);
  if (tcfg.baseline == BaselineMode::none) return est;
  if (tcfg.baseline == BaselineMode::constant) {
    std::fill(est.per_step.begin(), est.per_step.end(), tcfg.constant_baseline);
    return est;
  }
  if (data.empty()) throw std::invalid_argument("estimate_baseline: empty dataset");

  const auto n = static_cast<std::size_t>(tcfg.baseline_rollouts);
  std::vector<std::size_t> video(n);
  std::vector<std::uint64_t> seeds(n);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  for (std::size_t i = 0; i < n; ++i) {
    video[i] = pick(rng);
    seeds[i] = rng();
  }
  std::vector<std::vector<double>> returns(n);
  auto one = [&](std::size_t i) {
    Rng r(seeds[i]);
    const auto& lv = data[video[i]];
    const auto traj = rollout(net, pcfg, lv.video, &lv.gts, r, Selection::uniform_random, tcfg.loss);
    returns[i] = returns_to_go(traj.rewards(), tcfg.discount);
  };
  if (tcfg.exec == Exec::serial) {
    for (std::size_t i = 0; i < n; ++i) one(i);
  } else {
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < static_cast<long>(n); ++i) one(static_cast<std::size_t>(i));
  }

  std::vector<double> sumsq(T, 0.0);
  for (const auto& r : returns) {
    for (std::size_t t = 0; t < T; ++t) {
      est.per_step[t] += r[t];
      sumsq[t] += r[t] * r[t];
    }
  }
  const double dn = static_cast<double>(n);
  for (std::size_t t = 0; t < T; ++t) {
    est.per_step[t] /= dn;
    if (n > 1) {
      const double var = std::max(0.0, (sumsq[t] - dn * est.per_step[t] * est.per_step[t]) / (dn - 1.0));
      est.std_error[t] = std::sqrt(var / dn);
    }
  }
  est.samples = static_cast<long>(n);
  return est;
}

namespace {

struct StepTerms {
  double value = 0.0;
  HeadGrad grad;
};

// Objective contribution of one step and its gradient with respect to the
// head pre-activations, at head outputs `out`.
StepTerms step_terms(const HeadOutput& out, const StepRecord& rec, double advantage,
                     const PolicyConfig& pcfg, const TrainConfig& tcfg,
                     const GroundTruthSet& gts) {
  StepTerms st;
  st.value = -advantage * action_logdensity(out, rec.action, pcfg);
  st.grad = action_logdensity_grad(out, rec.action, pcfg);
  st.grad.d_next_pre *= -advantage;
  st.grad.d_loc_pre[0] *= -advantage;
  st.grad.d_loc_pre[1] *= -advantage;
  for (auto& d : st.grad.d_logits) d *= -advantage;

  if (pcfg.mode != TrainingMode::hybrid || !rec.appended || !rec.matched_gt) return st;

  const auto& g = gts.items[*rec.matched_gt];
  const auto& w = tcfg.loss.weights;
  const auto xent = softmax_cross_entropy(out.logits, g.label);
  st.value += w.lambda_c * xent.loss;
  st.grad.d_logits.resize(out.logits.size(), 0.0);
  for (std::size_t k = 0; k < out.logits.size(); ++k) {
    st.grad.d_logits[k] += w.lambda_c * xent.d_logits[k];
  }

  const Segment seg = segment_from_center_width(out.center, out.width);
  st.value += w.lambda_l * loc_error(seg, g.segment, tcfg.loss.scaling);
  const auto d_se = loc_error_grad(seg, g.segment, tcfg.loss.scaling);
  const double raw_start = out.center - 0.5 * out.width;
  const double raw_end = out.center + 0.5 * out.width;
  const double ds = (raw_start > 0.0 && raw_start < 1.0) ? d_se[0] : 0.0;
  const double de = (raw_end > 0.0 && raw_end < 1.0) ? d_se[1] : 0.0;
  const double d_center = ds + de;
  const double d_width = -0.5 * ds + 0.5 * de;
  st.grad.d_loc_pre[0] += w.lambda_l * d_center * out.center * (1.0 - out.center);
  st.grad.d_loc_pre[1] += w.lambda_l * d_width * out.width * (1.0 - out.width);
  return st;
}

std::vector<double> advantages(const TrajectoryRecord& traj, const TrainConfig& tcfg,
                               std::span<const double> baseline) {
  auto adv = returns_to_go(traj.rewards(), tcfg.discount);
  for (std::size_t t = 0; t < adv.size(); ++t) {
    if (t < baseline.size()) adv[t] -= baseline[t];
  }
  return adv;
}

LstmTrace replay(const PolicyNet& net, const TrajectoryRecord& traj) {
  std::vector<std::vector<double>> inputs;
  inputs.reserve(traj.steps.size());
  for (const auto& s : traj.steps) inputs.push_back(s.input);
  return lstm_forward(net.params, net.lstm, inputs, zero_state(net.lstm));
}

}  // namespace

double surrogate_loss(const PolicyNet& net, const PolicyConfig& pcfg, const TrainConfig& tcfg,
                      const TrajectoryRecord& traj, const GroundTruthSet& gts,
                      std::span<const double> baseline) {
  const auto adv = advantages(traj, tcfg, baseline);
  const auto trace = replay(net, traj);
  double total = 0.0;
  for (std::size_t t = 0; t < traj.steps.size(); ++t) {
    const auto out = heads_forward(net.params, net.heads, trace.outputs[t]);
    total += step_terms(out, traj.steps[t], adv[t], pcfg, tcfg, gts).value;
  }
  return total;
}

void trajectory_gradient(const PolicyNet& net, const PolicyConfig& pcfg, const TrainConfig& tcfg,
                         const TrajectoryRecord& traj, const GroundTruthSet& gts,
                         std::span<const double> baseline, GradTape& tape) {
  if (traj.selection != Selection::stochastic) {
    throw std::invalid_argument("trajectory_gradient: needs a stochastic rollout");
  }
  const auto adv = advantages(traj, tcfg, baseline);
  const auto trace = replay(net, traj);
  std::vector<std::vector<double>> dh(traj.steps.size());
  for (std::size_t t = 0; t < traj.steps.size(); ++t) {
    const auto out = heads_forward(net.params, net.heads, trace.outputs[t]);
    const auto st = step_terms(out, traj.steps[t], adv[t], pcfg, tcfg, gts);
    dh[t] = heads_backward(net.params, net.heads, trace.outputs[t], st.grad, tape);
  }
  lstm_backward(net.params, net.lstm, trace.caches, dh, tape);
}

BatchGradient policy_gradient_batch(const PolicyNet& net, const PolicyConfig& pcfg,
                                    const TrainConfig& tcfg,
                                    std::span<const LabeledVideo* const> videos,
                                    const BaselineEstimate& baseline, std::uint64_t batch_seed,
                                    Exec exec) {
  const std::size_t n = videos.size();
  std::vector<GradTape> tapes(n);
  std::vector<LossBreakdown> losses(n);
  std::vector<double> returns(n, 0.0);
  std::vector<char> ok(n, 1);

  auto one = [&](std::size_t i) {
    try {
      Rng rng(derive_seed(batch_seed, {tag(Stream::rollout), i}));
      const auto& lv = *videos[i];
      const auto traj = rollout(net, pcfg, lv.video, &lv.gts, rng, Selection::stochastic, tcfg.loss);
      tapes[i] = GradTape(net.params);
      trajectory_gradient(net, pcfg, tcfg, traj, lv.gts, baseline.per_step, tapes[i]);
      losses[i] = traj.final_loss;
      returns[i] = discounted_return(traj.rewards(), tcfg.discount);
    } catch (const std::exception&) {
      ok[i] = 0;
    }
  };
  if (exec == Exec::serial) {
    for (std::size_t i = 0; i < n; ++i) one(i);
  } else {
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < static_cast<long>(n); ++i) one(static_cast<std::size_t>(i));
  }

  BatchGradient out;
  out.tape = GradTape(net.params);
  for (std::size_t i = 0; i < n; ++i) {
    if (!ok[i]) {
      out.finite = false;
      continue;
    }
    out.tape.accumulate(tapes[i]);
    out.stats.mean_return += returns[i];
    out.stats.mean_loss += losses[i].total;
    out.stats.mean_cls += losses[i].cls;
    out.stats.mean_loc += losses[i].loc;
    out.stats.mean_ret += losses[i].ret;
  }
  if (n > 0) {
    const double inv = 1.0 / static_cast<double>(n);
    out.tape.scale(inv);
    out.stats.mean_return *= inv;
    out.stats.mean_loss *= inv;
    out.stats.mean_cls *= inv;
    out.stats.mean_loc *= inv;
    out.stats.mean_ret *= inv;
  }
  out.stats.videos = n;
  out.stats.grad_norm = out.tape.norm();
  out.finite = out.finite && out.tape.all_finite();
  return out;
}

bool EpochRecord::same_metrics(const EpochRecord& o) const {
  return epoch == o.epoch && train_loss == o.train_loss && train_cls == o.train_cls &&
         train_loc == o.train_loc && train_ret == o.train_ret && mean_return == o.mean_return &&
         baseline_mean == o.baseline_mean && grad_norm == o.grad_norm &&
         skipped_batches == o.skipped_batches && val_map == o.val_map;
}

std::string to_json_line(const EpochRecord& rec, std::span<const double> thresholds) {
  nlohmann::ordered_json j;
  j["epoch"] = rec.epoch;
  j["loss"] = rec.train_loss;
  j["loss_cls"] = rec.train_cls;
  j["loss_loc"] = rec.train_loc;
  j["loss_ret"] = rec.train_ret;
  j["return"] = rec.mean_return;
  j["baseline"] = rec.baseline_mean;
  j["grad_norm"] = rec.grad_norm;
  j["skipped_batches"] = rec.skipped_batches;
  auto& m = j["val_map"];
  m = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < thresholds.size() && i < rec.val_map.size(); ++i) {
    char key[16];
    std::snprintf(key, sizeof(key), "%.2f", thresholds[i]);
    m[key] = rec.val_map[i];
  }
  j["wall_seconds"] = rec.wall_seconds;
  return j.dump();
}

std::vector<double> validation_map(std::span<const std::vector<Detection>> dets,
                                   std::span<const GroundTruthSet> gts,
                                   std::span<const double> thresholds) {
  std::vector<double> out(thresholds.size(), 0.0);
  const bool any_gt = std::any_of(gts.begin(), gts.end(), [](const auto& g) { return !g.empty(); });
  if (!any_gt) return out;
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    out[i] = mean_ap(dets, gts, thresholds[i], RankingMode::confidence);
  }
  return out;
}

TrainResult train(const Dataset& train_set, const Dataset& val_set, const PolicyConfig& pcfg,
                  const TrainConfig& tcfg) {
  return train(train_set, val_set, pcfg, tcfg, make_policy(pcfg, tcfg.seed));
}

TrainResult train(const Dataset& train_set, const Dataset& val_set, const PolicyConfig& pcfg,
                  const TrainConfig& tcfg, PolicyNet init) {
  validate(pcfg);
  validate(tcfg);
  if (tcfg.epochs > 0 && train_set.empty()) {
    throw std::invalid_argument("train: empty training set");
  }
  TrainResult result;
  PolicyNet net = std::move(init);
  result.net = net;
  if (tcfg.epochs == 0) return result;

  AdamState adam(net.params, tcfg.adam);
  const auto val_gts = ground_truths(val_set);
  const auto sel = std::find(tcfg.eval_thresholds.begin(), tcfg.eval_thresholds.end(),
                             tcfg.select_threshold);
  const std::size_t sel_idx = sel == tcfg.eval_thresholds.end()
                                  ? 0
                                  : static_cast<std::size_t>(sel - tcfg.eval_thresholds.begin());
  std::ofstream log;
  if (!tcfg.log_path.empty()) log.open(tcfg.log_path, std::ios::app);

  std::vector<std::size_t> order(train_set.size());
  for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto e = static_cast<std::uint64_t>(epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(tcfg.seed, {tag(Stream::shuffle), e}));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    Rng baseline_rng(derive_seed(tcfg.seed, {tag(Stream::baseline), e}));
    const auto baseline = estimate_baseline(net, pcfg, train_set, tcfg, baseline_rng);

    EpochRecord rec;
    rec.epoch = epoch;
    if (!baseline.per_step.empty()) {
      rec.baseline_mean = std::accumulate(baseline.per_step.begin(), baseline.per_step.end(), 0.0) /
                          static_cast<double>(baseline.per_step.size());
    }
    std::size_t counted = 0;
    std::uint64_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tcfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(tcfg.batch_size));
      std::vector<const LabeledVideo*> batch;
      for (std::size_t i = start; i < stop; ++i) batch.push_back(&train_set[order[i]]);
      auto grad = policy_gradient_batch(
          net, pcfg, tcfg, batch, baseline,
          derive_seed(tcfg.seed, {tag(Stream::rollout), e, batch_index++}), tcfg.exec);
      if (!grad.finite) {
        ++rec.skipped_batches;
        continue;
      }
      const double w = static_cast<double>(batch.size());
      rec.train_loss += grad.stats.mean_loss * w;
      rec.train_cls += grad.stats.mean_cls * w;
      rec.train_loc += grad.stats.mean_loc * w;
      rec.train_ret += grad.stats.mean_ret * w;
      rec.mean_return += grad.stats.mean_return * w;
      rec.grad_norm += grad.stats.grad_norm * w;
      counted += batch.size();
      grad.tape.clip(tcfg.clip_norm);
      if (!adam_step(net.params, grad.tape, adam)) ++rec.skipped_batches;
    }
    if (counted > 0) {
      const double inv = 1.0 / static_cast<double>(counted);
      rec.train_loss *= inv;
      rec.train_cls *= inv;
      rec.train_loc *= inv;
      rec.train_ret *= inv;
      rec.mean_return *= inv;
      rec.grad_norm *= inv;
    }

    if (!net.params.all_finite() || !std::isfinite(rec.train_loss) || counted == 0) {
      result.diverged = true;
      result.message = "training diverged at epoch " + std::to_string(epoch) +
                       "; returning the last good model";
      rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      result.history.push_back(rec);
      break;
    }

    const auto dets = detect_all(net, pcfg, val_set, tcfg.exec);
    rec.val_map = validation_map(dets, val_gts, tcfg.eval_thresholds);
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(rec);
    if (log) log << to_json_line(rec, tcfg.eval_thresholds) << '\n' << std::flush;

    const double score = rec.val_map.empty() ? 0.0 : rec.val_map[sel_idx];
    if (score > result.best_val_map || val_set.empty()) {
      result.best_val_map = score;
      result.best_epoch = epoch;
      result.net = net;
      if (!tcfg.checkpoint_path.empty()) save_policy(tcfg.checkpoint_path, net, pcfg);
    }
  }
  return result;
}

// --- policy checkpoints ---------------------------------------------------------

void save_policy(const std::string& path, const PolicyNet& net, const PolicyConfig& cfg) {
  CheckpointHeader h;
  h["format"] = 1;
  h["input_dim"] = net.shape.input_dim;
  h["hidden"] = net.shape.hidden;
  h["layers"] = net.shape.layers;
  h["num_outputs"] = net.shape.num_outputs;
  h["steps"] = cfg.steps;
  h["num_classes"] = cfg.num_classes;
  h["neighborhood"] = cfg.neighborhood;
  h["feature_dim"] = cfg.feature_dim;
  h["use_diff"] = cfg.use_diff ? 1 : 0;
  h["mode"] = cfg.mode == TrainingMode::hybrid ? 1 : 0;
  h["next_variance_bits"] = std::bit_cast<std::int64_t>(cfg.next_variance);
  h["loc_variance_bits"] = std::bit_cast<std::int64_t>(cfg.loc_variance);
  save_checkpoint(path, h, net.params);
}

LoadedPolicy load_policy(const std::string& path) {
  auto ck = load_checkpoint(path);
  auto get = [&](const char* key) {
    const auto it = ck.header.find(key);
    if (it == ck.header.end()) {
      throw std::runtime_error(std::string("checkpoint: missing header field ") + key);
    }
    return it->second;
  };
  LoadedPolicy lp;
  auto& c = lp.cfg;
  c.steps = static_cast<int>(get("steps"));
  c.hidden = static_cast<int>(get("hidden"));
  c.layers = static_cast<int>(get("layers"));
  c.num_classes = static_cast<int>(get("num_classes"));
  c.neighborhood = static_cast<int>(get("neighborhood"));
  c.feature_dim = static_cast<int>(get("feature_dim"));
  c.use_diff = get("use_diff") != 0;
  c.mode = get("mode") != 0 ? TrainingMode::hybrid : TrainingMode::pure_score_function;
  c.next_variance = std::bit_cast<double>(get("next_variance_bits"));
  c.loc_variance = std::bit_cast<double>(get("loc_variance_bits"));
  const NetShape shape{static_cast<int>(get("input_dim")), c.hidden, c.layers,
                       static_cast<int>(get("num_outputs"))};
  if (!(shape == net_shape(c))) {
    throw std::runtime_error("checkpoint: network shape does not match its configuration");
  }
  lp.net = make_policy_net(shape);
  if (lp.net.params.size() != ck.params.size()) {
    throw std::runtime_error("checkpoint: unexpected array count");
  }
  for (std::size_t i = 0; i < ck.params.size(); ++i) {
    auto& dst = lp.net.params[i];
    const auto& src = ck.params[i];
    if (dst.name != src.name || dst.rows != src.rows || dst.cols != src.cols) {
      throw std::runtime_error("checkpoint: array " + src.name + " does not match the layout");
    }
    dst.data = src.data;
  }
  return lp;
}

}  // namespace budgetdet
