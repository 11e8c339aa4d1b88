#include "budgetdet/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace budgetdet {

using ojson = nlohmann::ordered_json;

double estimate_budget(const BudgetCostModel& m, int steps, bool use_regression) {
  if (steps < 1) throw std::invalid_argument("estimate_budget: steps must be >= 1");
  const double nb = static_cast<double>(m.neighborhood);
  const double t = static_cast<double>(steps);
  double ms = m.diff_ms * nb * t + m.feature_ms * nb * t + m.recurrent_ms * t;
  if (use_regression) {
    const double k = static_cast<double>(m.kappa);
    ms += m.diff_ms * k + m.feature_ms * k + m.regression_ms;
  }
  return ms;
}

std::string format_budget(double ms) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.1f ms (~%.0f ms)", ms, ms);
  return buf;
}

bool EvalReport::same_metrics(const EvalReport& o) const {
  return thresholds == o.thresholds && map == o.map && per_class_ap == o.per_class_ap &&
         videos == o.videos && detections == o.detections && steps == o.steps;
}

EvalReport evaluate_detections(std::span<const std::vector<Detection>> dets,
                               std::span<const GroundTruthSet> gts,
                               std::span<const double> thresholds, int num_classes) {
  EvalReport r;
  r.thresholds.assign(thresholds.begin(), thresholds.end());
  r.videos = static_cast<long>(dets.size());
  for (const auto& d : dets) r.detections += static_cast<long>(d.size());
  const bool any_gt = std::any_of(gts.begin(), gts.end(), [](const auto& g) { return !g.empty(); });
  for (const double tau : thresholds) {
    const auto aps = per_class_ap(dets, gts, tau, RankingMode::confidence, num_classes);
    std::vector<std::optional<double>> row;
    double sum = 0.0;
    int present = 0;
    for (int c = 1; c <= num_classes; ++c) {
      const auto& a = aps[static_cast<std::size_t>(c)];
      if (a.class_absent) {
        row.emplace_back();
      } else {
        row.emplace_back(a.ap);
        sum += a.ap;
        ++present;
      }
    }
    r.per_class_ap.push_back(std::move(row));
    r.map.push_back(any_gt && present > 0 ? sum / present : 0.0);
  }
  return r;
}

EvalReport evaluate(const PolicyNet& net, const PolicyConfig& cfg, const Dataset& data,
                    std::span<const double> thresholds, Exec exec) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto dets = detect_all(net, cfg, data, exec);
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  const auto gts = ground_truths(data);
  auto r = evaluate_detections(dets, gts, thresholds, cfg.num_classes);
  r.steps = cfg.steps;
  r.wall_ms_per_video = data.empty() ? 0.0 : ms / static_cast<double>(data.size());
  return r;
}

std::string to_json(const EvalReport& r) {
  ojson j;
  j["thresholds"] = r.thresholds;
  j["map"] = r.map;
  auto& pc = j["per_class_ap"];
  pc = ojson::array();
  for (const auto& row : r.per_class_ap) {
    ojson jr = ojson::array();
    for (const auto& v : row) {
      if (v) {
        jr.push_back(*v);
      } else {
        jr.push_back(nullptr);
      }
    }
    pc.push_back(jr);
  }
  j["videos"] = r.videos;
  j["detections"] = r.detections;
  j["steps"] = r.steps;
  j["wall_ms_per_video"] = r.wall_ms_per_video;
  return j.dump(2);
}

EvalReport report_from_json(const std::string& text) {
  const auto j = ojson::parse(text);
  EvalReport r;
  r.thresholds = j.at("thresholds").get<std::vector<double>>();
  r.map = j.at("map").get<std::vector<double>>();
  for (const auto& jr : j.at("per_class_ap")) {
    std::vector<std::optional<double>> row;
    for (const auto& v : jr) {
      if (v.is_null()) {
        row.emplace_back();
      } else {
        row.emplace_back(v.get<double>());
      }
    }
    r.per_class_ap.push_back(std::move(row));
  }
  r.videos = j.at("videos").get<long>();
  r.detections = j.at("detections").get<long>();
  r.steps = j.at("steps").get<int>();
  r.wall_ms_per_video = j.at("wall_ms_per_video").get<double>();
  return r;
}

std::string detections_to_json(const Dataset& data,
                               std::span<const std::vector<Detection>> dets) {
  ojson j = ojson::array();
  for (std::size_t v = 0; v < data.size() && v < dets.size(); ++v) {
    ojson jv;
    jv["video"] = data[v].video.id;
    auto& list = jv["detections"];
    list = ojson::array();
    for (const auto& d : dets[v]) {
      ojson jd;
      jd["start"] = d.segment.start;
      jd["end"] = d.segment.end;
      jd["label"] = d.label();
      jd["confidence"] = d.confidence();
      jd["step"] = d.step_index;
      jd["class_probs"] = d.class_probs;
      list.push_back(jd);
    }
    j.push_back(jv);
  }
  return j.dump(2);
}

double measure_inference_ms(const PolicyNet& net, const PolicyConfig& cfg, const Dataset& data,
                            int repeats) {
  if (data.empty()) return 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (int r = 0; r < std::max(1, repeats); ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto dets = detect_all(net, cfg, data, Exec::serial);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    best = std::min(best, ms);
  }
  return best / static_cast<double>(data.size());
}

std::vector<SweepRow> steps_sweep(const Dataset& train_set, const Dataset& val_set,
                                  const PolicyConfig& pcfg, const TrainConfig& tcfg,
                                  std::span<const int> steps_values, bool train_each,
                                  const PolicyNet* fixed, const BudgetCostModel& cost) {
  if (!std::is_sorted(steps_values.begin(), steps_values.end())) {
    throw std::invalid_argument("steps_sweep: step values must be ascending");
  }
  if (!train_each && fixed == nullptr) {
    throw std::invalid_argument("steps_sweep: evaluation-only sweep needs a model");
  }
  const std::vector<double> at50 = {0.5};
  std::vector<SweepRow> rows;
  for (const int steps : steps_values) {
    PolicyConfig cfg = pcfg;
    cfg.steps = steps;
    PolicyNet net = train_each ? train(train_set, val_set, cfg, tcfg).net : *fixed;
    SweepRow row;
    row.steps = steps;
    row.map50 = evaluate(net, cfg, val_set, at50).map.front();
    row.wall_ms_per_video = measure_inference_ms(net, cfg, val_set);
    row.budget_ms = estimate_budget(cost, steps, false);
    rows.push_back(row);
  }
  return rows;
}

std::string sweep_table(std::span<const SweepRow> rows) {
  std::ostringstream os;
  os << "steps\tmap50\twall_ms_per_video\tbudget_ms\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d\t%.6f\t%.4f\t%.1f\n", r.steps, r.map50,
                  r.wall_ms_per_video, r.budget_ms);
    os << buf;
  }
  return os.str();
}

std::vector<KappaRow> kappa_sweep(const PolicyNet& net, const PolicyConfig& pcfg,
                                  const Dataset& train_set, const Dataset& val_set,
                                  std::span<const int> kappas, double ridge) {
  const auto train_dets = detect_all(net, pcfg, train_set);
  const auto val_dets = detect_all(net, pcfg, val_set);
  const auto val_gts = ground_truths(val_set);
  const double base = mean_ap(val_dets, val_gts, 0.5, RankingMode::confidence);
  std::vector<KappaRow> rows;
  for (const int k : kappas) {
    const auto pairs = collect_regression_pairs(train_set, train_dets, k);
    const auto reg = fit_boundary_regressor(pairs, k, pcfg.feature_dim, ridge);
    std::vector<std::vector<Detection>> refined(val_dets.size());
    for (std::size_t v = 0; v < val_dets.size(); ++v) {
      refined[v] = refine_boundaries(reg, val_set[v].video, val_dets[v]);
    }
    rows.push_back({k, base, mean_ap(refined, val_gts, 0.5, RankingMode::confidence),
                    pairs.inputs.size()});
  }
  return rows;
}

std::string kappa_table(std::span<const KappaRow> rows) {
  std::ostringstream os;
  os << "kappa\tmap50_unrefined\tmap50_refined\ttrain_pairs\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d\t%.6f\t%.6f\t%zu\n", r.kappa, r.map50_unrefined,
                  r.map50_refined, r.train_pairs);
    os << buf;
  }
  return os.str();
}

std::string format_trace(const TrajectoryRecord& traj, const FeatureVideo& video,
                         const GroundTruthSet* gts) {
  std::ostringstream os;
  char buf[256];
  os << "video " << video.id << " frames " << video.num_frames << " steps " << traj.steps.size()
     << '\n';
  if (gts) {
    for (const auto& g : gts->items) {
      std::snprintf(buf, sizeof(buf), "  gt [%.3f, %.3f] class %d\n", g.segment.start,
                    g.segment.end, g.label);
      os << buf;
    }
  }
  for (const auto& s : traj.steps) {
    std::snprintf(buf, sizeof(buf), "step %d frame %d segment [%.3f, %.3f] class %d%s reward %+.4f next %.3f\n",
                  s.detection.step_index, s.frame, s.detection.segment.start,
                  s.detection.segment.end, s.detection.label(),
                  s.appended ? "" : " (discarded)", s.reward, s.action.next_xi);
    os << buf << "  probs";
    for (const double p : s.out.probs) {
      std::snprintf(buf, sizeof(buf), " %.3f", p);
      os << buf;
    }
    os << '\n';
  }
  if (gts) {
    std::snprintf(buf, sizeof(buf), "final loss %.4f (cls %.4f loc %.4f ret %.4f)\n",
                  traj.final_loss.total, traj.final_loss.cls, traj.final_loss.loc,
                  traj.final_loss.ret);
    os << buf;
  }
  return os.str();
}

}  // namespace budgetdet
