// budgetdet command-line front end. Subcommands: gen-data, train, eval,
// detect, sweep, budget, trace. Run `budgetdet <cmd> --help` for flags.

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <stdexcept>

#include "budgetdet/dataset_io.hpp"
#include "budgetdet/harness.hpp"

using namespace budgetdet;

namespace {

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    if (!text.empty() && text.back() != '\n') std::cout << '\n';
    return;
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << text;
  if (!text.empty() && text.back() != '\n') os << '\n';
}

struct PolicyFlags {
  int steps = 6;
  int hidden = 64;
  int layers = 2;
  double next_variance = 0.18;
  double loc_variance = 0.05;
  std::string mode = "hybrid";
  int neighborhood = 15;
  int classes = 0;  // 0: infer from the training data

  void add(CLI::App* app) {
    app->add_option("--steps", steps, "Policy steps T")->check(CLI::PositiveNumber);
    app->add_option("--hidden", hidden, "LSTM hidden units per layer")->check(CLI::PositiveNumber);
    app->add_option("--layers", layers, "LSTM layers")->check(CLI::PositiveNumber);
    app->add_option("--next-variance", next_variance, "Exploration variance of the next location");
    app->add_option("--loc-variance", loc_variance, "Location sampling variance (pure mode)");
    app->add_option("--mode", mode, "Training mode")->check(CLI::IsMember({"hybrid", "pure"}));
    app->add_option("--neighborhood", neighborhood, "Neighborhood size")->check(CLI::PositiveNumber);
    app->add_option("--classes", classes, "Foreground classes (default: from data)");
  }

  PolicyConfig make(const Dataset& data) const {
    if (data.empty()) throw std::invalid_argument("empty dataset");
    PolicyConfig c;
    c.steps = steps;
    c.hidden = hidden;
    c.layers = layers;
    c.next_variance = next_variance;
    c.loc_variance = loc_variance;
    c.mode = mode == "pure" ? TrainingMode::pure_score_function : TrainingMode::hybrid;
    c.neighborhood = neighborhood;
    c.feature_dim = data.front().video.dim;
    c.use_diff = data.front().video.has_diff();
    int k = classes;
    if (k == 0) {
      for (const auto& lv : data) k = std::max(k, lv.gts.max_label());
    }
    c.num_classes = std::max(k, 1);
    return c;
  }
};

struct TrainFlags {
  int epochs = 100;
  int batch = 32;
  double discount = 0.9;
  std::string baseline = "random";
  double constant_baseline = 0.0;
  int baseline_rollouts = 64;
  double lr = 1e-3;
  double clip = 5.0;
  double lambda_c = 1.0, lambda_l = 1.0, lambda_r = 0.5;
  double tau_iou = 0.5;
  bool serial = false;

  void add(CLI::App* app) {
    app->add_option("--epochs", epochs, "Training epochs")->check(CLI::NonNegativeNumber);
    app->add_option("--batch", batch, "Videos per batch")->check(CLI::PositiveNumber);
    app->add_option("--discount", discount, "Discount factor in (0, 1]");
    app->add_option("--baseline", baseline, "Return baseline")
        ->check(CLI::IsMember({"random", "none", "constant"}));
    app->add_option("--constant-baseline", constant_baseline, "Value for --baseline constant");
    app->add_option("--baseline-rollouts", baseline_rollouts, "Random-policy rollouts per epoch");
    app->add_option("--lr", lr, "Adam learning rate");
    app->add_option("--clip", clip, "Global gradient norm clip (0 disables)");
    app->add_option("--lambda-c", lambda_c, "Classification weight");
    app->add_option("--lambda-l", lambda_l, "Localization weight");
    app->add_option("--lambda-r", lambda_r, "Retrieval weight");
    app->add_option("--train-iou", tau_iou, "IoU threshold of the retrieval term");
    app->add_flag("--serial", serial, "Disable OpenMP parallel rollouts");
  }

  TrainConfig make(std::uint64_t seed) const {
    TrainConfig t;
    t.epochs = epochs;
    t.batch_size = batch;
    t.discount = discount;
    t.baseline = baseline == "none"       ? BaselineMode::none
                 : baseline == "constant" ? BaselineMode::constant
                                          : BaselineMode::random_policy;
    t.constant_baseline = constant_baseline;
    t.baseline_rollouts = baseline_rollouts;
    t.seed = seed;
    t.adam.lr = lr;
    t.clip_norm = clip;
    t.loss.weights = {lambda_c, lambda_l, lambda_r};
    t.loss.tau_iou = tau_iou;
    t.exec = serial ? Exec::serial : Exec::parallel;
    return t;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Budget-aware temporal activity detection with a recurrent frame-selection policy"};
  app.require_subcommand(1);

  // gen-data
  SyntheticSpec spec;
  std::uint64_t data_seed = 0;
  std::string data_out;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic feature dataset");
  gen->add_option("--out", data_out, "Output dataset file")->required();
  gen->add_option("--seed", data_seed, "Dataset seed");
  gen->add_option("--videos", spec.num_videos, "Number of videos");
  gen->add_option("--frames", spec.frames_per_video, "Frames per video");
  gen->add_option("--dim", spec.feature_dim, "Feature dimension");
  gen->add_option("--classes", spec.num_classes, "Foreground classes");
  gen->add_option("--min-segments", spec.min_segments, "Minimum segments per video");
  gen->add_option("--max-segments", spec.max_segments, "Maximum segments per video");
  gen->add_option("--min-length", spec.min_segment_frames, "Minimum segment length in frames");
  gen->add_option("--max-length", spec.max_segment_frames, "Maximum segment length in frames");
  gen->add_option("--noise", spec.noise_level, "Feature noise standard deviation");
  gen->add_option("--prototype-seed", spec.prototype_seed, "Seed of the class prototypes");
  gen->add_flag("--diff", spec.with_diff, "Attach the frame-difference channel");

  // train
  PolicyFlags pflags;
  TrainFlags tflags;
  std::string train_path, val_path, model_out, log_path;
  std::uint64_t seed = 0;
  auto* tr = app.add_subcommand("train", "Train the frame-selection policy");
  tr->add_option("--train", train_path, "Training dataset")->required()->check(CLI::ExistingFile);
  tr->add_option("--val", val_path, "Validation dataset")->check(CLI::ExistingFile);
  tr->add_option("--out", model_out, "Checkpoint of the best-validation model")->required();
  tr->add_option("--log", log_path, "Per-epoch JSON-lines log (appended)");
  tr->add_option("--seed", seed, "Root seed");
  pflags.add(tr);
  tflags.add(tr);

  // eval
  std::string model_path, eval_data, report_out = "-";
  std::vector<double> thresholds = kDefaultIouThresholds;
  int eval_steps = 0;
  auto* ev = app.add_subcommand("eval", "Evaluate a trained policy (confidence-ranked mAP)");
  ev->add_option("--model", model_path, "Checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", eval_data, "Dataset")->required()->check(CLI::ExistingFile);
  ev->add_option("--thresholds", thresholds, "IoU thresholds")->delimiter(',');
  ev->add_option("--steps", eval_steps, "Override the policy step count");
  ev->add_option("--out", report_out, "Report file (JSON), '-' for stdout");

  // detect
  std::string detect_out = "-";
  auto* de = app.add_subcommand("detect", "Run inference and dump detections as JSON");
  de->add_option("--model", model_path, "Checkpoint")->required()->check(CLI::ExistingFile);
  de->add_option("--data", eval_data, "Dataset")->required()->check(CLI::ExistingFile);
  de->add_option("--steps", eval_steps, "Override the policy step count");
  de->add_option("--out", detect_out, "Output file, '-' for stdout");

  // sweep
  std::vector<int> sweep_steps = {3, 6, 12};
  std::string sweep_out = "-";
  bool sweep_eval_only = false;
  auto* sw = app.add_subcommand("sweep", "Accuracy and time versus policy steps");
  sw->add_option("--train", train_path, "Training dataset")->check(CLI::ExistingFile);
  sw->add_option("--val", val_path, "Validation dataset")->required()->check(CLI::ExistingFile);
  sw->add_option("--model", model_path, "Evaluate this checkpoint instead of training per T");
  sw->add_option("--step-values", sweep_steps, "Ascending step counts")->delimiter(',');
  sw->add_option("--seed", seed, "Root seed");
  sw->add_option("--out", sweep_out, "Table file (TSV), '-' for stdout");
  pflags.add(sw);
  tflags.add(sw);

  // budget
  BudgetCostModel cost;
  int budget_steps = 6;
  bool regression = false;
  auto* bu = app.add_subcommand("budget", "Estimated detection time per video from component costs");
  bu->add_option("--steps", budget_steps, "Policy steps T")->check(CLI::PositiveNumber);
  bu->add_flag("--regression", regression, "Include boundary regression");
  bu->add_option("--feature-ms", cost.feature_ms, "Feature cost per frame (ms)");
  bu->add_option("--diff-ms", cost.diff_ms, "Frame difference cost per frame (ms)");
  bu->add_option("--recurrent-ms", cost.recurrent_ms, "Recurrent step cost (ms)");
  bu->add_option("--regression-ms", cost.regression_ms, "Regression cost (ms)");
  bu->add_option("--neighborhood", cost.neighborhood, "Frames per neighborhood");
  bu->add_option("--kappa", cost.kappa, "Frames sampled for regression");

  // trace
  std::string trace_video;
  bool trace_stochastic = false;
  std::string trace_out = "-";
  auto* tc = app.add_subcommand("trace", "Per-step listing of one policy rollout");
  tc->add_option("--model", model_path, "Checkpoint")->required()->check(CLI::ExistingFile);
  tc->add_option("--data", eval_data, "Dataset")->required()->check(CLI::ExistingFile);
  tc->add_option("--video", trace_video, "Video id or index (default: first)");
  tc->add_option("--steps", eval_steps, "Override the policy step count");
  tc->add_flag("--stochastic", trace_stochastic, "Sample actions as in training");
  tc->add_option("--seed", seed, "Seed for --stochastic");
  tc->add_option("--out", trace_out, "Output file, '-' for stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      write_dataset(data_out, generate_dataset(spec, data_seed));
    } else if (tr->parsed()) {
      const auto train_set = read_dataset(train_path);
      const Dataset val_set = val_path.empty() ? Dataset{} : read_dataset(val_path);
      auto tcfg = tflags.make(seed);
      tcfg.log_path = log_path;
      tcfg.checkpoint_path = model_out;
      const auto pcfg = pflags.make(train_set);
      const auto result = train(train_set, val_set, pcfg, tcfg);
      if (result.history.empty()) save_policy(model_out, result.net, pcfg);
      if (result.diverged) std::cerr << result.message << '\n';
      std::printf("best epoch %d val mAP@%.2f %.4f\n", result.best_epoch, tcfg.select_threshold,
                  std::max(0.0, result.best_val_map));
      return result.diverged ? 2 : 0;
    } else if (ev->parsed()) {
      auto lp = load_policy(model_path);
      if (eval_steps > 0) lp.cfg.steps = eval_steps;
      const auto data = read_dataset(eval_data);
      write_text(report_out, to_json(evaluate(lp.net, lp.cfg, data, thresholds)));
    } else if (de->parsed()) {
      auto lp = load_policy(model_path);
      if (eval_steps > 0) lp.cfg.steps = eval_steps;
      const auto data = read_dataset(eval_data);
      write_text(detect_out, detections_to_json(data, detect_all(lp.net, lp.cfg, data)));
    } else if (sw->parsed()) {
      const auto val_set = read_dataset(val_path);
      if (!model_path.empty()) {
        const auto lp = load_policy(model_path);
        const auto rows = steps_sweep({}, val_set, lp.cfg, tflags.make(seed), sweep_steps, false, &lp.net);
        write_text(sweep_out, sweep_table(rows));
      } else {
        if (train_path.empty()) throw std::invalid_argument("sweep: --train or --model is required");
        const auto train_set = read_dataset(train_path);
        const auto rows = steps_sweep(train_set, val_set, pflags.make(train_set), tflags.make(seed),
                                      sweep_steps, true);
        write_text(sweep_out, sweep_table(rows));
      }
    } else if (bu->parsed()) {
      std::printf("%s\n", format_budget(estimate_budget(cost, budget_steps, regression)).c_str());
    } else if (tc->parsed()) {
      auto lp = load_policy(model_path);
      if (eval_steps > 0) lp.cfg.steps = eval_steps;
      const auto data = read_dataset(eval_data);
      if (data.empty()) throw std::invalid_argument("trace: empty dataset");
      std::size_t idx = 0;
      if (!trace_video.empty()) {
        const auto it = std::find_if(data.begin(), data.end(),
                                     [&](const auto& lv) { return lv.video.id == trace_video; });
        if (it != data.end()) {
          idx = static_cast<std::size_t>(it - data.begin());
        } else {
          idx = std::stoul(trace_video);
          if (idx >= data.size()) throw std::invalid_argument("trace: no such video " + trace_video);
        }
      }
      Rng rng(derive_seed(seed, {tag(Stream::rollout)}));
      const auto& lv = data[idx];
      const auto traj = rollout(lp.net, lp.cfg, lv.video, &lv.gts, rng,
                                trace_stochastic ? Selection::stochastic : Selection::deterministic,
                                LossConfig{});
      write_text(trace_out, format_trace(traj, lv.video, &lv.gts));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
