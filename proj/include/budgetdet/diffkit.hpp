#pragma once

// Minimal reverse-mode kit for the policy network: flat parameter store,
// dense layers, a stacked LSTM with backpropagation through time, the
// location/class/next-frame heads and Adam.

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "budgetdet/rng.hpp"

namespace budgetdet {

struct Array {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

class ParamSet {
 public:
  std::size_t add(std::string name, std::size_t rows, std::size_t cols);

  std::size_t size() const { return arrays_.size(); }
  Array& operator[](std::size_t i) { return arrays_[i]; }
  const Array& operator[](std::size_t i) const { return arrays_[i]; }
  std::optional<std::size_t> find(std::string_view name) const;

  std::size_t num_values() const;
  bool all_finite() const;
  bool operator==(const ParamSet&) const;

  auto begin() const { return arrays_.begin(); }
  auto end() const { return arrays_.end(); }

 private:
  std::vector<Array> arrays_;
};

/// Gradient buffers shape-matched to a ParamSet. One tape per worker;
/// tapes merge by summation.
class GradTape {
 public:
  GradTape() = default;
  explicit GradTape(const ParamSet& params);

  std::vector<double>& operator[](std::size_t i) { return grads_[i]; }
  const std::vector<double>& operator[](std::size_t i) const { return grads_[i]; }
  std::size_t size() const { return grads_.size(); }

  void zero();
  void accumulate(const GradTape& other);
  void scale(double s);
  double norm() const;
  bool all_finite() const;
  /// Rescales to `max_norm` when the global norm exceeds it; returns the
  /// norm before clipping.
  double clip(double max_norm);

  long steps = 0;

 private:
  std::vector<std::vector<double>> grads_;
};

double sigmoid(double x);
std::vector<double> softmax(std::span<const double> logits);

struct LogDensity {
  double value = 0.0;
  double d_mean = 0.0;
};

/// log N(x; mean, variance) and its derivative with respect to the mean.
/// Throws std::invalid_argument for variance <= 0.
LogDensity gaussian_logpdf(double x, double mean, double variance);

struct SoftmaxXent {
  double loss = 0.0;
  std::vector<double> d_logits;  // softmax - onehot
};

/// Cross-entropy of softmax(logits) against `label`, probabilities floored
/// at 1e-12 in the loss value.
SoftmaxXent softmax_cross_entropy(std::span<const double> logits, int label);

// --- dense layers ---------------------------------------------------------

struct DenseSpec {
  std::size_t weight = 0;  // out x in
  std::size_t bias = 0;    // out x 1
  int in = 0;
  int out = 0;
};

DenseSpec add_dense(ParamSet& params, const std::string& prefix, int in, int out);
void init_dense(ParamSet& params, const DenseSpec& spec, Rng& rng);
void dense_forward(const ParamSet& params, const DenseSpec& spec, std::span<const double> x,
                   std::span<double> y);
/// Accumulates dW, db into `tape` and, if `dx` is non-empty, writes dL/dx.
void dense_backward(const ParamSet& params, const DenseSpec& spec, std::span<const double> x,
                    std::span<const double> dy, GradTape& tape, std::span<double> dx);

// --- stacked LSTM ---------------------------------------------------------

struct LstmSpec {
  int input_dim = 0;
  int hidden = 0;
  int layers = 0;
  std::vector<std::size_t> weight;  // per layer: 4H x (in_l + H), gate order i, f, g, o
  std::vector<std::size_t> bias;    // per layer: 4H x 1
};

LstmSpec add_lstm(ParamSet& params, const std::string& prefix, int input_dim, int hidden,
                  int layers);
/// Uniform(+-1/sqrt(fan_in)) weights, zero biases except forget gate = 1.
void init_lstm(ParamSet& params, const LstmSpec& spec, Rng& rng);

struct LstmState {
  std::vector<std::vector<double>> h;  // per layer
  std::vector<std::vector<double>> c;

  std::span<const double> top() const { return h.back(); }
};

LstmState zero_state(const LstmSpec& spec);

struct LstmLayerCache {
  std::vector<double> xh;  // [input; h_prev]
  std::vector<double> i, f, g, o;
  std::vector<double> c_prev, tanh_c;
};

struct LstmStepCache {
  std::vector<LstmLayerCache> layers;
};

/// One time step through every layer. Fills `cache` when non-null.
/// Throws on dimension mismatch or non-finite input.
LstmState lstm_step(const ParamSet& params, const LstmSpec& spec, std::span<const double> x,
                    const LstmState& prev, LstmStepCache* cache);

struct LstmTrace {
  std::vector<std::vector<double>> outputs;  // top-layer hidden state per step
  std::vector<LstmStepCache> caches;
  LstmState final_state;
};

LstmTrace lstm_forward(const ParamSet& params, const LstmSpec& spec,
                       std::span<const std::vector<double>> inputs, const LstmState& init);

/// Backpropagation through time. `d_outputs[t]` is dL/dh_top(t). Parameter
/// gradients accumulate into `tape`; returns dL/dx(t) per step. The initial
/// state is treated as a constant.
std::vector<std::vector<double>> lstm_backward(const ParamSet& params, const LstmSpec& spec,
                                               std::span<const LstmStepCache> caches,
                                               std::span<const std::vector<double>> d_outputs,
                                               GradTape& tape);

// --- policy heads ---------------------------------------------------------

struct PolicyHeads {
  DenseSpec loc;   // -> (center, width) pre-sigmoid
  DenseSpec cls;   // -> K+1 logits
  DenseSpec next;  // -> next-frame mean pre-sigmoid
};

struct HeadOutput {
  std::array<double, 2> loc_pre{};
  double center = 0.5;
  double width = 0.5;
  std::vector<double> logits;
  std::vector<double> probs;
  double next_pre = 0.0;
  double next_mean = 0.5;
};

/// Gradients with respect to the head pre-activations.
struct HeadGrad {
  std::array<double, 2> d_loc_pre{};
  std::vector<double> d_logits;
  double d_next_pre = 0.0;
};

HeadOutput heads_forward(const ParamSet& params, const PolicyHeads& heads,
                         std::span<const double> h);
/// Accumulates head parameter gradients and returns dL/dh.
std::vector<double> heads_backward(const ParamSet& params, const PolicyHeads& heads,
                                   std::span<const double> h, const HeadGrad& grad,
                                   GradTape& tape);

// --- the full policy network ----------------------------------------------

struct NetShape {
  int input_dim = 0;
  int hidden = 64;
  int layers = 2;
  int num_outputs = 4;  // K + 1 classes including background

  bool operator==(const NetShape&) const = default;
};

struct PolicyNet {
  NetShape shape;
  ParamSet params;
  LstmSpec lstm;
  PolicyHeads heads;
};

/// Allocates the layout for `shape` with every value zero.
PolicyNet make_policy_net(const NetShape& shape);
/// Layout plus seeded initialization; reproducible bit-for-bit per seed.
PolicyNet make_policy_net(const NetShape& shape, std::uint64_t seed);

// --- Adam -----------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig cfg;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long t = 0;

  AdamState() = default;
  AdamState(const ParamSet& params, AdamConfig cfg);
};

/// Standard bias-corrected Adam update. Returns false and leaves `params`
/// untouched if any gradient is non-finite.
bool adam_step(ParamSet& params, const GradTape& tape, AdamState& state);

// --- checkpoints ----------------------------------------------------------

using CheckpointHeader = std::map<std::string, std::int64_t>;

/// Little-endian binary container: magic, version, integer header entries
/// and named float64 arrays. Layout documented in docs/checkpoint_format.md.
void save_checkpoint(const std::string& path, const CheckpointHeader& header,
                     const ParamSet& params);

struct Checkpoint {
  CheckpointHeader header;
  ParamSet params;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace budgetdet
