#include "budgetdet/diffkit.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace budgetdet {

std::size_t ParamSet::add(std::string name, std::size_t rows, std::size_t cols) {
  if (find(name)) {
    throw std::invalid_argument("ParamSet: duplicate array name " + name);
  }
  arrays_.push_back(Array{std::move(name), rows, cols, std::vector<double>(rows * cols, 0.0)});
  return arrays_.size() - 1;
}

std::optional<std::size_t> ParamSet::find(std::string_view name) const {
  for (std::size_t i = 0; i < arrays_.size(); ++i) {
    if (arrays_[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t ParamSet::num_values() const {
  std::size_t n = 0;
  for (const auto& a : arrays_) n += a.data.size();
  return n;
}

bool ParamSet::all_finite() const {
  for (const auto& a : arrays_) {
    for (const double x : a.data) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

bool ParamSet::operator==(const ParamSet& other) const {
  if (arrays_.size() != other.arrays_.size()) return false;
  for (std::size_t i = 0; i < arrays_.size(); ++i) {
    const auto& a = arrays_[i];
    const auto& b = other.arrays_[i];
    if (a.name != b.name || a.rows != b.rows || a.cols != b.cols || a.data != b.data) return false;
  }
  return true;
}

GradTape::GradTape(const ParamSet& params) {
  grads_.reserve(params.size());
  for (const auto& a : params) grads_.emplace_back(a.data.size(), 0.0);
}

void GradTape::zero() {
  for (auto& g : grads_) std::fill(g.begin(), g.end(), 0.0);
  steps = 0;
}

void GradTape::accumulate(const GradTape& other) {
  if (other.grads_.size() != grads_.size()) {
    throw std::invalid_argument("GradTape::accumulate: shape mismatch");
  }
  for (std::size_t i = 0; i < grads_.size(); ++i) {
    auto& g = grads_[i];
    const auto& o = other.grads_[i];
    for (std::size_t j = 0; j < g.size(); ++j) g[j] += o[j];
  }
  steps += other.steps;
}

void GradTape::scale(double s) {
  for (auto& g : grads_) {
    for (auto& x : g) x *= s;
  }
}

double GradTape::norm() const {
  double ss = 0.0;
  for (const auto& g : grads_) {
    for (const double x : g) ss += x * x;
  }
  return std::sqrt(ss);
}

bool GradTape::all_finite() const {
  for (const auto& g : grads_) {
    for (const double x : g) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

double GradTape::clip(double max_norm) {
  const double n = norm();
  if (max_norm > 0.0 && n > max_norm) scale(max_norm / n);
  return n;
}

double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = std::exp(logits[k] - mx);
    z += p[k];
  }
  for (auto& x : p) x /= z;
  return p;
}

LogDensity gaussian_logpdf(double x, double mean, double variance) {
  if (!(variance > 0.0)) {
    throw std::invalid_argument("gaussian_logpdf: variance must be positive");
  }
  const double d = x - mean;
  return {-0.5 * std::log(2.0 * std::numbers::pi * variance) - 0.5 * d * d / variance,
          d / variance};
}

SoftmaxXent softmax_cross_entropy(std::span<const double> logits, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
    throw std::invalid_argument("softmax_cross_entropy: label out of range");
  }
  SoftmaxXent out;
  out.d_logits = softmax(logits);
  const auto k = static_cast<std::size_t>(label);
  out.loss = -std::log(std::max(out.d_logits[k], 1e-12));
  out.d_logits[k] -= 1.0;
  return out;
}

// --- dense ------------------------------------------------------------------

DenseSpec add_dense(ParamSet& params, const std::string& prefix, int in, int out) {
  DenseSpec s;
  s.in = in;
  s.out = out;
  s.weight = params.add(prefix + ".weight", static_cast<std::size_t>(out), static_cast<std::size_t>(in));
  s.bias = params.add(prefix + ".bias", static_cast<std::size_t>(out), 1);
  return s;
}

void init_dense(ParamSet& params, const DenseSpec& spec, Rng& rng) {
  const double r = 1.0 / std::sqrt(static_cast<double>(spec.in));
  std::uniform_real_distribution<double> u(-r, r);
  for (auto& w : params[spec.weight].data) w = u(rng);
  std::fill(params[spec.bias].data.begin(), params[spec.bias].data.end(), 0.0);
}

void dense_forward(const ParamSet& params, const DenseSpec& spec, std::span<const double> x,
                   std::span<double> y) {
  if (x.size() != static_cast<std::size_t>(spec.in) || y.size() != static_cast<std::size_t>(spec.out)) {
    throw std::invalid_argument("dense_forward: dimension mismatch");
  }
  const auto& w = params[spec.weight].data;
  const auto& b = params[spec.bias].data;
  const std::size_t in = x.size();
  for (std::size_t r = 0; r < y.size(); ++r) {
    const double* row = w.data() + r * in;
    double acc = b[r];
    for (std::size_t c = 0; c < in; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
}

void dense_backward(const ParamSet& params, const DenseSpec& spec, std::span<const double> x,
                    std::span<const double> dy, GradTape& tape, std::span<double> dx) {
  const std::size_t in = static_cast<std::size_t>(spec.in);
  const std::size_t out = static_cast<std::size_t>(spec.out);
  if (x.size() != in || dy.size() != out || (!dx.empty() && dx.size() != in)) {
    throw std::invalid_argument("dense_backward: dimension mismatch");
  }
  const auto& w = params[spec.weight].data;
  auto& gw = tape[spec.weight];
  auto& gb = tape[spec.bias];
  if (!dx.empty()) std::fill(dx.begin(), dx.end(), 0.0);
  for (std::size_t r = 0; r < out; ++r) {
    const double d = dy[r];
    if (d == 0.0) continue;
    gb[r] += d;
    double* grow = gw.data() + r * in;
    for (std::size_t c = 0; c < in; ++c) grow[c] += d * x[c];
    if (!dx.empty()) {
      const double* row = w.data() + r * in;
      for (std::size_t c = 0; c < in; ++c) dx[c] += d * row[c];
    }
  }
}

// --- LSTM -------------------------------------------------------------------

LstmSpec add_lstm(ParamSet& params, const std::string& prefix, int input_dim, int hidden,
                  int layers) {
  if (input_dim <= 0 || hidden <= 0 || layers <= 0) {
    throw std::invalid_argument("add_lstm: dimensions must be positive");
  }
  LstmSpec s;
  s.input_dim = input_dim;
  s.hidden = hidden;
  s.layers = layers;
  const auto h = static_cast<std::size_t>(hidden);
  for (int l = 0; l < layers; ++l) {
    const auto in = static_cast<std::size_t>(l == 0 ? input_dim : hidden);
    const std::string p = prefix + ".l" + std::to_string(l);
    s.weight.push_back(params.add(p + ".weight", 4 * h, in + h));
    s.bias.push_back(params.add(p + ".bias", 4 * h, 1));
  }
  return s;
}

void init_lstm(ParamSet& params, const LstmSpec& spec, Rng& rng) {
  const auto h = static_cast<std::size_t>(spec.hidden);
  for (int l = 0; l < spec.layers; ++l) {
    auto& w = params[spec.weight[static_cast<std::size_t>(l)]];
    const double r = 1.0 / std::sqrt(static_cast<double>(w.cols));
    std::uniform_real_distribution<double> u(-r, r);
    for (auto& x : w.data) x = u(rng);
    auto& b = params[spec.bias[static_cast<std::size_t>(l)]].data;
    std::fill(b.begin(), b.end(), 0.0);
    std::fill(b.begin() + static_cast<std::ptrdiff_t>(h), b.begin() + static_cast<std::ptrdiff_t>(2 * h), 1.0);
  }
}

LstmState zero_state(const LstmSpec& spec) {
  LstmState s;
  const auto h = static_cast<std::size_t>(spec.hidden);
  s.h.assign(static_cast<std::size_t>(spec.layers), std::vector<double>(h, 0.0));
  s.c.assign(static_cast<std::size_t>(spec.layers), std::vector<double>(h, 0.0));
  return s;
}

LstmState lstm_step(const ParamSet& params, const LstmSpec& spec, std::span<const double> x,
                    const LstmState& prev, LstmStepCache* cache) {
  if (x.size() != static_cast<std::size_t>(spec.input_dim)) {
    throw std::invalid_argument("lstm_step: input dimension mismatch");
  }
  for (const double v : x) {
    if (!std::isfinite(v)) throw std::invalid_argument("lstm_step: non-finite input");
  }
  const auto H = static_cast<std::size_t>(spec.hidden);
  const auto L = static_cast<std::size_t>(spec.layers);
  if (prev.h.size() != L || prev.c.size() != L) {
    throw std::invalid_argument("lstm_step: state layer count mismatch");
  }
  if (cache) cache->layers.resize(L);

  LstmState next;
  next.h.resize(L);
  next.c.resize(L);
  std::vector<double> layer_in(x.begin(), x.end());
  std::vector<double> z(4 * H);
  for (std::size_t l = 0; l < L; ++l) {
    const auto& w = params[spec.weight[l]];
    const auto& b = params[spec.bias[l]].data;
    std::vector<double> xh(layer_in);
    xh.insert(xh.end(), prev.h[l].begin(), prev.h[l].end());
    const std::size_t cols = xh.size();
    for (std::size_t r = 0; r < 4 * H; ++r) {
      const double* row = w.data.data() + r * cols;
      double acc = b[r];
      for (std::size_t c = 0; c < cols; ++c) acc += row[c] * xh[c];
      z[r] = acc;
    }
    std::vector<double> gi(H), gf(H), gg(H), go(H), c(H), tc(H), h(H);
    for (std::size_t k = 0; k < H; ++k) {
      gi[k] = sigmoid(z[k]);
      gf[k] = sigmoid(z[H + k]);
      gg[k] = std::tanh(z[2 * H + k]);
      go[k] = sigmoid(z[3 * H + k]);
      c[k] = gf[k] * prev.c[l][k] + gi[k] * gg[k];
      tc[k] = std::tanh(c[k]);
      h[k] = go[k] * tc[k];
    }
    if (cache) {
      auto& lc = cache->layers[l];
      lc.xh = std::move(xh);
      lc.i = gi;
      lc.f = gf;
      lc.g = gg;
      lc.o = go;
      lc.c_prev = prev.c[l];
      lc.tanh_c = tc;
    }
    layer_in = h;
    next.h[l] = std::move(h);
    next.c[l] = std::move(c);
  }
  return next;
}

LstmTrace lstm_forward(const ParamSet& params, const LstmSpec& spec,
                       std::span<const std::vector<double>> inputs, const LstmState& init) {
  LstmTrace trace;
  trace.caches.resize(inputs.size());
  LstmState state = init;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    state = lstm_step(params, spec, inputs[t], state, &trace.caches[t]);
    trace.outputs.push_back(state.h.back());
  }
  trace.final_state = std::move(state);
  return trace;
}

std::vector<std::vector<double>> lstm_backward(const ParamSet& params, const LstmSpec& spec,
                                               std::span<const LstmStepCache> caches,
                                               std::span<const std::vector<double>> d_outputs,
                                               GradTape& tape) {
  if (caches.size() != d_outputs.size()) {
    throw std::invalid_argument("lstm_backward: cache and gradient lengths differ");
  }
  const auto H = static_cast<std::size_t>(spec.hidden);
  const auto L = static_cast<std::size_t>(spec.layers);
  const std::size_t T = caches.size();

  std::vector<std::vector<double>> dh_next(L, std::vector<double>(H, 0.0));
  std::vector<std::vector<double>> dc_next(L, std::vector<double>(H, 0.0));
  std::vector<std::vector<double>> dx_out(T);
  std::vector<double> dz(4 * H);

  for (std::size_t t = T; t-- > 0;) {
    if (d_outputs[t].size() != H || caches[t].layers.size() != L) {
      throw std::invalid_argument("lstm_backward: shape mismatch at step " + std::to_string(t));
    }
    std::vector<double> dh_from_above = d_outputs[t];
    for (std::size_t l = L; l-- > 0;) {
      const auto& lc = caches[t].layers[l];
      const auto& w = params[spec.weight[l]];
      auto& gw = tape[spec.weight[l]];
      auto& gb = tape[spec.bias[l]];
      const std::size_t cols = lc.xh.size();
      for (std::size_t k = 0; k < H; ++k) {
        const double dh = dh_from_above[k] + dh_next[l][k];
        const double d_o = dh * lc.tanh_c[k];
        const double dc = dc_next[l][k] + dh * lc.o[k] * (1.0 - lc.tanh_c[k] * lc.tanh_c[k]);
        const double d_i = dc * lc.g[k];
        const double d_g = dc * lc.i[k];
        const double d_f = dc * lc.c_prev[k];
        dc_next[l][k] = dc * lc.f[k];
        dz[k] = d_i * lc.i[k] * (1.0 - lc.i[k]);
        dz[H + k] = d_f * lc.f[k] * (1.0 - lc.f[k]);
        dz[2 * H + k] = d_g * (1.0 - lc.g[k] * lc.g[k]);
        dz[3 * H + k] = d_o * lc.o[k] * (1.0 - lc.o[k]);
      }
      std::vector<double> dxh(cols, 0.0);
      for (std::size_t r = 0; r < 4 * H; ++r) {
        const double d = dz[r];
        if (d == 0.0) continue;
        gb[r] += d;
        const double* row = w.data.data() + r * cols;
        double* grow = gw.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) {
          grow[c] += d * lc.xh[c];
          dxh[c] += d * row[c];
        }
      }
      const std::size_t in = cols - H;
      std::copy(dxh.begin() + static_cast<std::ptrdiff_t>(in), dxh.end(), dh_next[l].begin());
      dh_from_above.assign(dxh.begin(), dxh.begin() + static_cast<std::ptrdiff_t>(in));
    }
    dx_out[t] = std::move(dh_from_above);
  }
  tape.steps += static_cast<long>(T);
  return dx_out;
}

// --- heads ------------------------------------------------------------------

HeadOutput heads_forward(const ParamSet& params, const PolicyHeads& heads,
                         std::span<const double> h) {
  HeadOutput out;
  dense_forward(params, heads.loc, h, out.loc_pre);
  out.center = sigmoid(out.loc_pre[0]);
  out.width = sigmoid(out.loc_pre[1]);
  out.logits.resize(static_cast<std::size_t>(heads.cls.out));
  dense_forward(params, heads.cls, h, out.logits);
  out.probs = softmax(out.logits);
  dense_forward(params, heads.next, h, std::span<double>(&out.next_pre, 1));
  out.next_mean = sigmoid(out.next_pre);
  return out;
}

std::vector<double> heads_backward(const ParamSet& params, const PolicyHeads& heads,
                                   std::span<const double> h, const HeadGrad& grad,
                                   GradTape& tape) {
  std::vector<double> dh(h.size(), 0.0);
  std::vector<double> tmp(h.size());
  auto add = [&](const DenseSpec& spec, std::span<const double> dy) {
    dense_backward(params, spec, h, dy, tape, tmp);
    for (std::size_t k = 0; k < dh.size(); ++k) dh[k] += tmp[k];
  };
  add(heads.loc, grad.d_loc_pre);
  if (!grad.d_logits.empty()) add(heads.cls, grad.d_logits);
  add(heads.next, std::span<const double>(&grad.d_next_pre, 1));
  return dh;
}

// --- network ----------------------------------------------------------------

PolicyNet make_policy_net(const NetShape& shape) {
  if (shape.num_outputs < 2) {
    throw std::invalid_argument("make_policy_net: need background plus at least one class");
  }
  PolicyNet net;
  net.shape = shape;
  net.lstm = add_lstm(net.params, "lstm", shape.input_dim, shape.hidden, shape.layers);
  net.heads.loc = add_dense(net.params, "head.loc", shape.hidden, 2);
  net.heads.cls = add_dense(net.params, "head.cls", shape.hidden, shape.num_outputs);
  net.heads.next = add_dense(net.params, "head.next", shape.hidden, 1);
  return net;
}

PolicyNet make_policy_net(const NetShape& shape, std::uint64_t seed) {
  PolicyNet net = make_policy_net(shape);
  Rng rng(seed);
  init_lstm(net.params, net.lstm, rng);
  init_dense(net.params, net.heads.loc, rng);
  init_dense(net.params, net.heads.cls, rng);
  init_dense(net.params, net.heads.next, rng);
  return net;
}

// --- Adam -------------------------------------------------------------------

AdamState::AdamState(const ParamSet& params, AdamConfig c) : cfg(c) {
  for (const auto& a : params) {
    m.emplace_back(a.data.size(), 0.0);
    v.emplace_back(a.data.size(), 0.0);
  }
}

bool adam_step(ParamSet& params, const GradTape& tape, AdamState& state) {
  if (tape.size() != params.size() || state.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: shape mismatch");
  }
  if (!tape.all_finite()) return false;
  ++state.t;
  const auto& c = state.cfg;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].data;
    const auto& g = tape[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      p[j] -= c.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + c.eps);
    }
  }
  return true;
}

}  // namespace budgetdet
