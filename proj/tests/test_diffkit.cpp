#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "budgetdet/diffkit.hpp"
#include "gradcheck.hpp"

using namespace budgetdet;

namespace {

std::vector<double> random_vec(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

void randomize(ParamSet& p, std::mt19937_64& rng, double scale) {
  for (std::size_t i = 0; i < p.size(); ++i) p[i].data = random_vec(rng, p[i].data.size(), scale);
}

struct LstmFixture {
  ParamSet params;
  LstmSpec spec;
  std::vector<std::vector<double>> inputs;
  std::vector<std::vector<double>> proj;  // loss = sum_t proj_t . h_t
  LstmState init;
};

LstmFixture lstm_fixture(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> dim(1, 5), hid(1, 8), lay(1, 2), len(1, 5);
  LstmFixture f;
  const int in = dim(rng), h = hid(rng), layers = lay(rng), steps = len(rng);
  f.spec = add_lstm(f.params, "lstm", in, h, layers);
  randomize(f.params, rng, 0.8);
  for (int t = 0; t < steps; ++t) {
    f.inputs.push_back(random_vec(rng, static_cast<std::size_t>(in)));
    f.proj.push_back(random_vec(rng, static_cast<std::size_t>(h)));
  }
  f.init = zero_state(f.spec);
  for (auto& v : f.init.h) v = random_vec(rng, v.size(), 0.5);
  for (auto& v : f.init.c) v = random_vec(rng, v.size(), 0.5);
  return f;
}

double lstm_loss(const ParamSet& p, const LstmFixture& f, const std::vector<std::vector<double>>& inputs) {
  const auto tr = lstm_forward(p, f.spec, inputs, f.init);
  double s = 0.0;
  for (std::size_t t = 0; t < tr.outputs.size(); ++t) {
    for (std::size_t k = 0; k < tr.outputs[t].size(); ++k) s += f.proj[t][k] * tr.outputs[t][k];
  }
  return s;
}

}  // namespace

TEST_CASE("sigmoid and softmax") {
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(800.0) == 1.0);
  CHECK(sigmoid(-800.0) >= 0.0);
  std::mt19937_64 rng(31);
  for (int i = 0; i < 1000; ++i) {
    auto z = random_vec(rng, 1 + rng() % 7, 30.0);
    const auto p = softmax(z);
    double s = 0.0;
    for (const double x : p) s += x;
    CHECK(std::abs(s - 1.0) <= 1e-9);
    const double c = 100.0 * (static_cast<double>(rng() % 200) / 100.0 - 1.0);
    for (auto& x : z) x += c;
    const auto q = softmax(z);
    for (std::size_t k = 0; k < p.size(); ++k) CHECK(q[k] == doctest::Approx(p[k]).epsilon(1e-12));
  }
  const std::vector<double> big = {1000.0, 1000.0};
  CHECK(softmax(big)[0] == 0.5);
}

TEST_CASE("gaussian log density") {
  const auto at_mean = gaussian_logpdf(0.3, 0.3, 0.18);
  CHECK(at_mean.value == doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi * 0.18)).epsilon(1e-14));
  CHECK(at_mean.d_mean == 0.0);
  CHECK_THROWS_AS(gaussian_logpdf(0.0, 0.0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(gaussian_logpdf(0.0, 0.0, -1.0), std::invalid_argument);

  std::mt19937_64 rng(32);
  std::uniform_real_distribution<double> u(-1.0, 2.0), var(0.01, 1.0);
  for (int i = 0; i < 100; ++i) {
    const double x = u(rng), mu = u(rng), v = var(rng);
    const auto num = oracle::numeric_gradient(
        [&](const std::vector<double>& m) { return gaussian_logpdf(x, m[0], v).value; }, {mu});
    CHECK(oracle::relative_error({gaussian_logpdf(x, mu, v).d_mean}, num) < 1e-4);
  }
}

TEST_CASE("softmax cross-entropy gradient") {
  std::mt19937_64 rng(33);
  for (int i = 0; i < 100; ++i) {
    const auto z = random_vec(rng, 2 + rng() % 6, 3.0);
    const int label = static_cast<int>(rng() % z.size());
    const auto r = softmax_cross_entropy(z, label);
    CHECK(r.loss == doctest::Approx(-std::log(softmax(z)[static_cast<std::size_t>(label)])).epsilon(1e-12));
    const auto num = oracle::numeric_gradient(
        [&](const std::vector<double>& x) { return softmax_cross_entropy(x, label).loss; }, z);
    CHECK(oracle::relative_error(r.d_logits, num) < 1e-4);
  }
  CHECK_THROWS_AS(softmax_cross_entropy(std::vector<double>{0.0, 1.0}, 2), std::invalid_argument);
}

TEST_CASE("dense layer gradient") {
  std::mt19937_64 rng(34);
  for (int i = 0; i < 100; ++i) {
    ParamSet p;
    const int in = 1 + static_cast<int>(rng() % 6), out = 1 + static_cast<int>(rng() % 5);
    const auto spec = add_dense(p, "d", in, out);
    randomize(p, rng, 1.0);
    const auto x = random_vec(rng, static_cast<std::size_t>(in));
    const auto w = random_vec(rng, static_cast<std::size_t>(out));
    auto loss = [&](const ParamSet& q, const std::vector<double>& xx) {
      std::vector<double> y(static_cast<std::size_t>(out));
      dense_forward(q, spec, xx, y);
      double s = 0.0;
      for (std::size_t k = 0; k < y.size(); ++k) s += w[k] * std::tanh(y[k]);
      return s;
    };
    std::vector<double> y(static_cast<std::size_t>(out)), dy(y.size()), dx(x.size());
    dense_forward(p, spec, x, y);
    for (std::size_t k = 0; k < y.size(); ++k) dy[k] = w[k] * (1.0 - std::tanh(y[k]) * std::tanh(y[k]));
    GradTape tape(p);
    dense_backward(p, spec, x, dy, tape, dx);
    CHECK(gradcheck::param_check(p, [&](const ParamSet& q) { return loss(q, x); }, tape) < 1e-4);
    const auto ndx = oracle::numeric_gradient([&](const std::vector<double>& xx) { return loss(p, xx); }, x);
    CHECK(oracle::relative_error(dx, ndx) < 1e-4);
  }
}

TEST_CASE("lstm forward: zero weights give zero states") {
  ParamSet p;
  const auto spec = add_lstm(p, "lstm", 3, 4, 2);
  const std::vector<std::vector<double>> xs = {{1.0, -2.0, 0.5}, {0.3, 0.3, 0.3}, {-1.0, 0.0, 2.0}};
  const auto tr = lstm_forward(p, spec, xs, zero_state(spec));
  for (const auto& h : tr.outputs) {
    for (const double v : h) CHECK(v == 0.0);
  }
}

TEST_CASE("lstm forward: hand-unrolled two-unit cell") {
  ParamSet p;
  const auto spec = add_lstm(p, "lstm", 1, 2, 1);
  auto& w = p[spec.weight[0]];  // 8 x 3: [x, h0, h1]
  auto& b = p[spec.bias[0]].data;
  for (std::size_t r = 0; r < 8; ++r) {
    w.at(r, 0) = 0.1 * static_cast<double>(r + 1);
    w.at(r, 1) = -0.05 * static_cast<double>(r);
    w.at(r, 2) = 0.02;
    b[r] = 0.01 * static_cast<double>(r) - 0.03;
  }
  LstmState s0 = zero_state(spec);
  s0.h[0] = {0.2, -0.1};
  s0.c[0] = {0.5, -0.4};
  const double x = 0.7;
  const auto s1 = lstm_step(p, spec, std::vector<double>{x}, s0, nullptr);

  auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  for (int k = 0; k < 2; ++k) {
    auto pre = [&](int gate) {
      const int r = gate * 2 + k;
      return w.at(r, 0) * x + w.at(r, 1) * 0.2 + w.at(r, 2) * -0.1 + b[static_cast<std::size_t>(r)];
    };
    const double i = sig(pre(0)), f = sig(pre(1)), g = std::tanh(pre(2)), o = sig(pre(3));
    const double c = f * s0.c[0][static_cast<std::size_t>(k)] + i * g;
    CHECK(s1.c[0][static_cast<std::size_t>(k)] == doctest::Approx(c).epsilon(1e-14));
    CHECK(s1.h[0][static_cast<std::size_t>(k)] == doctest::Approx(o * std::tanh(c)).epsilon(1e-14));
  }
}

TEST_CASE("lstm forward: a closed forget gate erases the past") {
  std::mt19937_64 rng(35);
  ParamSet p;
  const auto spec = add_lstm(p, "lstm", 2, 3, 1);
  auto& w = p[spec.weight[0]];
  for (std::size_t r = 0; r < w.rows; ++r) {
    for (std::size_t c = 0; c < 2; ++c) w.at(r, c) = std::uniform_real_distribution<double>(-1, 1)(rng);
  }
  auto& b = p[spec.bias[0]].data;
  for (std::size_t k = 3; k < 6; ++k) b[k] = -60.0;
  const std::vector<double> x = {0.4, -0.9};
  const std::vector<std::vector<double>> a = {{1.0, 2.0}, x}, c = {{-3.0, 0.5}, x};
  const auto ta = lstm_forward(p, spec, a, zero_state(spec));
  const auto tc = lstm_forward(p, spec, c, zero_state(spec));
  CHECK(ta.outputs[0] != tc.outputs[0]);
  for (std::size_t k = 0; k < 3; ++k) CHECK(ta.outputs[1][k] == doctest::Approx(tc.outputs[1][k]).epsilon(1e-12));
}

TEST_CASE("lstm forward rejects bad input") {
  ParamSet p;
  const auto spec = add_lstm(p, "lstm", 2, 2, 1);
  CHECK_THROWS_AS(lstm_step(p, spec, std::vector<double>{1.0}, zero_state(spec), nullptr),
                  std::invalid_argument);
  CHECK_THROWS_AS(lstm_step(p, spec, std::vector<double>{1.0, NAN}, zero_state(spec), nullptr),
                  std::invalid_argument);
  const auto tr = lstm_forward(p, spec, std::vector<std::vector<double>>{{1.0, 2.0}}, zero_state(spec));
  GradTape tape(p);
  CHECK_THROWS_AS(lstm_backward(p, spec, tr.caches, std::vector<std::vector<double>>{}, tape),
                  std::invalid_argument);
}

TEST_CASE("lstm forward is deterministic") {
  const auto f = lstm_fixture(36);
  const auto a = lstm_forward(f.params, f.spec, f.inputs, f.init);
  const auto b = lstm_forward(f.params, f.spec, f.inputs, f.init);
  CHECK(a.outputs == b.outputs);
}

TEST_CASE("lstm backward matches central differences over 100 random instances") {
  double worst = 0.0, worst_dx = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto f = lstm_fixture(1000 + seed);
    const auto tr = lstm_forward(f.params, f.spec, f.inputs, f.init);
    GradTape tape(f.params);
    const auto dx = lstm_backward(f.params, f.spec, tr.caches, f.proj, tape);
    const double err = gradcheck::param_check(
        f.params, [&](const ParamSet& p) { return lstm_loss(p, f, f.inputs); }, tape);
    worst = std::max(worst, err);

    std::vector<double> flat_x, flat_dx;
    for (std::size_t t = 0; t < f.inputs.size(); ++t) {
      flat_x.insert(flat_x.end(), f.inputs[t].begin(), f.inputs[t].end());
      flat_dx.insert(flat_dx.end(), dx[t].begin(), dx[t].end());
    }
    const auto num = oracle::numeric_gradient(
        [&](const std::vector<double>& x) {
          auto in = f.inputs;
          std::size_t k = 0;
          for (auto& row : in) {
            for (auto& v : row) v = x[k++];
          }
          return lstm_loss(f.params, f, in);
        },
        flat_x);
    worst_dx = std::max(worst_dx, oracle::relative_error(flat_dx, num));
  }
  CHECK(worst < 1e-4);
  CHECK(worst_dx < 1e-4);
}

TEST_CASE("lstm backward: zero seeds and linearity") {
  const auto f = lstm_fixture(37);
  const auto tr = lstm_forward(f.params, f.spec, f.inputs, f.init);
  std::vector<std::vector<double>> zeros(f.proj.size(), std::vector<double>(f.proj[0].size(), 0.0));
  GradTape zt(f.params);
  lstm_backward(f.params, f.spec, tr.caches, zeros, zt);
  CHECK(zt.norm() == 0.0);

  // gradient of sum_t h_t equals the sum of the per-step gradients
  std::vector<std::vector<double>> ones(f.proj.size(), std::vector<double>(f.proj[0].size(), 1.0));
  GradTape all(f.params);
  lstm_backward(f.params, f.spec, tr.caches, ones, all);
  GradTape summed(f.params);
  for (std::size_t t = 0; t < ones.size(); ++t) {
    auto seed = zeros;
    seed[t] = ones[t];
    GradTape one(f.params);
    lstm_backward(f.params, f.spec, tr.caches, seed, one);
    summed.accumulate(one);
  }
  const auto a = gradcheck::flatten(all), s = gradcheck::flatten(summed);
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k] == doctest::Approx(s[k]).epsilon(1e-12));
}

TEST_CASE("heads forward examples") {
  const auto net = make_policy_net({5, 4, 1, 4});
  const std::vector<double> h(4, 0.0);
  const auto out = heads_forward(net.params, net.heads, h);
  CHECK(out.center == 0.5);
  CHECK(out.width == 0.5);
  CHECK(out.next_mean == 0.5);
  for (const double p : out.probs) CHECK(p == doctest::Approx(0.25));
}

TEST_CASE("heads backward matches central differences") {
  std::mt19937_64 rng(38);
  for (int i = 0; i < 100; ++i) {
    const int hidden = 1 + static_cast<int>(rng() % 8), outputs = 2 + static_cast<int>(rng() % 4);
    auto net = make_policy_net({3, hidden, 1, outputs});
    randomize(net.params, rng, 1.0);
    const auto h = random_vec(rng, static_cast<std::size_t>(hidden));
    const int label = static_cast<int>(rng() % static_cast<unsigned>(outputs));
    const double tc = 0.3, tw = 0.6, tx = 0.8;
    auto loss = [&](const ParamSet& p, const std::vector<double>& hh) {
      const auto o = heads_forward(p, net.heads, hh);
      return (o.center - tc) * (o.center - tc) + (o.width - tw) * (o.width - tw) +
             (o.next_mean - tx) * (o.next_mean - tx) + softmax_cross_entropy(o.logits, label).loss;
    };
    const auto o = heads_forward(net.params, net.heads, h);
    HeadGrad g;
    g.d_loc_pre = {2 * (o.center - tc) * o.center * (1 - o.center), 2 * (o.width - tw) * o.width * (1 - o.width)};
    g.d_logits = softmax_cross_entropy(o.logits, label).d_logits;
    g.d_next_pre = 2 * (o.next_mean - tx) * o.next_mean * (1 - o.next_mean);
    GradTape tape(net.params);
    const auto dh = heads_backward(net.params, net.heads, h, g, tape);
    CHECK(gradcheck::param_check(net.params, [&](const ParamSet& p) { return loss(p, h); }, tape) < 1e-4);
    const auto ndh = oracle::numeric_gradient([&](const std::vector<double>& x) { return loss(net.params, x); }, h);
    CHECK(oracle::relative_error(dh, ndh) < 1e-4);
  }
}

TEST_CASE("seeded initialization") {
  const NetShape shape{7, 6, 2, 4};
  const auto a = make_policy_net(shape, 5);
  const auto b = make_policy_net(shape, 5);
  const auto c = make_policy_net(shape, 6);
  CHECK(a.params == b.params);
  CHECK_FALSE(a.params == c.params);
  CHECK(a.params.all_finite());
  for (int l = 0; l < 2; ++l) {
    const auto& w = a.params[a.lstm.weight[static_cast<std::size_t>(l)]];
    const double r = 1.0 / std::sqrt(static_cast<double>(w.cols));
    for (const double v : w.data) CHECK(std::abs(v) <= r);
    const auto& bias = a.params[a.lstm.bias[static_cast<std::size_t>(l)]].data;
    for (std::size_t k = 0; k < bias.size(); ++k) CHECK(bias[k] == (k >= 6 && k < 12 ? 1.0 : 0.0));
  }
  const auto& hw = a.params[a.heads.cls.weight];
  for (const double v : hw.data) CHECK(std::abs(v) <= 1.0 / std::sqrt(6.0));
}

TEST_CASE("grad tape arithmetic") {
  ParamSet p;
  p.add("a", 1, 2);
  p.add("b", 2, 1);
  GradTape t(p);
  t[0] = {3.0, 0.0};
  t[1] = {0.0, 4.0};
  CHECK(t.norm() == 5.0);
  GradTape u(p);
  u[0] = {1.0, 1.0};
  t.accumulate(u);
  CHECK(t[0][0] == 4.0);
  t.scale(0.5);
  CHECK(t[0][0] == 2.0);
  GradTape c(p);
  c[0] = {6.0, 0.0};
  c[1] = {0.0, 8.0};
  CHECK(c.clip(5.0) == doctest::Approx(10.0));
  CHECK(c.norm() == doctest::Approx(5.0));
  CHECK(c.clip(5.0) == doctest::Approx(5.0));
  t.zero();
  CHECK(t.norm() == 0.0);
  CHECK_THROWS(p.add("a", 1, 1));
}

TEST_CASE("adam") {
  ParamSet p;
  p.add("x", 1, 3);
  p[0].data = {0.5, -1.0, 2.0};
  const auto before = p;
  AdamState st(p, {});
  GradTape g(p);
  CHECK(adam_step(p, g, st));
  CHECK(p == before);

  // first step moves each coordinate by about lr * sign(g)
  g[0] = {3.0, -0.2, 1e-3};
  AdamState s1(p, {});
  CHECK(adam_step(p, g, s1));
  CHECK(p[0].data[0] == doctest::Approx(0.5 - 1e-3).epsilon(1e-6));
  CHECK(p[0].data[1] == doctest::Approx(-1.0 + 1e-3).epsilon(1e-6));
  CHECK(p[0].data[2] == doctest::Approx(2.0 - 1e-3).epsilon(1e-4));

  const auto snapshot = p;
  g[0][1] = NAN;
  CHECK_FALSE(adam_step(p, g, s1));
  CHECK(p == snapshot);
}

TEST_CASE("adam minimizes a scalar quadratic") {
  ParamSet p;
  p.add("x", 1, 1);
  p[0].data = {1.0};
  AdamState st(p, {1e-2, 0.9, 0.999, 1e-8});
  GradTape g(p);
  for (int t = 0; t < 500; ++t) {
    g[0][0] = 2.0 * (p[0].data[0] - 0.25);
    adam_step(p, g, st);
  }
  CHECK(std::abs(p[0].data[0] - 0.25) < 1e-3);
}

TEST_CASE("checkpoint round trip") {
  const auto net = make_policy_net({9, 5, 2, 3}, 77);
  const auto dir = std::filesystem::temp_directory_path() / "budgetdet_test_ckpt";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "net.ckpt").string();
  const CheckpointHeader header = {{"hidden", 5}, {"layers", 2}, {"negative", -7}};
  save_checkpoint(path, header, net.params);
  const auto ck = load_checkpoint(path);
  CHECK(ck.header == header);
  CHECK(ck.params == net.params);
  std::vector<std::string> names;
  for (const auto& a : ck.params) names.push_back(a.name);
  CHECK(names.front() == "lstm.l0.weight");

  {
    std::ofstream bad(dir / "bad.ckpt", std::ios::binary);
    bad << "NOTACKPT";
  }
  CHECK_THROWS(load_checkpoint((dir / "bad.ckpt").string()));
  std::filesystem::resize_file(path, 40);
  CHECK_THROWS(load_checkpoint(path));
  CHECK_THROWS(load_checkpoint((dir / "missing.ckpt").string()));
  std::filesystem::remove_all(dir);
}
