#include <doctest.h>

#include <cmath>
#include <random>

#include "budgetdet/losses.hpp"
#include "oracles.hpp"

using namespace budgetdet;

namespace {

Detection det(double s, double e, std::vector<double> probs) { return {{s, e}, std::move(probs), 1}; }

}  // namespace

TEST_CASE("classification error examples") {
  const std::vector<double> onehot = {0.0, 1.0, 0.0, 0.0};
  CHECK(cls_error(onehot, onehot) <= 1e-11);
  const std::vector<double> uniform(4, 0.25);
  for (int c = 0; c < 4; ++c) {
    CHECK(cls_error(uniform, c) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }
  const std::vector<double> p = {0.7, 0.2, 0.1};
  CHECK(cls_error(p, std::vector<double>{1.0, 0.0, 0.0}) == doctest::Approx(-std::log(0.7)).epsilon(1e-12));
  CHECK(cls_error(p, 0) == doctest::Approx(0.3567).epsilon(1e-4));
  // the floor keeps a zero probability finite
  CHECK(cls_error(std::vector<double>{1.0, 0.0}, 1) == doctest::Approx(-std::log(1e-12)));
  CHECK_THROWS_AS(cls_error(p, std::vector<double>{1.0, 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(cls_error(p, 3), std::invalid_argument);
}

TEST_CASE("localization error examples") {
  CHECK(loc_error({0.2, 0.4}, {0.2, 0.4}) == 0.0);
  CHECK(loc_error({0.1, 0.5}, {0.0, 0.5}) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(loc_error({0.1, 0.1}, {0.0, 0.1}) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(loc_error({0.1, 0.5}, {0.0, 0.5}, LengthScaling::none) == doctest::Approx(0.05).epsilon(1e-12));
  CHECK_THROWS_AS(loc_error({0.1, 0.2}, {0.3, 0.3}), std::invalid_argument);
}

TEST_CASE("localization error scales inversely with ground-truth length") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double len = 0.05 + 0.4 * u(rng);
    const double off = 0.04 * u(rng);
    const Segment g1{0.1, 0.1 + len}, g2{0.1, 0.1 + 2 * len};
    const double e1 = loc_error({g1.start + off, g1.end}, g1);
    const double e2 = loc_error({g2.start + off, g2.end}, g2);
    CHECK(e1 == doctest::Approx(2.0 * e2).epsilon(1e-9));
  }
}

TEST_CASE("loss gradients match central differences") {
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> p(4);
    double s = 0.0;
    for (auto& x : p) s += (x = u(rng));
    for (auto& x : p) x /= s;
    const int label = static_cast<int>(rng() % 4);
    const auto analytic = cls_error_grad(p, label);
    const auto numeric = oracle::numeric_gradient(
        [&](const std::vector<double>& q) { return cls_error(q, label); }, p);
    CHECK(oracle::relative_error(analytic, numeric) < 1e-5);

    double gs = 0.3 * u(rng), ge = gs + 0.1 + 0.5 * u(rng);
    const Segment g{gs, ge};
    const std::vector<double> m = {gs + 0.2 * (u(rng) - 0.5), ge + 0.2 * (u(rng) - 0.5)};
    const auto lg = loc_error_grad({m[0], m[1]}, g);
    const auto ln = oracle::numeric_gradient(
        [&](const std::vector<double>& x) { return loc_error({x[0], x[1]}, g); }, m);
    CHECK(oracle::relative_error({lg[0], lg[1]}, ln) < 1e-5);
  }
}

TEST_CASE("retrieval error") {
  GroundTruthSet g{{{{0.1, 0.3}, 1}, {{0.6, 0.9}, 2}}};
  const std::vector<Detection> perfect = {det(0.1, 0.3, {0.0, 1.0, 0.0}), det(0.6, 0.9, {0.0, 0.0, 1.0})};
  CHECK(retrieval_error(perfect, g, 0.5) == 0.0);
  CHECK(retrieval_error({}, g, 0.5) == 1.0);

  std::mt19937_64 rng(23);
  for (int i = 0; i < 2000; ++i) {
    const auto gts = oracle::random_gts(rng, 4, 2);
    if (gts.empty()) continue;
    const auto dets = oracle::random_detections(rng, 6, 2);
    const double ref = oracle::mean_ap({dets}, {gts}, 0.5, false);
    const double expected = dets.empty() ? 1.0 : 1.0 - ref;
    CHECK(std::abs(retrieval_error(dets, gts, 0.5) - expected) <= 1e-12);
  }
}

TEST_CASE("total loss examples") {
  const LossConfig cfg;
  GroundTruthSet g{{{{0.1, 0.3}, 1}, {{0.6, 0.9}, 2}}};

  const auto empty = total_loss({}, g, cfg);
  CHECK(empty.cls == 0.0);
  CHECK(empty.loc == 0.0);
  CHECK(empty.ret == 1.0);
  CHECK(empty.total == doctest::Approx(0.5));

  const std::vector<Detection> perfect = {det(0.1, 0.3, {0.0, 1.0, 0.0}), det(0.6, 0.9, {0.0, 0.0, 1.0})};
  CHECK(total_loss(perfect, g, cfg).total <= 1e-11);

  // one good-class but shifted match, one wrong-class match, one unmatched
  const std::vector<Detection> mixed = {det(0.15, 0.3, {0.1, 0.7, 0.2}),
                                        det(0.5, 0.8, {0.2, 0.5, 0.3}),
                                        det(0.4, 0.5, {0.0, 0.0, 1.0})};
  const double cls = -std::log(0.7) - std::log(0.3);
  const double loc = (1.0 / 0.2) * 0.5 * 0.05 + (1.0 / 0.3) * 0.5 * (0.1 + 0.1);
  const double ret = 1.0 - oracle::mean_ap({mixed}, {g}, 0.5, false);
  const auto b = total_loss(mixed, g, cfg);
  CHECK(b.cls == doctest::Approx(cls).epsilon(1e-12));
  CHECK(b.loc == doctest::Approx(loc).epsilon(1e-12));
  CHECK(b.ret == doctest::Approx(ret).epsilon(1e-12));
  CHECK(b.total == doctest::Approx(cls + loc + 0.5 * ret).epsilon(1e-12));

  LossConfig weighted;
  weighted.weights = {2.0, 0.5, 0.25};
  const auto w = total_loss(mixed, g, weighted);
  CHECK(w.total == doctest::Approx(2.0 * cls + 0.5 * loc + 0.25 * ret).epsilon(1e-12));
}

TEST_CASE("background detections do not change the loss") {
  const LossConfig cfg;
  GroundTruthSet g{{{{0.1, 0.3}, 1}}};
  std::vector<Detection> dets = {det(0.1, 0.25, {0.1, 0.8, 0.1})};
  const double before = total_loss(dets, g, cfg).total;
  dets.push_back(det(0.7, 0.9, {0.9, 0.05, 0.05}));  // unmatched background
  CHECK(total_loss(dets, g, cfg).total == before);
  dets.push_back(det(0.1, 0.3, {0.5, 0.4, 0.1}));  // matched, but background argmax
  CHECK(total_loss(dets, g, cfg).total == before);
}

TEST_CASE("total loss invariants on random sets") {
  const LossConfig cfg;
  std::mt19937_64 rng(24);
  for (int i = 0; i < 3000; ++i) {
    const auto g = oracle::random_gts(rng, 4, 3);
    bool zero_len = false;
    for (const auto& it : g.items) zero_len |= it.segment.length() <= 0.0;
    if (zero_len) continue;
    const auto dets = oracle::random_detections(rng, 6, 3);
    const auto b = total_loss(dets, g, cfg);
    CHECK(b.total >= 0.0);
    CHECK(b.ret >= 0.0);
    CHECK(b.ret <= 1.0);
    CHECK(b.total == doctest::Approx(b.cls + b.loc + 0.5 * b.ret).epsilon(1e-9));
    if (g.empty()) CHECK(b.ret == 0.0);
  }
}
