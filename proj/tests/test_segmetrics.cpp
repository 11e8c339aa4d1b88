#include <doctest.h>

#include <random>

#include "budgetdet/segmetrics.hpp"
#include "oracles.hpp"

using namespace budgetdet;

namespace {

Detection det(double s, double e, std::vector<double> probs, int step = 1) {
  return {{s, e}, std::move(probs), step};
}

GroundTruthSet gts_of(std::initializer_list<GroundTruthSegment> items) { return {items}; }

}  // namespace

TEST_CASE("iou examples") {
  CHECK(iou({0.2, 0.5}, {0.2, 0.5}) == doctest::Approx(1.0));
  CHECK(iou({0.0, 0.2}, {0.5, 0.9}) == 0.0);
  CHECK(iou({0.0, 0.4}, {0.2, 0.6}) == doctest::Approx(0.2 / 0.6).epsilon(1e-12));
  // touching segments share no time
  CHECK(iou({0.0, 0.3}, {0.3, 0.6}) == 0.0);
}

TEST_CASE("iou of zero-length segments") {
  CHECK(iou({0.4, 0.4}, {0.4, 0.4}) == 1.0);
  CHECK(iou({0.4, 0.4}, {0.5, 0.5}) == 0.0);
  CHECK(iou({0.4, 0.4}, {0.2, 0.6}) == 0.0);
}

TEST_CASE("iou is symmetric, bounded and matches the reference") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 5000; ++i) {
    double a0 = u(rng), a1 = u(rng), b0 = u(rng), b1 = u(rng);
    if (a0 > a1) std::swap(a0, a1);
    if (b0 > b1) std::swap(b0, b1);
    const Segment a{a0, a1}, b{b0, b1};
    const double v = iou(a, b);
    CHECK(v == iou(b, a));
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(v == doctest::Approx(oracle::iou(a, b)).epsilon(1e-14));
    if (a.length() > 0) CHECK(iou(a, a) == 1.0);
  }
}

TEST_CASE("segment validity") {
  CHECK(is_valid({0.0, 1.0}));
  CHECK(is_valid({0.3, 0.3}));
  CHECK_FALSE(is_valid({0.5, 0.4}));
  CHECK_FALSE(is_valid({-0.1, 0.4}));
  CHECK_FALSE(is_valid({0.1, 1.2}));
}

TEST_CASE("detection label and confidence") {
  const auto d = det(0.1, 0.2, {0.1, 0.4, 0.4, 0.1});
  CHECK(d.label() == 1);  // tie goes to the lower index
  CHECK(d.confidence() == doctest::Approx(0.4));
}

TEST_CASE("assign examples") {
  const auto one = gts_of({{{0.1, 0.3}, 1}});
  CHECK(assign(Segment{0.1, 0.3}, one) == std::optional<std::size_t>(0));
  CHECK_FALSE(assign(Segment{0.8, 0.9}, gts_of({{{0.0, 0.1}, 1}})).has_value());
  CHECK_FALSE(assign(Segment{0.2, 0.4}, GroundTruthSet{}).has_value());

  const auto two = gts_of({{{0.0, 0.2}, 1}, {{0.3, 0.5}, 2}});
  const Segment m{0.0, 0.5};
  // 0.2/0.5 against 0.2/0.5: a tie, the lower index wins
  CHECK(iou(m, two.items[0].segment) == doctest::Approx(iou(m, two.items[1].segment)));
  CHECK(assign(m, two) == std::optional<std::size_t>(0));
  CHECK(assign(Segment{0.05, 0.5}, two) == std::optional<std::size_t>(1));
}

TEST_CASE("assign agrees with an exhaustive IoU table") {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 5000; ++i) {
    const auto g = oracle::random_gts(rng, 4, 3);
    const auto s = oracle::random_segment(rng);
    const auto a = assign(s, g);
    const int ref = oracle::assign(s, g);
    if (ref < 0) {
      CHECK_FALSE(a.has_value());
    } else {
      REQUIRE(a.has_value());
      CHECK(*a == static_cast<std::size_t>(ref));
    }
  }
}

TEST_CASE("average precision examples") {
  const auto g = gts_of({{{0.2, 0.4}, 1}});
  const std::vector<Detection> hit = {det(0.2, 0.4, {0.0, 1.0})};
  CHECK(average_precision_paper(hit, g, 1, 0.5).ap == 1.0);
  CHECK(average_precision_paper({}, g, 1, 0.5).ap == 0.0);
  CHECK_FALSE(average_precision_paper({}, g, 1, 0.5).class_absent);

  const auto absent = average_precision_paper(hit, g, 2, 0.5);
  CHECK(absent.class_absent);
  CHECK(absent.ap == 0.0);

  // false positive ranked first, then a hit: precision 1/2 at recall 1
  const std::vector<Detection> mixed = {det(0.7, 0.9, {0.0, 1.0}), det(0.2, 0.4, {0.0, 1.0})};
  CHECK(average_precision_paper(mixed, g, 1, 0.5).ap == doctest::Approx(0.5));
  // a duplicate of a claimed ground truth is a false positive
  const std::vector<Detection> dup = {det(0.2, 0.4, {0.0, 1.0}), det(0.2, 0.4, {0.0, 1.0})};
  CHECK(average_precision_paper(dup, g, 1, 0.5).ap == 1.0);
  // below the threshold
  const std::vector<Detection> weak = {det(0.2, 0.3, {0.0, 1.0})};
  CHECK(average_precision_paper(weak, g, 1, 0.6).ap == 0.0);
  CHECK(average_precision_paper(weak, g, 1, 0.45).ap == 1.0);
}

TEST_CASE("three detections, two ground truths") {
  const auto g = gts_of({{{0.0, 0.2}, 1}, {{0.5, 0.8}, 1}});
  const std::vector<Detection> ranked = {det(0.0, 0.2, {0.1, 0.9}), det(0.3, 0.45, {0.1, 0.9}),
                                         det(0.5, 0.75, {0.2, 0.8})};
  // TP, FP, TP: 1 * 0.5 + (2/3) * 0.5
  const double expected = 0.5 + (2.0 / 3.0) * 0.5;
  CHECK(average_precision_paper(ranked, g, 1, 0.5).ap == doctest::Approx(expected).epsilon(1e-14));
  std::vector<oracle::Entry> entries;
  for (const auto& d : ranked) entries.push_back({0, &d});
  CHECK(oracle::average_precision(entries, {g}, 1, 0.5) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("single-video AP equals the brute-force enumeration") {
  std::mt19937_64 rng(13);
  const double taus[] = {0.1, 0.3, 0.5, 0.7};
  int compared = 0;
  for (int i = 0; i < 20000; ++i) {
    const auto g = oracle::random_gts(rng, 4, 2);
    const auto dets = oracle::random_detections(rng, 6, 2);
    const double tau = taus[i % 4];
    for (int cls = 1; cls <= 2; ++cls) {
      const auto r = average_precision_paper(dets, g, cls, tau);
      std::vector<oracle::Entry> entries;
      for (const auto& d : dets) {
        if (oracle::argmax(d.class_probs) == cls) entries.push_back({0, &d});
      }
      const double ref = oracle::average_precision(entries, {g}, cls, tau);
      if (ref < 0) {
        CHECK(r.class_absent);
        continue;
      }
      CHECK_FALSE(r.class_absent);
      CHECK(std::abs(r.ap - ref) <= 1e-12);
      ++compared;
    }
  }
  CHECK(compared > 10000);
}

TEST_CASE("mAP in both ranking modes equals the brute-force enumeration") {
  std::mt19937_64 rng(14);
  const double taus[] = {0.3, 0.5, 0.7};
  int compared = 0;
  for (int i = 0; i < 4000; ++i) {
    std::uniform_int_distribution<int> nv(1, 3);
    const int videos = nv(rng);
    std::vector<std::vector<Detection>> dets;
    std::vector<GroundTruthSet> gts;
    for (int v = 0; v < videos; ++v) {
      dets.push_back(oracle::random_detections(rng, 6, 3));
      gts.push_back(oracle::random_gts(rng, 4, 3));
    }
    const double tau = taus[i % 3];
    for (const bool by_conf : {false, true}) {
      const double ref = oracle::mean_ap(dets, gts, tau, by_conf);
      const auto mode = by_conf ? RankingMode::confidence : RankingMode::paper_overlap;
      if (ref < 0) {
        CHECK_THROWS_AS(mean_ap(dets, gts, tau, mode), std::invalid_argument);
        continue;
      }
      const double m = mean_ap(dets, gts, tau, mode);
      CHECK(std::abs(m - ref) <= 1e-12);
      CHECK(m >= 0.0);
      CHECK(m <= 1.0);
      ++compared;
    }
  }
  CHECK(compared > 5000);
}

TEST_CASE("appending a correct detection never lowers AP") {
  std::mt19937_64 rng(15);
  for (int i = 0; i < 3000; ++i) {
    auto g = oracle::random_gts(rng, 4, 2);
    if (g.empty()) continue;
    auto dets = oracle::random_detections(rng, 5, 2);
    const auto& target = g.items[rng() % g.size()];
    const double before = average_precision_paper(dets, g, target.label, 0.5).ap;
    std::vector<double> probs(3, 0.0);
    probs[static_cast<std::size_t>(target.label)] = 1.0;
    dets.push_back({target.segment, probs, 7});
    const double after = average_precision_paper(dets, g, target.label, 0.5).ap;
    CHECK(after >= before - 1e-15);
  }
}

TEST_CASE("mean AP examples") {
  const std::vector<GroundTruthSet> gts = {gts_of({{{0.1, 0.3}, 1}, {{0.5, 0.9}, 2}}),
                                           gts_of({{{0.0, 0.4}, 2}})};
  const std::vector<std::vector<Detection>> perfect = {
      {det(0.1, 0.3, {0.0, 1.0, 0.0}), det(0.5, 0.9, {0.0, 0.0, 1.0})},
      {det(0.0, 0.4, {0.1, 0.1, 0.8})}};
  for (const auto mode : {RankingMode::paper_overlap, RankingMode::confidence}) {
    CHECK(mean_ap(perfect, gts, 0.5, mode) == 1.0);
  }
  const std::vector<std::vector<Detection>> background = {
      {det(0.1, 0.3, {0.9, 0.05, 0.05})}, {det(0.0, 0.4, {0.6, 0.2, 0.2})}};
  CHECK(mean_ap(background, gts, 0.5, RankingMode::confidence) == 0.0);

  // class 1 found, class 2 missed entirely: (1 + 0) / 2
  const std::vector<std::vector<Detection>> half = {{det(0.1, 0.3, {0.0, 1.0, 0.0})}, {}};
  CHECK(mean_ap(half, gts, 0.5, RankingMode::confidence) == doctest::Approx(0.5));

  const std::vector<GroundTruthSet> none(2);
  CHECK_THROWS_AS(mean_ap(perfect, none, 0.5, RankingMode::confidence), std::invalid_argument);
}

TEST_CASE("confidence ranking pools videos and orders by class probability") {
  const std::vector<GroundTruthSet> gts = {gts_of({{{0.0, 0.2}, 1}}), gts_of({{{0.5, 0.7}, 1}})};
  // the confident detection in video 0 is a miss; the hit in video 1 ranks second
  const std::vector<std::vector<Detection>> dets = {{det(0.8, 1.0, {0.0, 1.0})},
                                                    {det(0.5, 0.7, {0.4, 0.6})}};
  const auto ranked = rank_detections(dets, gts, 1, RankingMode::confidence);
  REQUIRE(ranked.size() == 2);
  CHECK(ranked[0].video == 0);
  CHECK(mean_ap(dets, gts, 0.5, RankingMode::confidence) == doctest::Approx(0.25));
  // overlap ranking puts the hit first
  CHECK(mean_ap(dets, gts, 0.5, RankingMode::paper_overlap) == doctest::Approx(0.5));
}
