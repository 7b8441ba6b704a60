#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>

#include "divseg/metrics.hpp"

using namespace divseg;

namespace {

LabelMask random_mask(int w, int h, int k, std::mt19937_64& rng) {
  LabelMask m(w, h);
  for (int& v : m.labels()) v = static_cast<int>(rng() % k);
  return m;
}

}  // namespace

TEST_CASE("identical masks score 1.0") {
  std::mt19937_64 rng(1);
  const LabelMask m = random_mask(8, 8, 4, rng);
  const IouResult r = iou(m, m, 4);
  CHECK(r.mean == Catch::Approx(1.0));
  for (double v : r.per_class)
    if (v >= 0.0) CHECK(v == Catch::Approx(1.0));
}

TEST_CASE("disjoint single-class masks score 0") {
  LabelMask a(4, 4, 0), b(4, 4, 1);
  CHECK(iou(a, b, 2).mean == Catch::Approx(0.0));
}

TEST_CASE("partial overlap counts by hand") {
  // gt class 1 occupies 4 pixels, pred occupies 4, 2 overlap -> 2/6.
  LabelMask gt(8, 1, 0), pred(8, 1, 0);
  for (int x = 0; x < 4; ++x) gt.at(0, x) = 1;
  for (int x = 2; x < 6; ++x) pred.at(0, x) = 1;
  const IouResult r = iou(pred, gt, 2);
  CHECK(r.per_class[1] == Catch::Approx(2.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("iou is symmetric and bounded") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const LabelMask a = random_mask(6, 6, 5, rng);
    const LabelMask b = random_mask(6, 6, 5, rng);
    const IouResult ab = iou(a, b, 5);
    const IouResult ba = iou(b, a, 5);
    CHECK(ab.mean == Catch::Approx(ba.mean).epsilon(1e-12));
    for (int c = 0; c < 5; ++c)
      CHECK(ab.per_class[c] == Catch::Approx(ba.per_class[c]).epsilon(1e-12));
    CHECK(ab.mean >= 0.0);
    CHECK(ab.mean <= 1.0);
  }
}

TEST_CASE("classes absent from both masks are excluded from the mean") {
  LabelMask a(4, 4, 0), b(4, 4, 0);
  const IouResult r = iou(a, b, 10);
  CHECK(r.mean == Catch::Approx(1.0));
  for (int c = 1; c < 10; ++c) CHECK(r.per_class[c] < 0.0);
}

TEST_CASE("ignored pixels leave numerator and denominator") {
  LabelMask gt(4, 1, 0), pred(4, 1, 0);
  gt.at(0, 0) = 255;  // ignore
  pred.at(0, 0) = 1;
  gt.at(0, 1) = 1;
  pred.at(0, 1) = 1;
  const IouResult r = iou(pred, gt, 2, /*ignore_label=*/255);
  CHECK(r.per_class[1] == Catch::Approx(1.0));
  CHECK(r.per_class[0] == Catch::Approx(1.0));
}

TEST_CASE("dim mismatch is rejected") {
  LabelMask a(4, 4), b(4, 5);
  CHECK_THROWS_AS(iou(a, b, 2), ShapeError);
}

TEST_CASE("nearest-rank partition on distinct values") {
  std::vector<VisualStats> stats;
  for (int i = 0; i < 100; ++i)
    stats.push_back({static_cast<double>(100 - i), 0.0, 0.0});
  PartitionSpec spec;
  spec.feature = StatsFeature::MeanLum;
  spec.low_pct = 15.0;
  spec.high_pct = 85.0;
  const Partition p = partition_extremes(stats, spec);
  REQUIRE(p.low.size() == 15);
  REQUIRE(p.high.size() == 15);
  // Values descend with index, so the 15 smallest are the last 15 indices.
  for (std::size_t i = 0; i < 15; ++i) {
    CHECK(p.low[i] == 85 + i);
    CHECK(p.high[i] == i);
  }
}

TEST_CASE("all-equal features stay disjoint with stable order") {
  std::vector<VisualStats> stats(10, VisualStats{0.5, 0.5, 0.5});
  PartitionSpec spec;
  spec.low_pct = 20.0;
  spec.high_pct = 80.0;
  const Partition p = partition_extremes(stats, spec);
  CHECK(p.low == std::vector<std::size_t>{0, 1});
  CHECK(p.high == std::vector<std::size_t>{8, 9});
}

TEST_CASE("partition matches a full-sort oracle on random lists") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 10 + rng() % 100;
    std::vector<VisualStats> stats;
    for (std::size_t i = 0; i < n; ++i)
      stats.push_back({uni(rng) + 0.01, uni(rng), uni(rng)});
    PartitionSpec spec;
    spec.feature = StatsFeature::AchroCtr;
    spec.low_pct = 20.0;
    spec.high_pct = 80.0;
    const Partition p = partition_extremes(stats, spec);

    // Oracle: full stable sort on (feature, index).
    std::vector<std::pair<double, std::size_t>> pairs;
    for (std::size_t i = 0; i < n; ++i)
      pairs.emplace_back(stats_feature(stats[i], spec.feature), i);
    std::sort(pairs.begin(), pairs.end());
    const auto n_low = static_cast<std::size_t>(std::ceil(n * 0.20));
    const auto n_high = static_cast<std::size_t>(std::ceil(n * 0.20));
    std::vector<std::size_t> want_low, want_high;
    for (std::size_t i = 0; i < n_low; ++i) want_low.push_back(pairs[i].second);
    for (std::size_t i = n - n_high; i < n; ++i) want_high.push_back(pairs[i].second);
    std::sort(want_low.begin(), want_low.end());
    std::sort(want_high.begin(), want_high.end());
    CHECK(p.low == want_low);
    CHECK(p.high == want_high);

    // Disjointness and total size.
    std::vector<std::size_t> inter;
    std::set_intersection(p.low.begin(), p.low.end(), p.high.begin(), p.high.end(),
                          std::back_inserter(inter));
    CHECK(inter.empty());
    CHECK(p.low.size() + p.high.size() == n_low + n_high);
  }
}

TEST_CASE("partition rejects bad input") {
  CHECK_THROWS_AS(partition_extremes({}, PartitionSpec{}), EmptyDataset);
  std::vector<VisualStats> stats(5, VisualStats{0.5, 0.5, 0.5});
  PartitionSpec bad;
  bad.low_pct = 90.0;
  bad.high_pct = 10.0;
  CHECK_THROWS_AS(partition_extremes(stats, bad), InvalidSpec);
}
