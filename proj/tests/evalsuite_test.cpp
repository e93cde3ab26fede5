#include "fcreg/evalsuite.hpp"

#include <gtest/gtest.h>

#include <random>

#include "oracle_helpers.hpp"

using namespace fcreg;

TEST(Dice, PerfectOverlap) {
  LabelVolume a(GridShape{4, 4, 4});
  a.at(1, 1, 1) = 1;
  a.at(2, 1, 1) = 1;
  const auto res = dice(a, a, {1});
  EXPECT_DOUBLE_EQ(res.per_label.at(1), 1.0);
  EXPECT_DOUBLE_EQ(res.mean, 1.0);
}

TEST(Dice, DisjointRegions) {
  LabelVolume a(GridShape{4, 4, 4});
  LabelVolume b(GridShape{4, 4, 4});
  a.at(0, 0, 0) = 1;
  b.at(3, 3, 3) = 1;
  EXPECT_DOUBLE_EQ(dice(a, b, {1}).mean, 0.0);
}

TEST(Dice, HalfOverlap) {
  LabelVolume a(GridShape{4, 1, 1});
  LabelVolume b(GridShape{4, 1, 1});
  a.at(0, 0, 0) = 1;
  a.at(1, 0, 0) = 1;
  b.at(1, 0, 0) = 1;
  b.at(2, 0, 0) = 1;
  EXPECT_DOUBLE_EQ(dice(a, b, {1}).mean, 0.5);  // 2*1 / (2+2)
}

TEST(Dice, SkipsLabelsAbsentFromBoth) {
  LabelVolume a(GridShape{4, 4, 4});
  LabelVolume b(GridShape{4, 4, 4});
  a.at(0, 0, 0) = 1;
  b.at(0, 0, 0) = 1;
  const auto res = dice(a, b, {1, 9});
  EXPECT_EQ(res.per_label.size(), 1u);
  EXPECT_DOUBLE_EQ(res.mean, 1.0);
  EXPECT_THROW(dice(a, b, {9}), std::invalid_argument);
}

TEST(Dice, SymmetryAndRange) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> lab(0, 3);
  LabelVolume a(GridShape{6, 6, 6});
  LabelVolume b(GridShape{6, 6, 6});
  for (auto& v : a.labels) v = lab(rng);
  for (auto& v : b.labels) v = lab(rng);
  const auto ab = dice(a, b, {1, 2, 3});
  const auto ba = dice(b, a, {1, 2, 3});
  EXPECT_DOUBLE_EQ(ab.mean, ba.mean);
  for (const auto& [k, s] : ab.per_label) {
    EXPECT_DOUBLE_EQ(s, ba.per_label.at(k));
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 1.0);
  }
}

TEST(Dice, ErrorsOnBadInput) {
  LabelVolume a(GridShape{4, 4, 4});
  LabelVolume c(GridShape{5, 4, 4});
  EXPECT_THROW(dice(a, c, {1}), std::invalid_argument);
  EXPECT_THROW(dice(a, a, {}), std::invalid_argument);
  EXPECT_THROW(dice(a, a, {0}), std::invalid_argument);
}

TEST(ZscoreMap, HandComputedValues) {
  ScalarVolume v(GridShape{3, 1, 1});
  v.data = {1.0, 2.0, 3.0};
  const auto z = zscore_map(v);
  EXPECT_NEAR(z.data[0], -1.2247, 1e-4);
  EXPECT_NEAR(z.data[1], 0.0, 1e-12);
  EXPECT_NEAR(z.data[2], 1.2247, 1e-4);
}

TEST(ZscoreMap, IdempotentOnStandardizedInput) {
  std::mt19937_64 rng(5);
  ScalarVolume v = oracle::random_scalar(GridShape{8, 8, 8}, rng);
  const auto once = zscore_map(v);
  const auto twice = zscore_map(once);
  for (std::size_t i = 0; i < once.data.size(); ++i)
    EXPECT_NEAR(once.data[i], twice.data[i], 1e-9);
}

TEST(ZscoreMap, ConstantMapIsError) {
  ScalarVolume v(GridShape{4, 4, 4}, 2.0);
  EXPECT_THROW(zscore_map(v), std::invalid_argument);
}

TEST(ZscoreMap, MaskedMeanZeroStdOne) {
  std::mt19937_64 rng(7);
  ScalarVolume v = oracle::random_scalar(GridShape{8, 8, 8}, rng);
  BrainMask mask(v.shape, false);
  for (int z = 2; z < 6; ++z)
    for (int y = 2; y < 6; ++y)
      for (int x = 2; x < 6; ++x) mask.set(x, y, z, true);
  const auto zm = zscore_map(v, &mask);
  const auto st = volume_stats(zm, &mask);
  EXPECT_NEAR(st.mean, 0.0, 1e-9);
  EXPECT_NEAR(st.std, 1.0, 1e-9);
  EXPECT_EQ(zm.at(0, 0, 0), 0.0);  // outside the mask
}

TEST(OneSampleTmap, ClosedFormValue) {
  std::vector<ScalarVolume> maps;
  for (double v : {1.0, 2.0, 3.0}) maps.push_back(ScalarVolume(GridShape{2, 2, 2}, v));
  const auto tm = one_sample_tmap(maps);
  for (double t : tm.t) EXPECT_NEAR(t, 2.0 * std::sqrt(3.0), 1e-12);
}

TEST(OneSampleTmap, ZeroMeanAndSentinels) {
  std::vector<ScalarVolume> pair;
  pair.push_back(ScalarVolume(GridShape{1, 1, 1}, 1.0));
  pair.push_back(ScalarVolume(GridShape{1, 1, 1}, -1.0));
  EXPECT_EQ(one_sample_tmap(pair).t[0], 0.0);

  std::vector<ScalarVolume> constant;
  for (int i = 0; i < 3; ++i)
    constant.push_back(ScalarVolume(GridShape{1, 1, 1}, 2.0));
  EXPECT_TRUE(std::isinf(one_sample_tmap(constant).t[0]));
  EXPECT_GT(one_sample_tmap(constant).t[0], 0.0);

  std::vector<ScalarVolume> negative;
  for (int i = 0; i < 3; ++i)
    negative.push_back(ScalarVolume(GridShape{1, 1, 1}, -2.0));
  EXPECT_LT(one_sample_tmap(negative).t[0], 0.0);
}

TEST(OneSampleTmap, FewerThanTwoMapsIsError) {
  std::vector<ScalarVolume> one;
  one.push_back(ScalarVolume(GridShape{2, 2, 2}, 1.0));
  EXPECT_THROW(one_sample_tmap(one), std::invalid_argument);
}

TEST(OneSampleTmap, SubjectOrderPermutationInvariance) {
  std::mt19937_64 rng(11);
  std::vector<ScalarVolume> maps;
  for (int i = 0; i < 5; ++i)
    maps.push_back(oracle::random_scalar(GridShape{6, 6, 6}, rng));
  const auto t1 = one_sample_tmap(maps);
  std::shuffle(maps.begin(), maps.end(), rng);
  const auto t2 = one_sample_tmap(maps);
  for (std::size_t i = 0; i < t1.t.size(); ++i) EXPECT_EQ(t1.t[i], t2.t[i]);
}

TEST(ThresholdReport, DirectCount) {
  TMap tm;
  tm.shape = GridShape{3, 1, 1};
  tm.t = {5.0, 4.0, 4.3};
  tm.n = 3;
  const auto rep = threshold_report(tm, 4.24);
  EXPECT_EQ(rep.count, 2u);
  EXPECT_DOUBLE_EQ(rep.peak, 5.0);
}

TEST(ThresholdReport, BoundaryAndSentinels) {
  TMap tm;
  tm.shape = GridShape{4, 1, 1};
  tm.t = {0.0, 0.0, std::numeric_limits<double>::infinity(),
          -std::numeric_limits<double>::infinity()};
  tm.n = 2;
  EXPECT_EQ(threshold_report(tm, 0.0).count, 1u);  // strict: only +inf
  EXPECT_EQ(threshold_report(tm, 1e12).count, 1u);
  TMap zeros;
  zeros.shape = GridShape{3, 1, 1};
  zeros.t = {0.0, 0.0, 0.0};
  zeros.n = 2;
  EXPECT_EQ(threshold_report(zeros, 0.0).count, 0u);
}

TEST(ThresholdReport, CountMonotoneInThreshold) {
  std::mt19937_64 rng(13);
  TMap tm;
  tm.shape = GridShape{8, 8, 8};
  tm.t.resize(tm.shape.spatial_count());
  tm.n = 4;
  std::normal_distribution<double> g(0.0, 2.0);
  for (double& t : tm.t) t = g(rng);
  std::size_t prev = tm.t.size() + 1;
  for (double thr = -4.0; thr <= 4.0; thr += 0.25) {
    const auto rep = threshold_report(tm, thr);
    EXPECT_LE(rep.count, prev);
    prev = rep.count;
  }
}

TEST(OverlapCount, SelfOverlapEqualsThresholdCount) {
  std::mt19937_64 rng(17);
  TMap tm;
  tm.shape = GridShape{6, 6, 6};
  tm.t.resize(tm.shape.spatial_count());
  tm.n = 3;
  std::normal_distribution<double> g(0.0, 2.0);
  for (double& t : tm.t) t = g(rng);
  EXPECT_EQ(overlap_count(tm, 1.0, tm, 1.0), threshold_report(tm, 1.0).count);
}

TEST(OverlapCount, DisjointAndOracle) {
  TMap a, b;
  a.shape = b.shape = GridShape{8, 8, 8};
  a.t.assign(a.shape.spatial_count(), 0.0);
  b.t.assign(b.shape.spatial_count(), 0.0);
  a.n = b.n = 2;
  a.t[0] = 10.0;
  b.t[1] = 10.0;
  EXPECT_EQ(overlap_count(a, 3.0, b, 3.0), 0u);

  std::mt19937_64 rng(19);
  std::normal_distribution<double> g(0.0, 2.0);
  for (double& t : a.t) t = g(rng);
  for (double& t : b.t) t = g(rng);
  std::size_t want = 0;
  for (std::size_t i = 0; i < a.t.size(); ++i)
    if (a.t[i] > 1.0 && b.t[i] > 0.5) ++want;
  EXPECT_EQ(overlap_count(a, 1.0, b, 0.5), want);

  TMap c;
  c.shape = GridShape{4, 8, 8};
  c.t.assign(c.shape.spatial_count(), 0.0);
  c.n = 2;
  EXPECT_THROW(overlap_count(a, 1.0, c, 1.0), std::invalid_argument);
}
