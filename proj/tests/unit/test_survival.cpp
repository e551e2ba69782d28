#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "kmgpt/survival.hpp"

using namespace kmgpt::recon;

namespace {

std::vector<IPDRecord> recs(const std::vector<std::pair<double, int>>& v) {
  std::vector<IPDRecord> out;
  for (auto [t, s] : v) out.push_back({t, s, "A"});
  return out;
}

// Product-limit by definition: at each distinct event time u, scan all records
// for the risk set {time >= u} and the deaths {time == u, status 1}.
std::vector<std::pair<double, double>> km_oracle(const std::vector<IPDRecord>& r) {
  std::set<double> event_times;
  for (const auto& x : r)
    if (x.status == 1) event_times.insert(x.time);
  std::vector<std::pair<double, double>> out;
  double s = 1.0;
  for (double u : event_times) {
    int n = 0, d = 0;
    for (const auto& x : r) {
      n += x.time >= u;
      d += x.time == u && x.status == 1;
    }
    s *= 1.0 - static_cast<double>(d) / n;
    out.emplace_back(u, s);
  }
  return out;
}

}  // namespace

TEST(Km, HandExamples) {
  auto c = km_estimate(recs({{1, 1}, {2, 1}, {3, 1}}));
  ASSERT_EQ(c.step_times.size(), 3u);
  EXPECT_DOUBLE_EQ(c.evaluate(1), 2.0 / 3);
  EXPECT_DOUBLE_EQ(c.evaluate(2), 1.0 / 3);
  EXPECT_DOUBLE_EQ(c.evaluate(3), 0.0);
  EXPECT_DOUBLE_EQ(c.evaluate(0.5), 1.0);

  c = km_estimate(recs({{1, 0}, {2, 0}, {5, 0}}));
  EXPECT_TRUE(c.step_times.empty());
  EXPECT_DOUBLE_EQ(c.evaluate(100), 1.0);

  c = km_estimate(recs({{1, 1}, {1.5, 0}, {2, 1}}));
  EXPECT_DOUBLE_EQ(c.evaluate(1), 2.0 / 3);
  EXPECT_DOUBLE_EQ(c.evaluate(2), 0.0);
  EXPECT_EQ(c.at_risk, (std::vector<int>{3, 1}));
}

TEST(Km, TiedEventLeavesBeforeTiedCensoring) {
  const auto c = km_estimate(recs({{2, 0}, {2, 1}, {3, 1}}));
  EXPECT_DOUBLE_EQ(c.evaluate(2), 2.0 / 3);
  EXPECT_EQ(c.at_risk[0], 3);
}

TEST(Km, MatchesDefinitionOnRandomInstances) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 20);
    std::vector<IPDRecord> r;
    for (int i = 0; i < n; ++i) r.push_back({static_cast<double>(rng() % 8), static_cast<int>(rng() % 2), "A"});
    const auto c = km_estimate(r);
    const auto o = km_oracle(r);
    ASSERT_EQ(c.step_times.size(), o.size());
    for (std::size_t k = 0; k < o.size(); ++k) {
      ASSERT_EQ(c.step_times[k], o[k].first);
      ASSERT_EQ(c.probabilities[k], o[k].second);
    }
    for (double t = -0.5; t < 9; t += 0.5) {
      double want = 1.0;
      for (const auto& [u, s] : o)
        if (u <= t) want = s;
      ASSERT_EQ(c.evaluate(t), want);
    }
  }
}

TEST(Km, MonotoneWithinUnitInterval) {
  std::mt19937_64 rng(3);
  std::exponential_distribution<double> e(0.1);
  std::vector<IPDRecord> r;
  for (int i = 0; i < 300; ++i) r.push_back({e(rng), static_cast<int>(rng() % 3 != 0), "A"});
  const auto c = km_estimate(r);
  double prev = 1.0;
  for (double p : c.probabilities) {
    EXPECT_LE(p, prev);
    EXPECT_GE(p, 0.0);
    prev = p;
  }
}

TEST(Median, Examples) {
  SurvivalCurve flat;
  flat.step_times = {3};
  flat.probabilities = {0.6};
  flat.at_risk = {10};
  flat.events = {4};
  EXPECT_FALSE(median_survival(flat).median.has_value());

  SurvivalCurve drop;
  drop.step_times = {5};
  drop.probabilities = {0.4};
  drop.at_risk = {10};
  drop.events = {6};
  EXPECT_EQ(curve_median(drop).value(), 5);
  EXPECT_EQ(median_survival(drop).median.value(), 5);
}

TEST(Median, ExponentialSample) {
  std::mt19937_64 rng(2024);
  std::exponential_distribution<double> e(std::log(2.0) / 12);
  std::vector<IPDRecord> r;
  for (int i = 0; i < 1000; ++i) r.push_back({e(rng), 1, "A"});
  const auto m = median_survival(km_estimate(r));
  ASSERT_TRUE(m.median.has_value());
  EXPECT_GE(*m.median, 11);
  EXPECT_LE(*m.median, 13);
  ASSERT_TRUE(m.ci_low && m.ci_high);
  EXPECT_LE(*m.ci_low, *m.median);
  EXPECT_GE(*m.ci_high, *m.median);
}

TEST(AtRisk, CountsTimesAtOrAfter) {
  const auto r = recs({{1, 1}, {2, 0}, {2, 1}, {4, 0}});
  EXPECT_EQ(number_at_risk(r, 0), 4);
  EXPECT_EQ(number_at_risk(r, 2), 3);
  EXPECT_EQ(number_at_risk(r, 2.5), 1);
  EXPECT_EQ(number_at_risk(r, 5), 0);
}

TEST(Csv, RoundTripWithGroups) {
  std::vector<IPDRecord> r{{1.25, 1, "arm A"}, {3.5, 0, "B,2"}, {7, 1, "say \"hi\""}};
  const auto back = ipd_from_csv(ipd_to_csv(r));
  EXPECT_EQ(back, r);
  EXPECT_EQ(group_names(back).size(), 3u);
  EXPECT_EQ(filter_group(back, "B,2").size(), 1u);
}

TEST(Csv, CustomGroupColumn) {
  const auto r = ipd_from_csv("arm,time,status\nX,1.5,1\nY,2,0\n", "arm");
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[1].group, "Y");
  EXPECT_EQ(r[0].time, 1.5);
}
