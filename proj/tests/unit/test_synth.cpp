#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "kmgpt/errors.hpp"
#include "kmgpt/synth.hpp"

using namespace kmgpt;
using namespace kmgpt::synth;

namespace {

recon::SurvivalCurve steps(std::vector<double> t, std::vector<double> p) {
  recon::SurvivalCurve c;
  c.step_times = std::move(t);
  c.probabilities = std::move(p);
  c.at_risk.assign(c.step_times.size(), 1);
  c.events.assign(c.step_times.size(), 1);
  return c;
}

}  // namespace

TEST(GridCell, CodesAndTableValues) {
  const auto all = GridCell::all();
  ASSERT_EQ(all.size(), 27u);
  EXPECT_EQ(all.front().code(), "LLL");
  EXPECT_EQ(all.back().code(), "HHH");
  EXPECT_EQ(GridCell::parse("MHL").code(), "MHL");
  EXPECT_THROW(GridCell::parse("MHX"), Error);

  const auto m = GridCell::parse("MMM");
  EXPECT_EQ(m.size_param().mu, 200);
  EXPECT_EQ(m.median_param().mu, 12);
  EXPECT_EQ(m.censor_param().mu, 0.3);
  const auto l = GridCell::parse("LLL"), h = GridCell::parse("HHH");
  EXPECT_EQ(l.size_param().sigma, 10);
  EXPECT_EQ(h.size_param().mu, 800);
  EXPECT_EQ(l.median_param().mu, 6);
  EXPECT_EQ(h.median_param().sigma, 6);
  EXPECT_EQ(l.censor_param().mu, 0.05);
  EXPECT_EQ(h.censor_param().sigma, 0.08);
}

TEST(SampleConfig, ZeroSigmaGivesMeans) {
  std::mt19937_64 rng(1);
  SampleOptions o;
  o.sigma_scale = 0;
  const auto c = sample_config(GridCell::parse("HLH"), rng, o);
  EXPECT_EQ(c.n, 800);
  EXPECT_DOUBLE_EQ(c.median(), 6);
  EXPECT_DOUBLE_EQ(c.eta, 0.7);
  EXPECT_DOUBLE_EQ(c.lambda, std::log(2.0) / 6);
}

TEST(SampleConfig, DeterministicAndValid) {
  std::mt19937_64 a(42), b(42);
  for (int i = 0; i < 200; ++i) {
    const auto cell = GridCell::all()[i % 27];
    const auto x = sample_config(cell, a), y = sample_config(cell, b);
    EXPECT_EQ(x.n, y.n);
    EXPECT_EQ(x.lambda, y.lambda);
    EXPECT_EQ(x.seed, y.seed);
    EXPECT_GE(x.n, 2);
    EXPECT_GT(x.lambda, 0);
    EXPECT_GE(x.eta, 0);
    EXPECT_LE(x.eta, 0.95);
    EXPECT_GT(x.tau, 0);
  }
}

TEST(Cohort, NoCensoringWithoutEtaOrTau) {
  SynthConfig c;
  c.n = 500;
  c.lambda = 0.1;
  c.eta = 0;
  c.tau = std::numeric_limits<double>::infinity();
  std::mt19937_64 rng(3);
  for (const auto& r : generate_ipd(c, rng)) EXPECT_EQ(r.status, 1);
}

TEST(Cohort, SelectionCountAndTruncation) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    auto cfg = sample_config(GridCell::all()[trial % 27], rng);
    const auto co = generate_cohort(cfg, rng);
    int selected = 0;
    for (bool s : co.selected) selected += s;
    EXPECT_EQ(selected, std::lround(cfg.n * cfg.eta));
    for (int i = 0; i < cfg.n; ++i) {
      const auto& r = co.records[i];
      ASSERT_LE(r.time, cfg.tau);
      if (r.status == 1) {
        ASSERT_EQ(r.time, co.latent_times[i]);
      }
      if (co.administrative[i]) {
        ASSERT_EQ(r.time, cfg.tau);
      }
    }
  }
  SynthConfig c{200, 0.05, 0.3, 1e9, 0};
  const auto co = generate_cohort(c, rng);
  int selected = 0;
  for (bool s : co.selected) selected += s;
  EXPECT_EQ(selected, 60);
}

TEST(Cohort, EventMedianMonteCarlo) {
  SynthConfig c;
  c.n = 100000;
  c.lambda = std::log(2.0) / 12;
  c.eta = 0;
  c.tau = std::numeric_limits<double>::infinity();
  std::mt19937_64 rng(2024);
  std::vector<double> t;
  for (const auto& r : generate_ipd(c, rng)) t.push_back(r.time);
  EXPECT_NEAR(median_of(t), 12.0, 0.2);
}

TEST(Render, DeterministicPng) {
  std::mt19937_64 a(5), b(5);
  auto ca = sample_config(GridCell::parse("MMM"), a);
  auto cb = sample_config(GridCell::parse("MMM"), b);
  const auto pa = render_km_plot({generate_ipd(ca, a)});
  const auto pb = render_km_plot({generate_ipd(cb, b)});
  EXPECT_EQ(encode_png(pa.image), encode_png(pb.image));
  EXPECT_EQ(sidecar_json(pa), sidecar_json(pb));
}

TEST(Render, RiskCountsMatchDirectCount) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    auto cfg = sample_config(GridCell::all()[(trial * 7) % 27], rng);
    const auto g1 = generate_ipd(cfg, rng, "A");
    const auto g2 = generate_ipd(cfg, rng, "B");
    const auto plot = render_km_plot({g1, g2});
    EXPECT_NO_THROW(mmpu::check_invariants(plot.metadata));
    ASSERT_EQ(plot.risk.counts.size(), 2u);
    for (std::size_t g = 0; g < 2; ++g) {
      const auto& recs = g == 0 ? g1 : g2;
      for (std::size_t k = 0; k < plot.risk.anchor_times.size(); ++k) {
        int n = 0;
        for (const auto& r : recs) n += r.time >= plot.risk.anchor_times[k];
        ASSERT_EQ(plot.risk.counts[g][k], n);
      }
    }
    EXPECT_EQ(plot.metadata.risk_table, plot.risk);
  }
}

TEST(Iae, IdenticalAndOffset) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> U(0, 1);
  std::vector<double> a(1000);
  for (auto& x : a) x = U(rng);
  EXPECT_EQ(iae_on_grid(a, a), 0.0);
  for (double d : {0.001, 0.01, 0.25}) {
    auto b = a;
    for (auto& x : b) x += d;
    EXPECT_NEAR(iae_on_grid(a, b), d, 1e-9);
  }
}

TEST(Iae, PseudometricOnRandomTriples) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> U(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> a(1000), b(1000), c(1000);
    for (int i = 0; i < 1000; ++i) a[i] = U(rng), b[i] = U(rng), c[i] = U(rng);
    const double ab = iae_on_grid(a, b), ba = iae_on_grid(b, a), ac = iae_on_grid(a, c), bc = iae_on_grid(b, c);
    ASSERT_GE(ab, 0);
    ASSERT_EQ(ab, ba);
    ASSERT_LE(ac, ab + bc + 1e-9);
  }
}

TEST(Score, ConstantGapAndIdentity) {
  const auto truth = steps({0, 5, 9}, {1.0, 0.6, 0.3});
  const auto low = steps({0, 5, 9}, {0.99, 0.59, 0.29});
  auto r = score(truth, truth, 12);
  EXPECT_EQ(r.iae, 0);
  for (const auto& [x, ae] : r.ae_series) EXPECT_EQ(ae, 0);
  r = score(truth, low, 12);
  EXPECT_NEAR(r.iae, 0.01, 1e-9);
  EXPECT_EQ(r.ae_series.size(), 1000u);
  EXPECT_THROW(score(truth, truth, 0), Error);
}

TEST(Score, MedianErrorNormalizedOrNotComparable) {
  const auto a = steps({4, 8}, {0.7, 0.4});
  const auto b = steps({4, 6}, {0.7, 0.45});
  auto r = score(a, b, 20);
  ASSERT_TRUE(r.mos_ae.has_value());
  EXPECT_NEAR(*r.mos_ae, 2.0 / 20, 1e-12);
  const auto never = steps({4}, {0.8});
  EXPECT_FALSE(score(a, never, 20).mos_ae.has_value());
}

TEST(Score, InvariantUnderJointTimeRescaling) {
  const auto a = steps({1, 3, 7}, {0.9, 0.5, 0.2});
  const auto b = steps({1.5, 3, 6}, {0.85, 0.45, 0.25});
  const auto r1 = score(a, b, 10);
  const auto a2 = steps({4, 12, 28}, {0.9, 0.5, 0.2});
  const auto b2 = steps({6, 12, 24}, {0.85, 0.45, 0.25});
  const auto r2 = score(a2, b2, 40);
  EXPECT_NEAR(r1.iae, r2.iae, 1e-12);
  EXPECT_NEAR(*r1.mos_ae, *r2.mos_ae, 1e-12);
}

TEST(Grid, TrivialPipelineIsExact) {
  GridOptions o;
  o.reps = 1;
  o.threads = 1;
  const auto s = run_grid([](const BenchCase& bc) { return BenchOutput{bc.truth_ipd, true}; }, o);
  EXPECT_EQ(s.successes, 27);
  EXPECT_EQ(s.median_iae, 0.0);
  for (const auto& r : s.runs) {
    EXPECT_EQ(r.metrics.iae, 0.0);
    EXPECT_TRUE(r.anchors_match);
  }
  const auto again = run_grid([](const BenchCase& bc) { return BenchOutput{bc.truth_ipd, true}; }, o);
  EXPECT_EQ(summary_csv(s), summary_csv(again));
  EXPECT_EQ(summary_csv(s).substr(0, 27), "cell,rep,iae,mos_ae,success");
}

TEST(Grid, FailuresAreRecordedNotFatal) {
  GridOptions o;
  o.cells = {GridCell::parse("LLL"), GridCell::parse("MMM")};
  o.reps = 1;
  o.threads = 2;
  const auto s = run_grid(
      [](const BenchCase& bc) -> BenchOutput {
        if (bc.cell.code() == "LLL") throw Error(ErrorCode::NoCurvePixels, "boom");
        return {bc.truth_ipd, true};
      },
      o);
  ASSERT_EQ(s.runs.size(), 2u);
  EXPECT_EQ(s.successes, 1);
  for (const auto& r : s.runs)
    if (r.cell == "LLL") {
      EXPECT_NE(r.error.find("boom"), std::string::npos);
    }
}

TEST(Seeds, DistinctPerRun) {
  std::set<std::uint64_t> seen;
  for (std::size_t c = 0; c < 27; ++c)
    for (std::size_t r = 0; r < 20; ++r) seen.insert(derive_seed(2024, c, r));
  EXPECT_EQ(seen.size(), 540u);
}
