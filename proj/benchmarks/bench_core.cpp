#include <random>

#include <benchmark/benchmark.h>

#include "kmgpt/curve_extract.hpp"
#include "kmgpt/image_prep.hpp"
#include "kmgpt/meta.hpp"
#include "kmgpt/reconstruct.hpp"
#include "kmgpt/survival.hpp"
#include "kmgpt/synth.hpp"

using namespace kmgpt;

namespace {

std::vector<recon::IPDRecord> cohort(int n, std::uint64_t seed) {
  synth::SynthConfig c;
  c.n = n;
  c.lambda = std::log(2.0) / 12.0;
  c.eta = 0.3;
  c.tau = 36;
  std::mt19937_64 rng(seed);
  return synth::generate_ipd(c, rng);
}

void BM_KaplanMeier(benchmark::State& st) {
  const auto recs = cohort(static_cast<int>(st.range(0)), 1);
  for (auto _ : st) benchmark::DoNotOptimize(recon::km_estimate(recs));
}
BENCHMARK(BM_KaplanMeier)->Arg(50)->Arg(800)->Arg(10000);

void BM_Reconstruct(benchmark::State& st) {
  const auto recs = cohort(static_cast<int>(st.range(0)), 2);
  const auto km = recon::km_estimate(recs);
  recon::DigitizedCurve curve;
  curve.points.emplace_back(0.0, 1.0);
  for (std::size_t i = 0; i < km.step_times.size(); ++i) curve.points.emplace_back(km.step_times[i], km.probabilities[i]);
  recon::RiskRow row;
  for (double a = 0; a <= 36; a += 6) {
    row.anchor_times.push_back(a);
    row.counts.push_back(recon::number_at_risk(recs, a));
  }
  for (auto _ : st) benchmark::DoNotOptimize(recon::reconstruct_ipd(curve, row));
}
BENCHMARK(BM_Reconstruct)->Arg(50)->Arg(800);

void BM_Consensus(benchmark::State& st) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 500);
  std::vector<std::pair<double, double>> pts;
  std::vector<int> labels;
  for (int i = 0; i < st.range(0); ++i) {
    pts.emplace_back(u(rng), u(rng));
    labels.push_back(i % 2);
  }
  for (auto _ : st) benchmark::DoNotOptimize(curves::consensus_scores(pts, labels));
}
BENCHMARK(BM_Consensus)->Arg(1000)->Arg(10000);

void BM_RenderPlot(benchmark::State& st) {
  const auto recs = cohort(200, 4);
  for (auto _ : st) benchmark::DoNotOptimize(synth::render_km_plot({recs}));
}
BENCHMARK(BM_RenderPlot);

void BM_Enhance(benchmark::State& st) {
  const auto plot = synth::render_km_plot({cohort(200, 5)});
  for (auto _ : st) benchmark::DoNotOptimize(image::enhance(plot.image));
}
BENCHMARK(BM_Enhance)->Unit(benchmark::kMillisecond);

void BM_MetaSampler(benchmark::State& st) {
  std::vector<std::vector<recon::IPDRecord>> studies{cohort(300, 6), cohort(300, 7), cohort(300, 8)};
  const auto grid = meta::auto_grid(studies);
  const auto stats = meta::bin_ipd(studies, grid);
  meta::SamplerConfig cfg;
  cfg.chains = 1;
  cfg.warmup = 500;
  cfg.draws = 1000;
  for (auto _ : st) benchmark::DoNotOptimize(meta::sample_posterior(stats, grid, cfg));
}
BENCHMARK(BM_MetaSampler)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
