#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>
#include <unistd.h>
#include <json.hpp>

#include "kmgpt/errors.hpp"
#include "kmgpt/pipeline.hpp"
#include "kmgpt/synth.hpp"

using namespace kmgpt;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

synth::RenderedPlot fixture(const std::string& cell, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto cfg = synth::sample_config(synth::GridCell::parse(cell), rng);
  return synth::render_km_plot({synth::generate_ipd(cfg, rng)});
}

fs::path temp_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("kmgpt_pipeline_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

pipeline::PipelineConfig sidecar_config(const std::string& text) {
  pipeline::PipelineConfig c;
  c.provider = pipeline::ProviderKind::Sidecar;
  c.sidecar_text = text;
  c.retry = mmpu::RetryPolicy::immediate();
  return c;
}

}  // namespace

TEST(Pipeline, SidecarRoundTripPasses) {
  const auto plot = fixture("MMM", 1);
  const auto dir = temp_dir("roundtrip");
  std::vector<std::string> states;
  const auto r = pipeline::run_pipeline(plot.image, {}, sidecar_config(synth::sidecar_json(plot)), dir,
                                        [&](const std::string& s) { states.push_back(s); });
  EXPECT_EQ(states, (std::vector<std::string>{"validated", "prepared", "extracted", "reconstructed"}));
  EXPECT_TRUE(r.overlay_pass);
  ASSERT_EQ(r.groups.size(), 1u);
  EXPECT_EQ(static_cast<int>(r.ipd.size()), plot.risk.counts[0][0]);
  const auto score = synth::score(plot.truth[0], recon::km_estimate(r.ipd), plot.metadata.x_end);
  EXPECT_LT(score.iae, 0.03);
  for (const char* f : {"00_input.png", "10_prepped.png", "20_metadata.json", "30_traces.json", "40_ipd.csv",
                        "50_overlay.png", "60_report.json"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  const auto report = json::parse(slurp(dir / "60_report.json"));
  EXPECT_EQ(report["provider"], "sidecar");
  EXPECT_TRUE(report.contains("seed"));
  fs::remove_all(dir);
}

TEST(Pipeline, TwoGroupsSeparate) {
  std::mt19937_64 rng(4);
  const auto cfg = synth::sample_config(synth::GridCell::parse("MMM"), rng);
  auto cfg2 = cfg;
  cfg2.lambda *= 2.0;
  const auto plot = synth::render_km_plot({synth::generate_ipd(cfg, rng, "A"), synth::generate_ipd(cfg2, rng, "B")});
  const auto r = pipeline::run_pipeline(plot.image, {}, sidecar_config(synth::sidecar_json(plot)));
  ASSERT_EQ(r.groups.size(), 2u);
  for (std::size_t g = 0; g < 2; ++g) {
    const auto& gr = r.groups[g];
    const std::size_t truth = gr.group == plot.metadata.groups[0].label ? 0 : 1;
    const auto s = synth::score(plot.truth[truth], recon::km_estimate(gr.reconstruction.records), plot.metadata.x_end);
    EXPECT_LT(s.iae, 0.05) << gr.group;
  }
}

TEST(Pipeline, IpdCsvByteIdenticalAcrossRuns) {
  const auto plot = fixture("LMH", 7);
  const auto a = temp_dir("det_a"), b = temp_dir("det_b");
  auto cfg = sidecar_config(synth::sidecar_json(plot));
  cfg.seed = 42;
  pipeline::run_pipeline(plot.image, {}, cfg, a);
  pipeline::run_pipeline(plot.image, {}, cfg, b);
  EXPECT_EQ(slurp(a / "40_ipd.csv"), slurp(b / "40_ipd.csv"));
  EXPECT_EQ(slurp(a / "60_report.json"), slurp(b / "60_report.json"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Pipeline, FailedValidationStopsUnlessForced) {
  const auto plot = fixture("MMM", 2);
  auto j = json::parse(synth::sidecar_json(plot));
  j["validation"] = {{"ok", false},
                     {"issues", {{{"component", "legend"}, {"message", "legend hidden"}, {"suggestion", "crop"}}}}};
  const auto dir = temp_dir("validate");
  try {
    pipeline::run_pipeline(plot.image, {}, sidecar_config(j.dump()), dir);
    FAIL();
  } catch (const pipeline::StageError& e) {
    EXPECT_EQ(e.stage(), "validate");
    EXPECT_EQ(e.code(), ErrorCode::ValidationFailed);
  }
  EXPECT_TRUE(fs::exists(dir / "60_report.json"));
  EXPECT_FALSE(fs::exists(dir / "40_ipd.csv"));

  auto forced = sidecar_config(j.dump());
  forced.force = true;
  const auto r = pipeline::run_pipeline(plot.image, {}, forced);
  EXPECT_FALSE(r.validation.ok);
  EXPECT_FALSE(r.ipd.empty());
  fs::remove_all(dir);
}

TEST(Pipeline, ProviderFaultTaggedWithStage) {
  const auto plot = fixture("MMM", 2);
  auto scripted = std::make_shared<mmpu::ScriptedProvider>();
  scripted->respond(R"({"ok": true, "issues": []})");
  for (int i = 0; i < 4; ++i) scripted->fail("connection reset");
  pipeline::PipelineConfig cfg;
  cfg.provider = pipeline::ProviderKind::Scripted;
  cfg.scripted = scripted;
  cfg.retry = mmpu::RetryPolicy::immediate();
  try {
    pipeline::run_pipeline(plot.image, {}, cfg);
    FAIL();
  } catch (const pipeline::StageError& e) {
    EXPECT_EQ(e.stage(), "metadata");
    EXPECT_EQ(e.code(), ErrorCode::ProviderError);
    EXPECT_NE(std::string(e.what()).find("metadata"), std::string::npos);
  }
}

TEST(Pipeline, ConfigValidation) {
  pipeline::PipelineConfig c;
  c.provider = pipeline::ProviderKind::Sidecar;
  EXPECT_THROW(c.validate(), Error);
  c.provider = pipeline::ProviderKind::Scripted;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Pipeline, BenchAdapterRunsGridCase) {
  synth::GridOptions o;
  o.cells = {synth::GridCell::parse("MLM")};
  o.reps = 1;
  o.threads = 1;
  const auto s = synth::run_grid(pipeline::bench_pipeline(), o);
  ASSERT_EQ(s.runs.size(), 1u);
  EXPECT_TRUE(s.runs[0].success) << s.runs[0].error;
  EXPECT_LT(s.runs[0].metrics.iae, 0.03);
}
