#include <chrono>
#include <random>

#include <gtest/gtest.h>
#include <json.hpp>

#include "kmgpt/errors.hpp"
#include "kmgpt/mmpu.hpp"
#include "kmgpt/synth.hpp"

using namespace kmgpt;
using namespace kmgpt::mmpu;
using nlohmann::json;

namespace {

synth::RenderedPlot small_plot(std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  auto cfg = synth::sample_config(synth::GridCell::parse("LMM"), rng);
  return synth::render_km_plot({synth::generate_ipd(cfg, rng)});
}

}  // namespace

TEST(Digest, KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(base64_encode({}), "");
  EXPECT_EQ(base64_encode({'f'}), "Zg==");
  EXPECT_EQ(base64_encode({'f', 'o', 'o', 'b', 'a', 'r'}), "Zm9vYmFy");
}

TEST(Retry, RecoversAfterTransientFaults) {
  ScriptedProvider p;
  p.fail("timeout").fail("503").respond(R"({"ok": true, "issues": []})");
  std::vector<std::chrono::milliseconds> slept;
  auto policy = RetryPolicy::immediate();
  policy.sleep = [&](std::chrono::milliseconds d) { slept.push_back(d); };
  const auto r = validate_input(RasterImage(10, 10), p, policy);
  EXPECT_TRUE(r.ok);
  EXPECT_EQ(p.requests().size(), 3u);
  EXPECT_EQ(slept.size(), 2u);
}

TEST(Retry, GivesUpAfterThreeRetriesWithGrowingBackoff) {
  ScriptedProvider p;
  for (int i = 0; i < 5; ++i) p.fail("unreachable");
  RetryPolicy policy;
  std::vector<std::chrono::milliseconds> slept;
  policy.sleep = [&](std::chrono::milliseconds d) { slept.push_back(d); };
  try {
    validate_input(RasterImage(10, 10), p, policy);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ProviderError);
  }
  EXPECT_EQ(p.requests().size(), 4u);
  ASSERT_EQ(slept.size(), 3u);
  EXPECT_LT(slept[0], slept[1]);
  EXPECT_LT(slept[1], slept[2]);
}

TEST(Validate, SidecarVerdicts) {
  const auto plot = small_plot();
  auto sc = SidecarProvider::from_text(synth::sidecar_json(plot));
  const auto ok = validate_input(plot.image, sc, RetryPolicy::immediate());
  EXPECT_TRUE(ok.ok);
  EXPECT_TRUE(ok.issues.empty());

  auto j = json::parse(synth::sidecar_json(plot));
  j["validation"] = {{"ok", false},
                     {"issues", {{{"component", "risk-table"}, {"message", "no table"}, {"suggestion", "include it"}}}}};
  auto defect = SidecarProvider::from_text(j.dump());
  const auto bad = validate_input(plot.image, defect, RetryPolicy::immediate());
  EXPECT_FALSE(bad.ok);
  ASSERT_EQ(bad.issues.size(), 1u);
  EXPECT_EQ(bad.issues[0].component, "risk-table");
}

TEST(Extract, SidecarEqualsGeneratorTruth) {
  const auto plot = small_plot(3);
  auto sc = SidecarProvider::from_text(synth::sidecar_json(plot));
  const auto r = extract_metadata(plot.image, {}, sc, {}, RetryPolicy::immediate());
  EXPECT_EQ(r.metadata, plot.metadata);
  EXPECT_FALSE(r.repaired);
}

TEST(Extract, OneRepairRoundThenSuccess) {
  const auto plot = small_plot();
  auto good = json::parse(metadata_to_json(plot.metadata));
  auto broken = good;
  broken.erase("time_unit");
  ScriptedProvider p;
  p.respond(broken.dump()).respond(good.dump());
  const auto r = extract_metadata(plot.image, {}, p, {}, RetryPolicy::immediate());
  EXPECT_TRUE(r.repaired);
  EXPECT_EQ(r.metadata, plot.metadata);
  const auto reqs = p.requests();
  ASSERT_EQ(reqs.size(), 2u);
  EXPECT_TRUE(reqs[0].repair_error.empty());
  EXPECT_NE(reqs[1].repair_error.find("time_unit"), std::string::npos);
}

TEST(Extract, SecondSchemaViolationFails) {
  const auto plot = small_plot();
  auto broken = json::parse(metadata_to_json(plot.metadata));
  broken.erase("time_unit");
  ScriptedProvider p;
  p.respond(broken.dump()).respond(broken.dump());
  try {
    extract_metadata(plot.image, {}, p, {}, RetryPolicy::immediate());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MetadataSchemaError);
  }
}

TEST(Extract, IncreasingRiskCountsConflict) {
  const auto plot = small_plot();
  auto j = json::parse(metadata_to_json(plot.metadata));
  auto& row = j["risk_table"]["counts"][0];
  row[row.size() - 1] = row[0].get<int>() + 5;
  ScriptedProvider p;
  p.respond(j.dump());
  try {
    extract_metadata(plot.image, {}, p, {}, RetryPolicy::immediate());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MetadataConflict);
  }
}

TEST(Extract, DeterministicForSameScript) {
  const auto plot = small_plot();
  const auto text = metadata_to_json(plot.metadata);
  ScriptedProvider a, b;
  a.respond(text);
  b.respond(text);
  EXPECT_EQ(extract_metadata(plot.image, {}, a, {}, RetryPolicy::immediate()).metadata,
            extract_metadata(plot.image, {}, b, {}, RetryPolicy::immediate()).metadata);
  EXPECT_EQ(a.requests()[0].image_base64, b.requests()[0].image_base64);
}

TEST(CrossCheck, Rules) {
  const geometry::AxisRange ocr{0, 24, 6};
  const std::vector<double> vals{0, 6, 12, 18, 24};
  double s = 0, e = 24;
  EXPECT_TRUE(cross_check_axis(s, e, 6, ocr, vals, 'x').empty());

  // Off by more than one increment: OCR wins.
  s = 0, e = 36;
  auto w = cross_check_axis(s, e, 6, ocr, vals, 'x');
  EXPECT_EQ(e, 24);
  EXPECT_EQ(w.size(), 1u);

  // Within one increment: provider kept with a warning.
  s = 0, e = 30;
  w = cross_check_axis(s, e, 6, ocr, vals, 'x');
  EXPECT_EQ(e, 30);
  EXPECT_EQ(w.size(), 1u);

  // Neither a label nor on the grid.
  s = 0, e = 25;
  try {
    cross_check_axis(s, e, 6, ocr, vals, 'x');
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::MetadataConflict);
  }
}

TEST(Colors, ParseAndMatch) {
  EXPECT_EQ(parse_color("#FF0080").value(), (Rgb{255, 0, 128}));
  EXPECT_TRUE(parse_color("red").has_value());
  EXPECT_FALSE(parse_color("ultraviolet").has_value());

  const std::vector<GroupInfo> groups{{"A", "#dc1414"}, {"B", "#005aa0"}};
  EXPECT_EQ(match_groups(groups, {{0, 90, 160}, {220, 20, 20}}), (std::vector<int>{1, 0}));
  EXPECT_EQ(match_groups(groups, {{220, 20, 20}, {0, 90, 160}}), (std::vector<int>{0, 1}));
  const std::vector<GroupInfo> plain{{"A", std::nullopt}, {"B", std::nullopt}};
  EXPECT_EQ(match_groups(plain, {{0, 90, 160}, {220, 20, 20}}), (std::vector<int>{0, 1}));
}

TEST(Prompts, VersionedTextIsStable) {
  EXPECT_FALSE(inputguard_prompt().empty());
  EXPECT_FALSE(metadata_prompt().empty());
  EXPECT_EQ(sha256_hex(metadata_prompt()), sha256_hex(std::string(metadata_prompt())));
}
