#include <chrono>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>
#include <json.hpp>
#include <unistd.h>

#include "kmgpt/service.hpp"
#include "kmgpt/synth.hpp"

using namespace kmgpt;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

synth::RenderedPlot fixture(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto cfg = synth::sample_config(synth::GridCell::parse("LMM"), rng);
  return synth::render_km_plot({synth::generate_ipd(cfg, rng)});
}

std::string png_bytes(const RasterImage& img) {
  const auto b = encode_png(img);
  return std::string(b.begin(), b.end());
}

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("kmgpt_service_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    service::ServiceConfig cfg;
    cfg.port = 0;
    cfg.job_dir = dir_;
    cfg.workers = 2;
    svc_ = std::make_unique<service::Service>(cfg);
    port_ = svc_->bind();
    thread_ = std::thread([this] { svc_->listen(); });
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
    for (int i = 0; i < 100 && !client_->Get("/api/jobs/00"); ++i)
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  void TearDown() override {
    svc_->wait_idle();
    svc_->stop();
    thread_.join();
    fs::remove_all(dir_);
  }

  std::string upload(const RasterImage& img) {
    httplib::MultipartFormDataItems items{{"image", png_bytes(img), "plot.png", "image/png"}};
    auto res = client_->Post("/api/jobs", items);
    EXPECT_TRUE(res);
    EXPECT_EQ(res->status, 201);
    return json::parse(res->body)["id"];
  }

  json wait_done(const std::string& id) {
    for (int i = 0; i < 6000; ++i) {
      auto res = client_->Get("/api/jobs/" + id);
      const auto j = json::parse(res->body);
      if (j["state"] == "reconstructed" || j["state"] == "failed") return j;
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    ADD_FAILURE() << "job " << id << " did not finish";
    return {};
  }

  fs::path dir_;
  std::unique_ptr<service::Service> svc_;
  int port_ = 0;
  std::thread thread_;
  std::unique_ptr<httplib::Client> client_;
};

std::string run_body(const synth::RenderedPlot& plot) {
  return json{{"provider", "sidecar"}, {"sidecar", json::parse(synth::sidecar_json(plot))}, {"seed", 1}}.dump();
}

}  // namespace

TEST_F(ServiceTest, UploadRunAndFetchArtifacts) {
  const auto plot = fixture(1);
  const auto id = upload(plot.image);
  auto res = client_->Get("/api/jobs/" + id);
  ASSERT_TRUE(res);
  EXPECT_EQ(json::parse(res->body)["state"], "created");

  res = client_->Get("/api/jobs/" + id + "/ipd.csv");
  EXPECT_EQ(res->status, 404);

  res = client_->Post("/api/jobs/" + id + "/run", run_body(plot), "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 202);
  const auto done = wait_done(id);
  EXPECT_EQ(done["state"], "reconstructed") << done.dump();

  res = client_->Get("/api/jobs/" + id + "/ipd.csv");
  ASSERT_EQ(res->status, 200);
  EXPECT_EQ(res->body.rfind("time,status,group", 0), 0u);
  res = client_->Get("/api/jobs/" + id + "/overlay.png");
  ASSERT_EQ(res->status, 200);
  EXPECT_EQ(res->body.substr(1, 3), "PNG");
  for (const char* a : {"metadata.json", "report.json"}) EXPECT_EQ(client_->Get("/api/jobs/" + id + "/" + a)->status, 200);

  res = client_->Post("/api/jobs/" + id + "/run", run_body(plot), "application/json");
  EXPECT_EQ(res->status, 409);
  res = client_->Post("/api/jobs/" + id + "/edits", R"({"edits": []})", "application/json");
  EXPECT_EQ(res->status, 409);
}

TEST_F(ServiceTest, UnknownJobAndBadUpload) {
  EXPECT_EQ(client_->Get("/api/jobs/abcdef0123")->status, 404);
  EXPECT_EQ(client_->Get("/api/jobs/abcdef0123/report.json")->status, 404);
  EXPECT_EQ(client_->Post("/api/jobs/abcdef0123/run", "{}", "application/json")->status, 404);
  httplib::MultipartFormDataItems items{{"image", "not a png", "x.png", "image/png"}};
  EXPECT_EQ(client_->Post("/api/jobs", items)->status, 400);
}

TEST_F(ServiceTest, EditsAppliedBeforeRun) {
  const auto plot = fixture(2);
  const auto id = upload(plot.image);
  auto res = client_->Post("/api/jobs/" + id + "/edits", R"({"edits": [{"kind": "erase", "points": [[5, 5], [6, 6]], "radius": 2}]})",
                           "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200) << res->body;
  res = client_->Post("/api/jobs/" + id + "/run", run_body(plot), "application/json");
  EXPECT_EQ(res->status, 202);
  EXPECT_EQ(wait_done(id)["state"], "reconstructed");
  EXPECT_TRUE(fs::exists(dir_ / id / "05_edits.json"));
}

TEST_F(ServiceTest, FourConcurrentJobs) {
  std::vector<std::string> ids;
  std::vector<synth::RenderedPlot> plots;
  for (int i = 0; i < 4; ++i) {
    plots.push_back(fixture(10 + i));
    ids.push_back(upload(plots.back().image));
  }
  for (int i = 0; i < 4; ++i)
    EXPECT_EQ(client_->Post("/api/jobs/" + ids[i] + "/run", run_body(plots[i]), "application/json")->status, 202);
  for (const auto& id : ids) EXPECT_EQ(wait_done(id)["state"], "reconstructed");
  std::set<std::string> distinct(ids.begin(), ids.end());
  EXPECT_EQ(distinct.size(), 4u);
}

TEST_F(ServiceTest, ProviderKeyNeverPersisted) {
  // Stand-in chat-completion endpoint answering from the sidecar.
  const auto plot = fixture(3);
  const auto side = json::parse(synth::sidecar_json(plot));
  const std::string key = "sk-test-7f3a9c1e55d04b2b";
  httplib::Server fake;
  std::atomic<int> authorized{0};
  fake.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    if (req.get_header_value("Authorization") == "Bearer " + key) ++authorized;
    const auto body = json::parse(req.body);
    const std::string user = body["messages"][1]["content"][0]["text"];
    json answer;
    if (user.rfind("Validate", 0) == 0) {
      answer = {{"ok", true}, {"issues", json::array()}};
    } else {
      answer = side;
      answer.erase("geometry");
    }
    res.set_content(json{{"choices", {{{"message", {{"content", answer.dump()}}}}}}}.dump(), "application/json");
  });
  const int fake_port = fake.bind_to_any_port("127.0.0.1");
  std::thread ft([&] { fake.listen_after_bind(); });

  const auto id = upload(plot.image);
  httplib::Headers h{{"X-Provider-Key", key}};
  const std::string body =
      json{{"provider", "live"}, {"base_url", "http://127.0.0.1:" + std::to_string(fake_port)}, {"model", "m"}}.dump();
  auto res = client_->Post("/api/jobs/" + id + "/run", h, body, "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 202);
  const auto done = wait_done(id);
  EXPECT_EQ(done["state"], "reconstructed") << done.dump();
  EXPECT_GE(authorized.load(), 2);
  fake.stop();
  ft.join();

  for (const auto& e : fs::recursive_directory_iterator(dir_)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    EXPECT_EQ(ss.str().find(key), std::string::npos) << e.path();
  }
}

TEST(JobStore, ForwardOnlyTransitions) {
  const auto dir = fs::temp_directory_path() / ("kmgpt_store_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  service::JobStore store(dir);
  const auto j = store.create(encode_png(RasterImage(20, 20)));
  store.transition(j.id, "validated");
  store.transition(j.id, "extracted");
  EXPECT_THROW(store.transition(j.id, "prepared"), Error);
  store.transition(j.id, "failed", std::string("boom"), std::string("curves"));
  const auto got = store.get(j.id);
  ASSERT_TRUE(got);
  EXPECT_EQ(got->state, "failed");
  EXPECT_EQ(got->failed_stage.value(), "curves");
  EXPECT_FALSE(store.get("ffff").has_value());
  EXPECT_THROW(store.dir("../etc"), Error);
  fs::remove_all(dir);
}

TEST(RunConfig, Parsing) {
  auto c = service::parse_run_config(R"({"provider": "live", "model": "x"})", "k");
  EXPECT_EQ(c.provider, pipeline::ProviderKind::Live);
  EXPECT_EQ(c.live.api_key, "k");
  EXPECT_THROW(service::parse_run_config(R"({"provider": "sidecar"})", ""), Error);
  EXPECT_THROW(service::parse_run_config("[1]", ""), Error);
  EXPECT_THROW(service::parse_run_config(R"({"provider": "other"})", ""), Error);
}
