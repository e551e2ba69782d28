#include "kmgpt/service.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

#include "kmgpt/errors.hpp"

namespace kmgpt::service {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kStates{"created", "validated", "prepared", "extracted", "reconstructed"};

const std::vector<std::string> kArtifacts{"00_input.png",     "05_edits.json", "10_prepped.png",
                                          "20_metadata.json", "30_traces.json", "40_ipd.csv",
                                          "50_overlay.png",   "60_report.json"};

std::string random_id() {
  std::random_device rd;
  std::ostringstream out;
  for (int i = 0; i < 4; ++i) out << std::hex << std::setw(8) << std::setfill('0') << rd();
  return out.str();
}

std::string now_iso() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& p, const std::string& text) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + p.string());
    out << text;
  }
  fs::rename(tmp, p);
}

bool valid_id(const std::string& id) {
  return !id.empty() && id.size() <= 64 &&
         std::all_of(id.begin(), id.end(), [](char c) { return std::isxdigit(static_cast<unsigned char>(c)); });
}

}  // namespace

int state_rank(const std::string& s) {
  for (std::size_t i = 0; i < kStates.size(); ++i)
    if (kStates[i] == s) return static_cast<int>(i);
  return s == "failed" ? 100 : -1;
}

std::string job_to_json(const Job& j) {
  json o = {{"id", j.id}, {"state", j.state}, {"stage_paths", j.stage_paths}, {"created_at", j.created_at}};
  o["error"] = j.error ? json(*j.error) : json(nullptr);
  o["failed_stage"] = j.failed_stage ? json(*j.failed_stage) : json(nullptr);
  return o.dump(2);
}

JobStore::JobStore(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }

fs::path JobStore::dir(const std::string& id) const {
  if (!valid_id(id)) throw Error(ErrorCode::InvalidArgument, "malformed job id");
  return root_ / id;
}

void JobStore::save(const Job& j) const { write_file(dir(j.id) / "job.json", job_to_json(j)); }

Job JobStore::load(const std::string& id) const {
  const auto o = json::parse(read_file(dir(id) / "job.json"));
  Job j;
  j.id = o.at("id").get<std::string>();
  j.state = o.at("state").get<std::string>();
  j.stage_paths = o.at("stage_paths").get<std::map<std::string, std::string>>();
  j.created_at = o.at("created_at").get<std::string>();
  if (!o.at("error").is_null()) j.error = o.at("error").get<std::string>();
  if (!o.at("failed_stage").is_null()) j.failed_stage = o.at("failed_stage").get<std::string>();
  return j;
}

void JobStore::refresh_paths(Job& j) const {
  for (const auto& a : kArtifacts) {
    const fs::path p = dir(j.id) / a;
    if (fs::exists(p)) j.stage_paths[a] = p.string();
  }
}

Job JobStore::create(const std::vector<std::uint8_t>& bytes) {
  const RasterImage img = decode_image(bytes);
  std::lock_guard lock(mu_);
  Job j;
  do j.id = random_id();
  while (fs::exists(root_ / j.id));
  fs::create_directories(dir(j.id));
  write_png(img, dir(j.id) / "00_input.png");
  j.created_at = now_iso();
  refresh_paths(j);
  save(j);
  return j;
}

std::optional<Job> JobStore::get(const std::string& id) const {
  if (!valid_id(id)) return std::nullopt;
  std::lock_guard lock(mu_);
  if (!fs::exists(root_ / id / "job.json")) return std::nullopt;
  Job j = load(id);
  refresh_paths(j);
  return j;
}

void JobStore::transition(const std::string& id, const std::string& state, std::optional<std::string> error,
                          std::optional<std::string> stage) {
  std::lock_guard lock(mu_);
  Job j = load(id);
  const int from = state_rank(j.state), to = state_rank(state);
  if (to < 0) throw Error(ErrorCode::InvalidArgument, "unknown state " + state);
  if (j.state == "failed" || (state != "failed" && to <= from))
    throw Error(ErrorCode::InvalidArgument, "illegal transition " + j.state + " -> " + state);
  j.state = state;
  j.error = std::move(error);
  j.failed_stage = std::move(stage);
  refresh_paths(j);
  save(j);
}

void JobStore::set_edits(const std::string& id, const std::string& edits_json) {
  const auto masks = image::parse_edits(edits_json);
  std::lock_guard lock(mu_);
  const Job j = load(id);
  if (j.state != "created") throw Error(ErrorCode::InvalidArgument, "job already ran; create a new job");
  write_file(dir(id) / "pending_edits.json", image::edits_to_json(masks));
}

std::vector<image::RegionMask> JobStore::edits(const std::string& id) const {
  const fs::path p = dir(id) / "pending_edits.json";
  if (!fs::exists(p)) return {};
  return image::parse_edits(read_file(p));
}

RasterImage JobStore::input(const std::string& id) const { return read_image(dir(id) / "00_input.png"); }

WorkerPool::WorkerPool(int workers) {
  const int n = std::max(1, workers);
  for (int i = 0; i < n; ++i)
    threads_.emplace_back([this] {
      for (;;) {
        std::function<void()> task;
        {
          std::unique_lock lock(mu_);
          cv_.wait(lock, [this] { return stop_ || !queue_.empty(); });
          if (stop_ && queue_.empty()) return;
          task = std::move(queue_.front());
          queue_.pop_front();
          ++active_;
        }
        try {
          task();
        } catch (...) {
        }
        {
          std::lock_guard lock(mu_);
          --active_;
        }
        idle_cv_.notify_all();
      }
    });
}

WorkerPool::~WorkerPool() {
  {
    std::lock_guard lock(mu_);
    stop_ = true;
  }
  cv_.notify_all();
  for (auto& t : threads_) t.join();
}

void WorkerPool::submit(std::function<void()> task) {
  {
    std::lock_guard lock(mu_);
    queue_.push_back(std::move(task));
  }
  cv_.notify_one();
}

void WorkerPool::wait_idle() {
  std::unique_lock lock(mu_);
  idle_cv_.wait(lock, [this] { return queue_.empty() && active_ == 0; });
}

pipeline::PipelineConfig parse_run_config(const std::string& body, const std::string& provider_key) {
  pipeline::PipelineConfig c;
  json o = body.empty() ? json::object() : json::parse(body, nullptr, false);
  if (o.is_discarded() || !o.is_object()) throw Error(ErrorCode::InvalidArgument, "run config must be a JSON object");
  const std::string provider = o.value("provider", std::string("live"));
  c.seed = o.value("seed", std::uint64_t{0});
  c.force = o.value("force", false);
  c.cluster_upweight = o.value("cluster_upweight", false);
  c.overlay_tolerance = o.value("overlay_tolerance", 0.02);
  if (provider == "sidecar") {
    c.provider = pipeline::ProviderKind::Sidecar;
    if (!o.contains("sidecar") || !o["sidecar"].is_object())
      throw Error(ErrorCode::InvalidArgument, "sidecar provider needs a \"sidecar\" object");
    c.sidecar_text = o["sidecar"].dump();
  } else if (provider == "scripted") {
    c.provider = pipeline::ProviderKind::Scripted;
    auto p = std::make_shared<mmpu::ScriptedProvider>();
    for (const auto& step : o.value("script", json::array()))
      p->respond(step.is_string() ? step.get<std::string>() : step.dump());
    c.scripted = p;
  } else if (provider == "live") {
    c.provider = pipeline::ProviderKind::Live;
    if (o.contains("base_url")) c.live.base_url = o["base_url"].get<std::string>();
    if (o.contains("model")) c.live.model = o["model"].get<std::string>();
    c.live.api_key = provider_key;
  } else {
    throw Error(ErrorCode::InvalidArgument, "unknown provider " + provider);
  }
  c.validate();
  return c;
}

void execute_job(JobStore& store, const std::string& id, const pipeline::PipelineConfig& config) {
  try {
    const RasterImage img = store.input(id);
    const auto edits = store.edits(id);
    pipeline::run_pipeline(img, edits, config, store.dir(id),
                           [&](const std::string& s) { store.transition(id, s); });
  } catch (const pipeline::StageError& e) {
    store.transition(id, "failed", e.what(), e.stage());
  } catch (const std::exception& e) {
    store.transition(id, "failed", e.what(), std::string("unknown"));
  }
}

struct Service::Impl {
  ServiceConfig cfg;
  JobStore store;
  WorkerPool pool;
  httplib::Server server;
  std::mutex run_mu;
  bool bound = false;

  explicit Impl(ServiceConfig c)
      : cfg(std::move(c)),
        store(cfg.job_dir),
        pool(cfg.workers > 0 ? cfg.workers : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()))) {
    routes();
  }

  static void send_error(httplib::Response& res, int status, const std::string& msg) {
    res.status = status;
    res.set_content(json{{"error", msg}}.dump(), "application/json");
  }

  void artifact(const std::string& route, const std::string& file, const std::string& mime) {
    server.Get(R"(/api/jobs/([0-9a-fA-F]+)/)" + route, [this, file, mime](const httplib::Request& req,
                                                                          httplib::Response& res) {
      const auto job = store.get(req.matches[1]);
      if (!job) return send_error(res, 404, "unknown job");
      const fs::path p = store.dir(job->id) / file;
      if (!fs::exists(p)) return send_error(res, 404, file + " not available in state " + job->state);
      res.set_content(read_file(p), mime);
    });
  }

  void routes() {
    server.set_payload_max_length(cfg.max_upload_bytes);
    server.Post("/api/jobs", [this](const httplib::Request& req, httplib::Response& res) {
      if (!req.has_file("image")) return send_error(res, 400, "multipart field \"image\" required");
      const auto& f = req.get_file_value("image");
      try {
        const Job j = store.create(std::vector<std::uint8_t>(f.content.begin(), f.content.end()));
        res.status = 201;
        res.set_content(json{{"id", j.id}}.dump(), "application/json");
      } catch (const Error& e) {
        send_error(res, 400, e.what());
      }
    });
    server.Get(R"(/api/jobs/([0-9a-fA-F]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const auto job = store.get(req.matches[1]);
      if (!job) return send_error(res, 404, "unknown job");
      res.set_content(job_to_json(*job), "application/json");
    });
    server.Post(R"(/api/jobs/([0-9a-fA-F]+)/edits)", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      const auto job = store.get(id);
      if (!job) return send_error(res, 404, "unknown job");
      if (job->state != "created") return send_error(res, 409, "job already ran; create a new job");
      try {
        store.set_edits(id, req.body);
        res.set_content(json{{"id", id}, {"edits", json::parse(req.body)}}.dump(), "application/json");
      } catch (const std::exception& e) {
        send_error(res, 400, e.what());
      }
    });
    server.Post(R"(/api/jobs/([0-9a-fA-F]+)/run)", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      const auto job = store.get(id);
      if (!job) return send_error(res, 404, "unknown job");
      pipeline::PipelineConfig cfg;
      try {
        cfg = parse_run_config(req.body, req.get_header_value("X-Provider-Key"));
      } catch (const std::exception& e) {
        return send_error(res, 400, e.what());
      }
      {
        std::lock_guard lock(run_mu);
        if (store.get(id)->state != "created" || fs::exists(store.dir(id) / ".queued"))
          return send_error(res, 409, "job already ran; create a new job");
        std::ofstream(store.dir(id) / ".queued").put('\n');
      }
      pool.submit([this, id, cfg] { execute_job(store, id, cfg); });
      res.status = 202;
      res.set_content(json{{"id", id}, {"state", "queued"}}.dump(), "application/json");
    });
    artifact("overlay.png", "50_overlay.png", "image/png");
    artifact("ipd.csv", "40_ipd.csv", "text/csv");
    artifact("metadata.json", "20_metadata.json", "application/json");
    artifact("report.json", "60_report.json", "application/json");
  }
};

Service::Service(ServiceConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}
Service::~Service() {
  stop();
}

int Service::bind() {
  auto& s = impl_->server;
  int port = impl_->cfg.port;
  if (port == 0) {
    port = s.bind_to_any_port(impl_->cfg.host);
    if (port < 0) throw Error(ErrorCode::Io, "cannot bind " + impl_->cfg.host);
  } else if (!s.bind_to_port(impl_->cfg.host, port)) {
    throw Error(ErrorCode::Io, "cannot bind " + impl_->cfg.host + ":" + std::to_string(port));
  }
  impl_->bound = true;
  return port;
}

void Service::listen() {
  if (!impl_->bound) throw Error(ErrorCode::InvalidArgument, "bind() before listen()");
  impl_->server.listen_after_bind();
}

void Service::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

void Service::wait_idle() { impl_->pool.wait_idle(); }

JobStore& Service::store() { return impl_->store; }

}  // namespace kmgpt::service
