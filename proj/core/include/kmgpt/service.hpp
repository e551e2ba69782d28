#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "kmgpt/pipeline.hpp"

namespace kmgpt::service {

/// created -> validated -> prepared -> extracted -> reconstructed, or failed from any state.
struct Job {
  std::string id;
  std::string state = "created";
  std::map<std::string, std::string> stage_paths;  // artifact name -> path
  std::optional<std::string> error;
  std::optional<std::string> failed_stage;
  std::string created_at;
};

std::string job_to_json(const Job& job);

/// Filesystem job store: one directory per job holding job.json and the artifacts.
class JobStore {
 public:
  explicit JobStore(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path dir(const std::string& id) const;

  /// Decodes the upload (InvalidArgument if it is not an image) and stores it as 00_input.png.
  Job create(const std::vector<std::uint8_t>& image_bytes);
  std::optional<Job> get(const std::string& id) const;
  /// Forward-only transitions; "failed" is always allowed.
  void transition(const std::string& id, const std::string& state, std::optional<std::string> error = {},
                  std::optional<std::string> stage = {});
  void set_edits(const std::string& id, const std::string& edits_json);
  std::vector<image::RegionMask> edits(const std::string& id) const;
  RasterImage input(const std::string& id) const;

 private:
  void save(const Job& job) const;
  Job load(const std::string& id) const;
  void refresh_paths(Job& job) const;

  std::filesystem::path root_;
  mutable std::mutex mu_;
};

int state_rank(const std::string& state);

/// Fixed-size worker pool for pipeline runs.
class WorkerPool {
 public:
  explicit WorkerPool(int workers);
  ~WorkerPool();
  void submit(std::function<void()> task);
  void wait_idle();

 private:
  std::mutex mu_;
  std::condition_variable cv_, idle_cv_;
  std::deque<std::function<void()>> queue_;
  std::vector<std::thread> threads_;
  int active_ = 0;
  bool stop_ = false;
};

/// Parses a run request body into a pipeline config. The API key comes from
/// the request header and is never written anywhere.
pipeline::PipelineConfig parse_run_config(const std::string& body, const std::string& provider_key);

/// Runs one stored job to completion, recording state transitions and failures.
void execute_job(JobStore& store, const std::string& id, const pipeline::PipelineConfig& config);

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::filesystem::path job_dir = "jobs";
  int workers = 0;  // 0 = CPU count
  std::size_t max_upload_bytes = 20u << 20;
};

class Service {
 public:
  explicit Service(ServiceConfig config);
  ~Service();

  /// Binds the socket; returns the bound port. Throws Io if the port is busy.
  int bind();
  /// Serves until stop(); bind() must come first.
  void listen();
  void stop();
  void wait_idle();
  JobStore& store();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace kmgpt::service
