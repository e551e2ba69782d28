#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kmgpt/metadata.hpp"
#include "kmgpt/ocr.hpp"
#include "kmgpt/plot_geometry.hpp"
#include "kmgpt/raster.hpp"

namespace kmgpt::mmpu {

enum class Task { InputGuard, Metadata };

struct ProviderRequest {
  Task task = Task::Metadata;
  std::string prompt;
  std::string image_base64;  // PNG
  std::string ocr_tokens_json;
  std::string repair_error;  // validator message from a rejected previous answer
};

/// A multi-modal completion backend. Returns the raw JSON text of the answer;
/// throws Error(ProviderError) on transport failure.
class MetadataProvider {
 public:
  virtual ~MetadataProvider() = default;
  virtual std::string name() const = 0;
  virtual std::string complete(const ProviderRequest& request) = 0;
};

struct LiveConfig {
  std::string base_url = "https://api.openai.com";
  std::string path = "/v1/chat/completions";
  std::string model = "gpt-5";
  std::string api_key;  // falls back to KMGPT_API_KEY
  int timeout_seconds = 120;
};

/// Chat-completion style HTTPS endpoint.
class LiveProvider final : public MetadataProvider {
 public:
  explicit LiveProvider(LiveConfig config);
  std::string name() const override { return "live"; }
  std::string complete(const ProviderRequest& request) override;

 private:
  LiveConfig config_;
};

/// Replays a fixed script of answers or faults; records every request.
class ScriptedProvider final : public MetadataProvider {
 public:
  ScriptedProvider& respond(std::string json_text);
  ScriptedProvider& fail(std::string message);
  std::string name() const override { return "scripted"; }
  std::string complete(const ProviderRequest& request) override;
  std::vector<ProviderRequest> requests() const;

 private:
  struct Step {
    bool fault;
    std::string text;
  };
  mutable std::mutex mu_;
  std::deque<Step> script_;
  std::vector<ProviderRequest> seen_;
};

/// Reads authored metadata from a JSON file. An optional "validation" object
/// gives the InputGuard verdict; "validation" and "geometry" are stripped from
/// metadata answers.
class SidecarProvider final : public MetadataProvider {
 public:
  explicit SidecarProvider(std::filesystem::path path);
  static SidecarProvider from_text(std::string json_text);
  std::string name() const override { return "sidecar"; }
  std::string complete(const ProviderRequest& request) override;

 private:
  SidecarProvider() = default;
  std::string text_;
};

/// Caps concurrent live-provider calls process-wide.
class RateLimiter {
 public:
  static RateLimiter& global();
  void set_capacity(int n);
  int capacity() const;
  void acquire();
  void release();

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  int capacity_ = 2;
  int in_flight_ = 0;
};

struct RetryPolicy {
  std::vector<std::chrono::milliseconds> backoff{std::chrono::seconds(1), std::chrono::seconds(4),
                                                 std::chrono::seconds(16)};
  std::function<void(std::chrono::milliseconds)> sleep;  // defaults to this_thread::sleep_for

  static RetryPolicy immediate();
};

/// One initial call plus one retry per backoff entry; ProviderError afterwards.
std::string call_with_retry(MetadataProvider& provider, const ProviderRequest& request,
                            const RetryPolicy& retry);

std::string_view inputguard_prompt();
std::string_view metadata_prompt();
std::string sha256_hex(std::string_view bytes);
std::string base64_encode(const std::vector<std::uint8_t>& bytes);

ValidationReport validate_input(const RasterImage& image, MetadataProvider& provider,
                                const RetryPolicy& retry = {});

/// Numeric evidence read from the figure itself.
struct OcrEvidence {
  std::optional<geometry::AxisRange> x, y;
  std::vector<double> x_values, y_values;
};

struct MetadataResult {
  PlotMetadata metadata;
  std::vector<std::string> warnings;
  bool repaired = false;
};

/// Asks the provider for PlotMetadata, with one repair round on a schema
/// violation, then checks invariants and cross-checks against OCR evidence.
MetadataResult extract_metadata(const RasterImage& image, const std::vector<ocr::OcrToken>& tokens,
                                MetadataProvider& provider, const OcrEvidence& evidence = {},
                                const RetryPolicy& retry = {});

/// Applies the OCR cross-check rules to one axis. Returns warnings; may
/// rewrite start/end. Throws MetadataConflict on an unsupported endpoint.
std::vector<std::string> cross_check_axis(double& start, double& end, double increment,
                                          const geometry::AxisRange& ocr,
                                          const std::vector<double>& ocr_values, char axis);

/// Parses "#rrggbb" or a basic colour name.
std::optional<Rgb> parse_color(const std::string& hint);

/// Maps cluster index -> group index by minimizing total RGB distance between
/// medoid colours and colour hints. Identity when hints are missing.
std::vector<int> match_groups(const std::vector<GroupInfo>& groups, const std::vector<Rgb>& medoids);

}  // namespace kmgpt::mmpu
