#include "kmgpt/mmpu.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <numeric>
#include <thread>

#include <httplib.h>
#include <json.hpp>
#include <openssl/evp.h>

#include "kmgpt/errors.hpp"

namespace kmgpt::mmpu {

namespace detail {
extern const std::string_view kInputGuardPromptV1;
extern const std::string_view kMetadataPromptV1;
}  // namespace detail

using nlohmann::json;

std::string_view inputguard_prompt() { return detail::kInputGuardPromptV1; }
std::string_view metadata_prompt() { return detail::kMetadataPromptV1; }

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw Error(ErrorCode::Io, "sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

// ---- providers ------------------------------------------------------------

LiveProvider::LiveProvider(LiveConfig config) : config_(std::move(config)) {
  if (config_.api_key.empty())
    if (const char* k = std::getenv("KMGPT_API_KEY")) config_.api_key = k;
}

std::string LiveProvider::complete(const ProviderRequest& req) {
  if (config_.api_key.empty()) throw Error(ErrorCode::ProviderError, "no API key configured");
  json user = json::array();
  std::string text = req.task == Task::InputGuard ? "Validate this figure." : "Extract the metadata.";
  if (!req.ocr_tokens_json.empty()) text += "\nOCR tokens: " + req.ocr_tokens_json;
  if (!req.repair_error.empty())
    text += "\nYour previous answer was rejected: " + req.repair_error + "\nReturn corrected JSON.";
  user.push_back({{"type", "text"}, {"text", text}});
  user.push_back({{"type", "image_url"},
                  {"image_url", {{"url", "data:image/png;base64," + req.image_base64}}}});
  const json body = {{"model", config_.model},
                     {"messages", json::array({{{"role", "system"}, {"content", req.prompt}},
                                               {{"role", "user"}, {"content", user}}})},
                     {"response_format", {{"type", "json_object"}}}};

  RateLimiter::global().acquire();
  struct Release {
    ~Release() { RateLimiter::global().release(); }
  } release;

  httplib::Client cli(config_.base_url);
  cli.set_connection_timeout(10);
  cli.set_read_timeout(config_.timeout_seconds);
  cli.set_bearer_token_auth(config_.api_key);
  auto res = cli.Post(config_.path, body.dump(), "application/json");
  if (!res) throw Error(ErrorCode::ProviderError, "request failed: " + httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300)
    throw Error(ErrorCode::ProviderError, "HTTP status " + std::to_string(res->status));
  try {
    const json r = json::parse(res->body);
    return r.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ProviderError, std::string("malformed completion: ") + e.what());
  }
}

ScriptedProvider& ScriptedProvider::respond(std::string text) {
  std::lock_guard lock(mu_);
  script_.push_back({false, std::move(text)});
  return *this;
}

ScriptedProvider& ScriptedProvider::fail(std::string message) {
  std::lock_guard lock(mu_);
  script_.push_back({true, std::move(message)});
  return *this;
}

std::string ScriptedProvider::complete(const ProviderRequest& request) {
  std::lock_guard lock(mu_);
  seen_.push_back(request);
  if (script_.empty()) throw Error(ErrorCode::ProviderError, "script exhausted");
  Step s = script_.front();
  script_.pop_front();
  if (s.fault) throw Error(ErrorCode::ProviderError, s.text);
  return s.text;
}

std::vector<ProviderRequest> ScriptedProvider::requests() const {
  std::lock_guard lock(mu_);
  return seen_;
}

SidecarProvider::SidecarProvider(std::filesystem::path path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ProviderError, "cannot read sidecar " + path.string());
  text_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

SidecarProvider SidecarProvider::from_text(std::string json_text) {
  SidecarProvider p;
  p.text_ = std::move(json_text);
  return p;
}

std::string SidecarProvider::complete(const ProviderRequest& request) {
  json j;
  try {
    j = json::parse(text_);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ProviderError, std::string("sidecar is not JSON: ") + e.what());
  }
  if (request.task == Task::InputGuard) {
    if (j.is_object() && j.contains("validation")) return j["validation"].dump();
    return json{{"ok", true}, {"issues", json::array()}}.dump();
  }
  if (j.is_object()) {
    j.erase("validation");
    j.erase("geometry");
  }
  return j.dump();
}

RateLimiter& RateLimiter::global() {
  static RateLimiter limiter;
  return limiter;
}

void RateLimiter::set_capacity(int n) {
  {
    std::lock_guard lock(mu_);
    capacity_ = std::max(1, n);
  }
  cv_.notify_all();
}

int RateLimiter::capacity() const {
  std::lock_guard lock(mu_);
  return capacity_;
}

void RateLimiter::acquire() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return in_flight_ < capacity_; });
  ++in_flight_;
}

void RateLimiter::release() {
  {
    std::lock_guard lock(mu_);
    --in_flight_;
  }
  cv_.notify_one();
}

RetryPolicy RetryPolicy::immediate() {
  RetryPolicy p;
  p.backoff = {std::chrono::milliseconds(0), std::chrono::milliseconds(0),
               std::chrono::milliseconds(0)};
  p.sleep = [](std::chrono::milliseconds) {};
  return p;
}

std::string call_with_retry(MetadataProvider& provider, const ProviderRequest& request,
                            const RetryPolicy& retry) {
  std::string last;
  for (std::size_t attempt = 0;; ++attempt) {
    try {
      return provider.complete(request);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ProviderError) throw;
      last = e.what();
    }
    if (attempt >= retry.backoff.size()) break;
    if (retry.sleep)
      retry.sleep(retry.backoff[attempt]);
    else
      std::this_thread::sleep_for(retry.backoff[attempt]);
  }
  throw Error(ErrorCode::ProviderError, "provider '" + provider.name() + "' failed after " +
                                            std::to_string(retry.backoff.size() + 1) +
                                            " attempts: " + last);
}

// ---- InputGuard -------------------------------------------------------------

ValidationReport validate_input(const RasterImage& image, MetadataProvider& provider,
                                const RetryPolicy& retry) {
  ProviderRequest req;
  req.task = Task::InputGuard;
  req.prompt = std::string(inputguard_prompt());
  req.image_base64 = base64_encode(encode_png(image));
  const std::string answer = call_with_retry(provider, req, retry);
  try {
    return parse_validation(answer);
  } catch (const Error& e) {
    req.repair_error = e.what();
    return parse_validation(call_with_retry(provider, req, retry));
  }
}

// ---- metadata ---------------------------------------------------------------

std::vector<std::string> cross_check_axis(double& start, double& end, double increment,
                                          const geometry::AxisRange& ocr,
                                          const std::vector<double>& values, char axis) {
  (void)increment;
  std::vector<std::string> warnings;
  const double tol = 1e-6 * std::max(1.0, std::abs(ocr.max - ocr.min));
  const std::string name(1, axis);
  auto check = [&](double& v, double ocr_v, const char* which) {
    const double diff = std::abs(v - ocr_v);
    if (diff <= tol) return;
    const bool in_tokens =
        std::any_of(values.begin(), values.end(), [&](double t) { return std::abs(t - v) <= tol; });
    const double k = (v - ocr.min) / ocr.increment;
    const bool on_grid = std::abs(k - std::round(k)) <= 1e-6;
    const std::string field = name + "_" + which;
    if (!in_tokens && !on_grid)
      throw Error(ErrorCode::MetadataConflict,
                  field + "=" + std::to_string(v) + " is neither a tick label nor on the tick grid");
    if (diff > ocr.increment + tol) {
      warnings.push_back(field + ": provider " + std::to_string(v) + " replaced by OCR " +
                         std::to_string(ocr_v));
      v = ocr_v;
    } else {
      warnings.push_back(field + ": provider " + std::to_string(v) + " differs from OCR " +
                         std::to_string(ocr_v) + " within one increment; provider kept");
    }
  };
  check(start, ocr.min, "start");
  check(end, ocr.max, "end");
  return warnings;
}

MetadataResult extract_metadata(const RasterImage& image, const std::vector<ocr::OcrToken>& tokens,
                                MetadataProvider& provider, const OcrEvidence& evidence,
                                const RetryPolicy& retry) {
  ProviderRequest req;
  req.task = Task::Metadata;
  req.prompt = std::string(metadata_prompt());
  req.image_base64 = base64_encode(encode_png(image));
  req.ocr_tokens_json = ocr::tokens_to_json(tokens);

  MetadataResult out;
  const std::string first = call_with_retry(provider, req, retry);
  try {
    out.metadata = parse_metadata(first);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::MetadataSchemaError) throw;
    req.repair_error = e.what();
    out.repaired = true;
    out.metadata = parse_metadata(call_with_retry(provider, req, retry));
  }
  check_invariants(out.metadata);

  auto& m = out.metadata;
  if (evidence.x) {
    auto w = cross_check_axis(m.x_start, m.x_end, m.x_increment, *evidence.x, evidence.x_values, 'x');
    out.warnings.insert(out.warnings.end(), w.begin(), w.end());
  }
  if (evidence.y) {
    auto w = cross_check_axis(m.y_start, m.y_end, m.y_increment, *evidence.y, evidence.y_values, 'y');
    out.warnings.insert(out.warnings.end(), w.begin(), w.end());
  }
  check_invariants(m);
  return out;
}

std::optional<Rgb> parse_color(const std::string& hint) {
  std::string h;
  for (char c : hint) h.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (h.size() == 7 && h[0] == '#') {
    try {
      const unsigned long v = std::stoul(h.substr(1), nullptr, 16);
      return Rgb{static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 8),
                 static_cast<std::uint8_t>(v)};
    } catch (...) {
      return std::nullopt;
    }
  }
  static const std::pair<const char*, Rgb> named[] = {
      {"red", {220, 30, 30}},     {"blue", {30, 60, 200}},    {"green", {30, 150, 50}},
      {"orange", {240, 140, 20}}, {"purple", {130, 50, 160}}, {"black", {0, 0, 0}},
      {"gray", {128, 128, 128}},  {"grey", {128, 128, 128}},  {"yellow", {220, 200, 30}},
      {"brown", {140, 80, 30}},   {"pink", {230, 120, 170}},  {"cyan", {30, 180, 200}},
      {"teal", {0, 128, 128}},    {"magenta", {200, 30, 200}}};
  for (const auto& [name, rgb] : named)
    if (h.find(name) != std::string::npos) return rgb;
  return std::nullopt;
}

std::vector<int> match_groups(const std::vector<GroupInfo>& groups, const std::vector<Rgb>& medoids) {
  const std::size_t k = medoids.size();
  std::vector<int> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  if (groups.size() != k || k > 8) return perm;
  std::vector<Rgb> hints;
  for (const auto& g : groups) {
    if (!g.color_hint) return perm;
    const auto c = parse_color(*g.color_hint);
    if (!c) return perm;
    hints.push_back(*c);
  }
  auto d = [](Rgb a, Rgb b) {
    double s = 0;
    for (int i = 0; i < 3; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
  };
  std::vector<int> best = perm;
  double best_cost = 1e300;
  do {
    double c = 0;
    for (std::size_t i = 0; i < k; ++i) c += d(medoids[i], hints[perm[i]]);
    if (c < best_cost) {
      best_cost = c;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace kmgpt::mmpu
