#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "adopt/common.hpp"

namespace adopt {

struct Message {
  std::string role;  // "system" | "user" | "assistant"
  std::string content;

  bool operator==(const Message&) const = default;
};

struct TokenCounts {
  int prompt = 0;
  int completion = 0;
};

struct ModelRequest {
  std::string model_ref;
  std::vector<Message> messages;
  double temperature = 0.0;
  double top_p = 1.0;
  std::uint64_t seed = 0;

  void validate() const;  // temperature >= 0, top_p in (0, 1]
};

struct ModelResponse {
  std::string text;
  TokenCounts tokens;
  bool cached = false;
  double latency_ms = 0.0;
};

/// Stable content digest of a request. Canonical field order, so it does not
/// depend on how a request was serialized; the seed is part of the identity.
std::string request_digest(const ModelRequest& request);

/// Completion interface shared by pipeline steps and the optimizer roles.
/// complete() caches by request digest: a repeated request never reaches the
/// underlying backend again (decoding is greedy, so equal requests mean equal
/// responses). Safe for concurrent calls; each cache key is computed once.
class ModelBackend {
 public:
  virtual ~ModelBackend() = default;

  ModelResponse complete(const ModelRequest& request);

  /// Number of requests that reached the underlying backend (cache misses).
  std::size_t call_count() const { return calls_.load(); }

  virtual std::string name() const = 0;

 protected:
  virtual ModelResponse complete_uncached(const ModelRequest& request) = 0;

 private:
  std::mutex mutex_;
  std::unordered_map<std::string, std::shared_future<ModelResponse>> cache_;
  std::atomic<std::size_t> calls_{0};
};

struct ScriptEntry {
  std::string match_key;  // request digest
  std::string response;
};

/// What part of the request a rule's patterns are matched against. Current
/// restricts matching to the system message plus the final user message, so
/// in-context demonstrations cannot trigger rules meant for the live input.
enum class RuleScope { Full, Current };

/// Human-authored fixture rule. Matches when the request's model_ref equals
/// `role` (empty role matches any) and every pattern occurs in the scoped
/// rendered text. Rules are tried in registration order, first match wins.
struct ScriptRule {
  std::string role;
  std::vector<std::string> patterns;
  std::string response;
  RuleScope scope = RuleScope::Full;
};

/// Deterministic offline backend: exact digest entries first, then ordered
/// pattern rules. A miss raises UnscriptedRequestError carrying the digest.
class ScriptedBackend : public ModelBackend {
 public:
  void register_entries(std::vector<ScriptEntry> entries);
  void add_rule(ScriptRule rule);

  /// Loads {"entries": [{match_key, response}...], "rules": [{role, input_pattern, response}...]}.
  /// input_pattern may be a string or an array of strings (all must match).
  static std::shared_ptr<ScriptedBackend> from_json(const nlohmann::json& doc);
  static std::shared_ptr<ScriptedBackend> from_file(const std::filesystem::path& path);

  /// Exact-form entries observed so far: every rule hit, compiled to its
  /// request digest. Useful for freezing a pattern script into digest entries.
  std::vector<ScriptEntry> observed_entries() const;

  std::string name() const override { return "scripted"; }

 protected:
  ModelResponse complete_uncached(const ModelRequest& request) override;

 private:
  std::map<std::string, std::string> entries_;
  std::vector<ScriptRule> rules_;
  mutable std::mutex observed_mutex_;
  std::map<std::string, std::string> observed_;
};

struct HttpBackendConfig {
  std::string base_url;                      // e.g. "http://localhost:8000"
  std::string api_key_env = "ADOPT_API_KEY";
  int max_retries = 3;
  int timeout_seconds = 120;
};

/// OpenAI-compatible chat backend: POST {base_url}/v1/chat/completions with
/// the request's model_ref as the model name. Retries transient failures a
/// bounded number of times, then raises BackendError.
class HttpBackend : public ModelBackend {
 public:
  explicit HttpBackend(HttpBackendConfig config);
  std::string name() const override { return "http"; }

 protected:
  ModelResponse complete_uncached(const ModelRequest& request) override;

 private:
  HttpBackendConfig config_;
};

}  // namespace adopt
