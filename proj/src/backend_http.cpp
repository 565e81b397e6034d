#include <chrono>
#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "adopt/backend.hpp"

namespace adopt {

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
  if (config_.base_url.empty()) throw ConfigError("http backend: base_url is required");
}

ModelResponse HttpBackend::complete_uncached(const ModelRequest& request) {
  nlohmann::json payload;
  payload["model"] = request.model_ref;
  payload["temperature"] = request.temperature;
  payload["top_p"] = request.top_p;
  payload["seed"] = request.seed;
  auto& messages = payload["messages"] = nlohmann::json::array();
  for (const auto& m : request.messages) {
    messages.push_back({{"role", m.role}, {"content", m.content}});
  }

  httplib::Client client(config_.base_url);
  client.set_connection_timeout(config_.timeout_seconds, 0);
  client.set_read_timeout(config_.timeout_seconds, 0);
  httplib::Headers headers;
  if (const char* key = std::getenv(config_.api_key_env.c_str()); key != nullptr && *key != '\0') {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  std::string last_error;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(250 * (1 << (attempt - 1))));
    }
    auto start = std::chrono::steady_clock::now();
    auto result = client.Post("/v1/chat/completions", headers, payload.dump(), "application/json");
    auto elapsed = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start);
    if (!result) {
      last_error = "transport error: " + httplib::to_string(result.error());
      continue;
    }
    if (result->status >= 500 || result->status == 429) {
      last_error = "server returned status " + std::to_string(result->status);
      continue;
    }
    if (result->status != 200) {
      throw BackendError("chat completion failed with status " + std::to_string(result->status) +
                         ": " + result->body);
    }
    nlohmann::json body = nlohmann::json::parse(result->body, nullptr, false);
    if (body.is_discarded() || !body.contains("choices") || body["choices"].empty()) {
      throw BackendError("chat completion returned an unparsable body");
    }
    ModelResponse response;
    response.text = body["choices"][0].at("message").at("content").get<std::string>();
    if (body.contains("usage")) {
      response.tokens.prompt = body["usage"].value("prompt_tokens", 0);
      response.tokens.completion = body["usage"].value("completion_tokens", 0);
    }
    response.latency_ms = elapsed.count();
    return response;
  }
  throw BackendError("chat completion failed after " + std::to_string(config_.max_retries + 1) +
                     " attempts (" + last_error + ")");
}

}  // namespace adopt
