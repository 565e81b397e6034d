#include "adopt/backend.hpp"

#include <fstream>
#include <sstream>

#include "adopt/sha256.hpp"
#include "adopt/util.hpp"

namespace adopt {

void ModelRequest::validate() const {
  if (temperature < 0.0) throw ContractError("ModelRequest: temperature must be >= 0");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ContractError("ModelRequest: top_p must be in (0, 1]");
}

std::string request_digest(const ModelRequest& request) {
  // Canonical serialization: fixed field order, length-prefixed strings so
  // that concatenation cannot create collisions between adjacent fields.
  std::ostringstream canon;
  auto put = [&canon](std::string_view s) { canon << s.size() << ':' << s << ';'; };
  put(request.model_ref);
  canon << "t=" << request.temperature << ";p=" << request.top_p << ";s=" << request.seed << ';';
  for (const auto& message : request.messages) {
    put(message.role);
    put(message.content);
  }
  return sha256_hex(canon.str());
}

ModelResponse ModelBackend::complete(const ModelRequest& request) {
  request.validate();
  const std::string key = request_digest(request);

  std::shared_future<ModelResponse> future;
  bool owner = false;
  std::promise<ModelResponse> promise;
  {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = cache_.find(key);
    if (it == cache_.end()) {
      future = promise.get_future().share();
      cache_.emplace(key, future);
      owner = true;
    } else {
      future = it->second;
    }
  }

  if (owner) {
    try {
      calls_.fetch_add(1);
      ModelResponse response = complete_uncached(request);
      response.cached = false;
      promise.set_value(response);
    } catch (...) {
      {
        std::lock_guard<std::mutex> lock(mutex_);
        cache_.erase(key);
      }
      promise.set_exception(std::current_exception());
      throw;
    }
    return future.get();
  }

  ModelResponse response = future.get();
  response.cached = true;
  return response;
}

namespace {

int count_tokens(const std::vector<Message>& messages) {
  int n = 0;
  for (const auto& m : messages) n += static_cast<int>(split_tokens(m.content).size());
  return n;
}

std::string rendered_text(const ModelRequest& request) {
  std::string text;
  for (const auto& m : request.messages) {
    text += m.role;
    text += ": ";
    text += m.content;
    text += '\n';
  }
  return text;
}

/// System message plus the final user message: the live prompt without any
/// in-context demonstration exchanges.
std::string current_text(const ModelRequest& request) {
  std::string text;
  for (const auto& m : request.messages) {
    if (m.role == "system") {
      text += m.role;
      text += ": ";
      text += m.content;
      text += '\n';
    }
  }
  for (auto it = request.messages.rbegin(); it != request.messages.rend(); ++it) {
    if (it->role == "user") {
      text += it->role;
      text += ": ";
      text += it->content;
      text += '\n';
      break;
    }
  }
  return text;
}

}  // namespace

void ScriptedBackend::register_entries(std::vector<ScriptEntry> entries) {
  for (auto& entry : entries) {
    auto [it, inserted] = entries_.emplace(entry.match_key, entry.response);
    if (!inserted) {
      throw ConfigError("duplicate script match_key: " + entry.match_key);
    }
  }
}

void ScriptedBackend::add_rule(ScriptRule rule) { rules_.push_back(std::move(rule)); }

std::shared_ptr<ScriptedBackend> ScriptedBackend::from_json(const nlohmann::json& doc) {
  auto backend = std::make_shared<ScriptedBackend>();
  if (doc.contains("entries")) {
    std::vector<ScriptEntry> entries;
    for (const auto& e : doc.at("entries")) {
      entries.push_back({e.at("match_key").get<std::string>(), e.at("response").get<std::string>()});
    }
    backend->register_entries(std::move(entries));
  }
  if (doc.contains("rules")) {
    for (const auto& r : doc.at("rules")) {
      ScriptRule rule;
      rule.role = r.value("role", "");
      const auto& pattern = r.at("input_pattern");
      if (pattern.is_string()) {
        rule.patterns.push_back(pattern.get<std::string>());
      } else {
        for (const auto& p : pattern) rule.patterns.push_back(p.get<std::string>());
      }
      rule.response = r.at("response").get<std::string>();
      const std::string scope = r.value("scope", "full");
      if (scope == "current") {
        rule.scope = RuleScope::Current;
      } else if (scope != "full") {
        throw ConfigError("script rule scope must be \"full\" or \"current\", got: " + scope);
      }
      backend->add_rule(std::move(rule));
    }
  }
  return backend;
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open script file: " + path.string());
  nlohmann::json doc = nlohmann::json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ConfigError("malformed script file: " + path.string());
  return from_json(doc);
}

std::vector<ScriptEntry> ScriptedBackend::observed_entries() const {
  std::lock_guard<std::mutex> lock(observed_mutex_);
  std::vector<ScriptEntry> out;
  out.reserve(observed_.size());
  for (const auto& [key, response] : observed_) out.push_back({key, response});
  return out;
}

ModelResponse ScriptedBackend::complete_uncached(const ModelRequest& request) {
  const std::string key = request_digest(request);
  ModelResponse response;
  response.tokens.prompt = count_tokens(request.messages);
  response.latency_ms = 0.0;

  auto it = entries_.find(key);
  if (it != entries_.end()) {
    response.text = it->second;
  } else {
    const std::string full = rendered_text(request);
    const std::string current = current_text(request);
    const ScriptRule* hit = nullptr;
    for (const auto& rule : rules_) {
      if (!rule.role.empty() && rule.role != request.model_ref) continue;
      const std::string& text = rule.scope == RuleScope::Current ? current : full;
      bool all = true;
      for (const auto& pattern : rule.patterns) {
        if (!contains(text, pattern)) {
          all = false;
          break;
        }
      }
      if (all) {
        hit = &rule;
        break;
      }
    }
    if (hit == nullptr) {
      throw UnscriptedRequestError(
          "unscripted request for model '" + request.model_ref + "' (digest " + key + ")", key);
    }
    response.text = hit->response;
    std::lock_guard<std::mutex> lock(observed_mutex_);
    observed_.emplace(key, hit->response);
  }
  response.tokens.completion = static_cast<int>(split_tokens(response.text).size());
  return response;
}

}  // namespace adopt
