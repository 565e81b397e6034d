#include "adopt/config.hpp"

#include "adopt/jsonl.hpp"
#include "adopt/selector.hpp"

namespace adopt {
namespace {

template <typename T>
T field(const nlohmann::json& doc, const std::string& scope, const std::string& key,
        const T& fallback) {
  if (!doc.contains(key)) return fallback;
  try {
    return doc.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config field '" + scope + "." + key + "' has the wrong type");
  }
}

}  // namespace

nlohmann::json default_config_json() {
  return {
      {"task",
       {{"pipeline", "scripted_qa"},
        {"pipeline_params", nlohmann::json::object()},
        {"metric", "exact_match"},
        {"train_data", "data/train.jsonl"},
        {"dev_data", "data/dev.jsonl"},
        {"threshold", 1.0}}},
      {"backend",
       {{"kind", "scripted"},
        {"script", "fixtures/script.json"},
        {"base_url", ""},
        {"model", ""},
        {"role_models", nlohmann::json::object()},
        {"temperature", 0.0},
        {"top_p", 1.0},
        {"max_retries", 3},
        {"timeout_seconds", 120}}},
      {"training",
       {{"rounds", 3},
        {"minibatch_size", 4},
        {"patience", 0},
        {"seed", 0},
        {"allocation", "shapley"},
        {"max_pairs_shown", 8},
        {"max_good_traces", 4},
        {"jobs", 1}}},
      {"selector",
       {{"budget", 12}, {"coalition_quota", 6}, {"strategy", "surrogate"}, {"eval_slice", 4}}},
      {"budgets", {{"total", 8}, {"min", 1}}},
      {"steps", {{"*", {{"optimizer", "instruct"}, {"k_demos", 2}}}}},
      {"roles_dir", ""},
      {"initial_prompts", ""},
      {"output_dir", "runs/out"}};
}

RunConfig RunConfig::from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("config root must be a JSON object");
  RunConfig config;

  const auto task = doc.value("task", nlohmann::json::object());
  config.task.pipeline_id = field<std::string>(task, "task", "pipeline", "scripted_qa");
  config.task.pipeline_params = task.value("pipeline_params", nlohmann::json::object());
  config.task.metric_id = field<std::string>(task, "task", "metric", "exact_match");
  config.task.train_data = field<std::string>(task, "task", "train_data", "");
  config.task.dev_data = field<std::string>(task, "task", "dev_data", "");
  // Exact-match tasks partition at 1.0; graded metrics default to 0.5.
  const double threshold_default = config.task.metric_id == "exact_match" ? 1.0 : 0.5;
  config.task.threshold = field<double>(task, "task", "threshold", threshold_default);
  make_task(config.task.pipeline_id, config.task.pipeline_params);  // validates the id
  make_metric(config.task.metric_id);
  if (config.task.threshold < 0.0 || config.task.threshold > 1.0) {
    throw ConfigError("config field 'task.threshold' must be in [0, 1]");
  }

  const auto backend = doc.value("backend", nlohmann::json::object());
  config.backend.kind = field<std::string>(backend, "backend", "kind", "scripted");
  config.backend.script = field<std::string>(backend, "backend", "script", "");
  config.backend.base_url = field<std::string>(backend, "backend", "base_url", "");
  config.backend.default_model = field<std::string>(backend, "backend", "model", "");
  config.backend.temperature = field<double>(backend, "backend", "temperature", 0.0);
  config.backend.top_p = field<double>(backend, "backend", "top_p", 1.0);
  config.backend.max_retries = field<int>(backend, "backend", "max_retries", 3);
  config.backend.timeout_seconds = field<int>(backend, "backend", "timeout_seconds", 120);
  if (backend.contains("role_models")) {
    for (const auto& [role, model] : backend.at("role_models").items()) {
      config.backend.role_models[role] = model.get<std::string>();
    }
  }
  if (config.backend.kind != "scripted" && config.backend.kind != "http") {
    throw ConfigError("config field 'backend.kind' must be \"scripted\" or \"http\"");
  }
  if (config.backend.kind == "scripted" && config.backend.script.empty()) {
    throw ConfigError("config field 'backend.script' is required for the scripted backend");
  }
  if (config.backend.kind == "http" && config.backend.base_url.empty()) {
    throw ConfigError("config field 'backend.base_url' is required for the http backend");
  }
  if (config.backend.temperature != 0.0) {
    throw ConfigError(
        "config field 'backend.temperature' must be 0: responses are cached by request digest, "
        "which requires greedy decoding");
  }
  if (!(config.backend.top_p > 0.0 && config.backend.top_p <= 1.0)) {
    throw ConfigError("config field 'backend.top_p' must be in (0, 1]");
  }

  const auto training = doc.value("training", nlohmann::json::object());
  config.training.rounds = field<int>(training, "training", "rounds", 3);
  config.training.minibatch_size = field<int>(training, "training", "minibatch_size", 4);
  config.training.patience = field<int>(training, "training", "patience", 0);
  config.training.seed = field<std::uint64_t>(training, "training", "seed", 0);
  config.training.allocation = field<std::string>(training, "training", "allocation", "shapley");
  config.training.max_pairs_shown = field<int>(training, "training", "max_pairs_shown", 8);
  config.training.jobs = field<int>(training, "training", "jobs", 1);
  config.training.threshold = config.task.threshold;
  config.max_good_traces = field<int>(training, "training", "max_good_traces", 4);
  if (config.max_good_traces < 1) {
    throw ConfigError("config field 'training.max_good_traces' must be >= 1");
  }

  const auto selector = doc.value("selector", nlohmann::json::object());
  config.training.selector_budget = field<int>(selector, "selector", "budget", 12);
  config.training.coalition_quota = field<int>(selector, "selector", "coalition_quota", 6);
  config.training.strategy =
      parse_strategy(field<std::string>(selector, "selector", "strategy", "surrogate"));
  config.training.eval_slice = field<int>(selector, "selector", "eval_slice", 4);

  const auto budgets = doc.value("budgets", nlohmann::json::object());
  config.training.total_budget = field<int>(budgets, "budgets", "total", 8);
  config.training.b_min = field<int>(budgets, "budgets", "min", 1);

  if (doc.contains("steps")) {
    for (const auto& [step_id, entry] : doc.at("steps").items()) {
      StepConfig step_config;
      step_config.optimizer = field<std::string>(entry, "steps." + step_id, "optimizer", "instruct");
      step_config.k_demos = field<int>(entry, "steps." + step_id, "k_demos", 2);
      config.training.step_configs[step_id] = step_config;
    }
  }

  config.roles_dir = field<std::string>(doc, "", "roles_dir", "");
  config.initial_prompts = field<std::string>(doc, "", "initial_prompts", "");
  config.output_dir = field<std::string>(doc, "", "output_dir", "runs/out");

  const int step_count =
      static_cast<int>(make_task(config.task.pipeline_id, config.task.pipeline_params)
                           .pipeline.steps.size());
  config.training.validate(step_count);
  return config;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  return from_json(read_json_file(path));
}

std::shared_ptr<ModelBackend> RunConfig::make_backend() const {
  if (backend.kind == "scripted") {
    return ScriptedBackend::from_file(backend.script);
  }
  HttpBackendConfig http;
  http.base_url = backend.base_url;
  http.max_retries = backend.max_retries;
  http.timeout_seconds = backend.timeout_seconds;
  return std::make_shared<HttpBackend>(http);
}

GradientEngineOptions RunConfig::engine_options() const {
  GradientEngineOptions options;
  options.max_good_traces = max_good_traces;
  options.role_models = backend.role_models;
  if (backend.kind == "http" && !backend.default_model.empty()) {
    // Every role runs on the configured model unless explicitly overridden.
    for (const char* role : {"e1", "e2", "e3", "e4", "e5", "e6"}) {
      if (options.role_models.find(role) == options.role_models.end()) {
        options.role_models[role] = backend.default_model;
      }
    }
  }
  return options;
}

std::string RunConfig::optimizer_model_ref() const {
  if (auto it = backend.role_models.find("instruct"); it != backend.role_models.end()) {
    return it->second;
  }
  if (backend.kind == "http" && !backend.default_model.empty()) return backend.default_model;
  return "optimizer/instruct";
}

}  // namespace adopt
