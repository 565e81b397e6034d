#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include <json.hpp>

#include "adopt/backend.hpp"
#include "adopt/gradient.hpp"
#include "adopt/tasks.hpp"
#include "adopt/training.hpp"

namespace adopt {

struct BackendConfig {
  std::string kind = "scripted";  // "scripted" | "http"
  std::string script;             // fixture path for the scripted backend
  std::string base_url;           // for the http backend
  std::string default_model;      // model name http requests use unless overridden
  std::map<std::string, std::string> role_models;  // role id -> model name
  double temperature = 0.0;
  double top_p = 1.0;
  int max_retries = 3;
  int timeout_seconds = 120;
};

/// Fully validated run configuration for the optimize/eval subcommands.
struct RunConfig {
  TaskSpec task;
  BackendConfig backend;
  TrainingConfig training;
  int max_good_traces = 4;                // good traces the dependency role consults
  std::filesystem::path roles_dir;        // empty: built-in default
  std::filesystem::path initial_prompts;  // empty: factory prompts
  std::filesystem::path output_dir = "runs/out";

  /// Parses and validates; raises ConfigError with a field-level message.
  static RunConfig from_json(const nlohmann::json& doc);
  static RunConfig from_file(const std::filesystem::path& path);

  std::shared_ptr<ModelBackend> make_backend() const;
  GradientEngineOptions engine_options() const;
  std::string optimizer_model_ref() const;
};

/// The documented defaults, printed by `adopt config --print-defaults`.
nlohmann::json default_config_json();

}  // namespace adopt
