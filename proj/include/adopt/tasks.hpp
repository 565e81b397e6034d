#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "adopt/pipeline.hpp"

namespace adopt {

struct DataCase {
  std::string input;
  std::string label;
};

using Dataset = std::vector<DataCase>;

/// Registered end-to-end metrics: "exact_match" and "token_f1".
/// Unknown ids raise ConfigError.
double evaluate_metric(const std::string& metric_id, const std::string& prediction,
                       const std::string& label);
TaskMetric make_metric(const std::string& metric_id);

/// JSON Lines records {"input": ..., "label": ...}, order preserved.
Dataset load_dataset(const std::filesystem::path& path);

/// A pipeline plus the starting prompt assignment it ships with.
struct BuiltTask {
  Pipeline pipeline;
  PromptMap initial_prompts;
};

/// Builds a pipeline from the declarative graph form:
///   {"task": "...",
///    "steps": [{"id", "model", "description", "instruction", "input_template"}...],
///    "program": {"type": "chain", "order": [...]} |
///               {"type": "loop", "body": [...], "controller": ..., "exit_pattern": ...,
///                "max_iterations": N, "final": ...}}
/// input_template placeholders: {input}, {history}, and any prior step id.
BuiltTask build_pipeline_graph(const nlohmann::json& definition);

/// Registered pipeline factories: "scripted_qa" (2-step retrieve-then-answer)
/// and "loop_dialogue" (4-step looped dialogue with a sufficiency controller).
BuiltTask make_task(const std::string& factory_id, const nlohmann::json& params = {});
std::vector<std::string> registered_task_ids();

struct TaskSpec {
  std::string pipeline_id;
  std::string metric_id;
  std::filesystem::path train_data;
  std::filesystem::path dev_data;
  double threshold = 1.0;
  nlohmann::json pipeline_params;
};

}  // namespace adopt
