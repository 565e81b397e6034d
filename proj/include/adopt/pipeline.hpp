#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "adopt/backend.hpp"
#include "adopt/common.hpp"

namespace adopt {

struct Demonstration {
  std::string input;
  std::string output;

  bool operator==(const Demonstration&) const = default;
};

/// One step's learnable parameters: an instruction plus optional in-context
/// demonstrations. The version counter increases on every accepted update.
struct PromptTemplate {
  std::string step_id;
  std::string instruction;
  std::vector<Demonstration> demonstrations;
  int version = 0;

  void validate() const;
  bool operator==(const PromptTemplate&) const = default;
};

using PromptMap = std::map<std::string, PromptTemplate>;

struct LlmStep {
  std::string step_id;
  std::string model_ref;    // empty: resolved as "pipeline/<step_id>"
  std::string description;  // free-text role hint
};

/// The engine facility a pipeline program calls to reach its LLM steps.
class StepInvoker {
 public:
  virtual ~StepInvoker() = default;
  virtual std::string invoke(const std::string& step_id, const std::string& step_input) = 0;
};

/// Control logic of the pipeline: arbitrary code that requests step
/// invocations through the invoker and returns the final output.
using PipelineProgram = std::function<std::string(StepInvoker&, const std::string& input)>;

struct Pipeline {
  std::string task_description;
  std::vector<LlmStep> steps;
  PipelineProgram program;

  const LlmStep* find_step(const std::string& step_id) const;
  std::string resolved_model_ref(const LlmStep& step) const;
};

struct StepRecord {
  std::string step_id;
  int invocation_index = 0;  // 0-based, per step, per case
  std::string step_input;
  std::string step_output;
  double latency_ms = 0.0;
  TokenCounts tokens;
};

struct Trace {
  std::string case_id;
  std::string input;
  std::string final_output;
  bool completed = false;
  std::uint64_t seed = 0;
  std::vector<StepRecord> records;

  int invocation_count(const std::string& step_id) const;
  const StepRecord* find_record(const std::string& step_id, int invocation_index) const;

  nlohmann::json to_json() const;
  static Trace from_json(const nlohmann::json& doc);
};

enum class CaseClass { Good, Bad };

struct ScoredCase {
  Trace trace;
  std::string label;
  double score = 0.0;
  CaseClass classification = CaseClass::Bad;
};

/// Deterministic end-to-end scoring contract, bounded in [0, 1].
struct TaskMetric {
  std::string metric_id;
  std::function<double(const std::string& final_output, const std::string& label)> score;
};

/// Raised when execution fails mid-program; the partial trace is retained.
class ExecutionError : public Error {
 public:
  ExecutionError(const std::string& what, Trace partial)
      : Error(what), partial_(std::move(partial)) {}
  const Trace& partial_trace() const { return partial_; }

 private:
  Trace partial_;
};

/// Deterministic message rendering: system message with the instruction, then
/// each demonstration as a user/assistant exchange, then the step input.
std::vector<Message> render_prompt(const PromptTemplate& prompt, const std::string& step_input);

/// Runs the pipeline program under the given prompt assignment, recording one
/// StepRecord per LLM invocation in execution order (loops repeat a step with
/// increasing invocation_index).
Trace execute(const Pipeline& pipeline, const PromptMap& prompts, const std::string& input,
              ModelBackend& backend, std::uint64_t seed, const std::string& case_id = "");

/// Splits scored traces at the threshold: score >= threshold is good.
std::pair<std::vector<ScoredCase>, std::vector<ScoredCase>> score_and_partition(
    const std::vector<std::pair<Trace, std::string>>& traces, const TaskMetric& metric,
    double threshold);

/// Trace persistence: one JSON document per line.
void save_traces_jsonl(const std::filesystem::path& path, const std::vector<Trace>& traces);
std::vector<Trace> load_traces_jsonl(const std::filesystem::path& path);

}  // namespace adopt
