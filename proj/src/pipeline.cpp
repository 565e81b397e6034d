#include "adopt/pipeline.hpp"

#include <algorithm>
#include <set>

#include "adopt/jsonl.hpp"

namespace adopt {

void PromptTemplate::validate() const {
  if (step_id.empty()) throw ContractError("PromptTemplate: step_id must not be empty");
  if (instruction.empty()) {
    throw ContractError("PromptTemplate[" + step_id + "]: instruction must not be empty");
  }
  for (const auto& demo : demonstrations) {
    if (demo.input.empty()) {
      throw ContractError("PromptTemplate[" + step_id + "]: demonstration input must not be empty");
    }
  }
}

const LlmStep* Pipeline::find_step(const std::string& step_id) const {
  for (const auto& step : steps) {
    if (step.step_id == step_id) return &step;
  }
  return nullptr;
}

std::string Pipeline::resolved_model_ref(const LlmStep& step) const {
  return step.model_ref.empty() ? "pipeline/" + step.step_id : step.model_ref;
}

int Trace::invocation_count(const std::string& step_id) const {
  int n = 0;
  for (const auto& record : records) {
    if (record.step_id == step_id) ++n;
  }
  return n;
}

const StepRecord* Trace::find_record(const std::string& step_id, int invocation_index) const {
  for (const auto& record : records) {
    if (record.step_id == step_id && record.invocation_index == invocation_index) return &record;
  }
  return nullptr;
}

nlohmann::json Trace::to_json() const {
  nlohmann::json records_json = nlohmann::json::array();
  for (const auto& r : records) {
    records_json.push_back({{"step_id", r.step_id},
                            {"invocation_index", r.invocation_index},
                            {"step_input", r.step_input},
                            {"step_output", r.step_output},
                            {"latency_ms", r.latency_ms},
                            {"prompt_tokens", r.tokens.prompt},
                            {"completion_tokens", r.tokens.completion}});
  }
  return {{"case_id", case_id},   {"input", input},       {"final_output", final_output},
          {"completed", completed}, {"seed", seed},        {"records", records_json}};
}

Trace Trace::from_json(const nlohmann::json& doc) {
  Trace trace;
  trace.case_id = doc.at("case_id").get<std::string>();
  trace.input = doc.at("input").get<std::string>();
  trace.final_output = doc.value("final_output", "");
  trace.completed = doc.value("completed", false);
  trace.seed = doc.value("seed", std::uint64_t{0});
  for (const auto& r : doc.value("records", nlohmann::json::array())) {
    StepRecord record;
    record.step_id = r.at("step_id").get<std::string>();
    record.invocation_index = r.at("invocation_index").get<int>();
    record.step_input = r.at("step_input").get<std::string>();
    record.step_output = r.at("step_output").get<std::string>();
    record.latency_ms = r.value("latency_ms", 0.0);
    record.tokens.prompt = r.value("prompt_tokens", 0);
    record.tokens.completion = r.value("completion_tokens", 0);
    trace.records.push_back(std::move(record));
  }
  return trace;
}

std::vector<Message> render_prompt(const PromptTemplate& prompt, const std::string& step_input) {
  prompt.validate();
  std::vector<Message> messages;
  messages.reserve(2 + 2 * prompt.demonstrations.size());
  messages.push_back({"system", prompt.instruction});
  for (const auto& demo : prompt.demonstrations) {
    messages.push_back({"user", demo.input});
    messages.push_back({"assistant", demo.output});
  }
  messages.push_back({"user", step_input});
  return messages;
}

namespace {

/// Invoker that renders prompts, talks to the backend, and records every call.
class RecordingInvoker : public StepInvoker {
 public:
  RecordingInvoker(const Pipeline& pipeline, const PromptMap& prompts, ModelBackend& backend,
                   std::uint64_t seed, Trace& trace)
      : pipeline_(pipeline), prompts_(prompts), backend_(backend), seed_(seed), trace_(trace) {}

  std::string invoke(const std::string& step_id, const std::string& step_input) override {
    const LlmStep* step = pipeline_.find_step(step_id);
    if (step == nullptr) {
      throw ContractError("program invoked undeclared step '" + step_id + "'");
    }
    auto prompt_it = prompts_.find(step_id);
    if (prompt_it == prompts_.end()) {
      throw ContractError("no prompt provided for step '" + step_id + "'");
    }

    ModelRequest request;
    request.model_ref = pipeline_.resolved_model_ref(*step);
    request.messages = render_prompt(prompt_it->second, step_input);
    request.seed = seed_;
    ModelResponse response = backend_.complete(request);

    StepRecord record;
    record.step_id = step_id;
    record.invocation_index = counts_[step_id]++;
    record.step_input = step_input;
    record.step_output = response.text;
    record.latency_ms = response.latency_ms;
    record.tokens = response.tokens;
    trace_.records.push_back(std::move(record));
    return response.text;
  }

 private:
  const Pipeline& pipeline_;
  const PromptMap& prompts_;
  ModelBackend& backend_;
  std::uint64_t seed_;
  Trace& trace_;
  std::map<std::string, int> counts_;
};

}  // namespace

Trace execute(const Pipeline& pipeline, const PromptMap& prompts, const std::string& input,
              ModelBackend& backend, std::uint64_t seed, const std::string& case_id) {
  {
    std::set<std::string> ids;
    for (const auto& step : pipeline.steps) {
      if (!ids.insert(step.step_id).second) {
        throw ContractError("duplicate step_id in pipeline: " + step.step_id);
      }
      if (prompts.find(step.step_id) == prompts.end()) {
        throw ContractError("prompts do not cover step '" + step.step_id + "'");
      }
    }
  }
  if (!pipeline.program) throw ContractError("pipeline has no program");

  Trace trace;
  trace.case_id = case_id;
  trace.input = input;
  trace.seed = seed;

  RecordingInvoker invoker(pipeline, prompts, backend, seed, trace);
  try {
    trace.final_output = pipeline.program(invoker, input);
    trace.completed = true;
  } catch (const ContractError&) {
    throw;
  } catch (const std::exception& error) {
    throw ExecutionError(std::string("pipeline execution failed: ") + error.what(), trace);
  }
  return trace;
}

std::pair<std::vector<ScoredCase>, std::vector<ScoredCase>> score_and_partition(
    const std::vector<std::pair<Trace, std::string>>& traces, const TaskMetric& metric,
    double threshold) {
  if (threshold < 0.0 || threshold > 1.0) {
    throw ContractError("score_and_partition: threshold must be in [0, 1]");
  }
  std::vector<ScoredCase> good;
  std::vector<ScoredCase> bad;
  for (const auto& [trace, label] : traces) {
    ScoredCase scored;
    scored.trace = trace;
    scored.label = label;
    scored.score = metric.score(trace.final_output, label);
    scored.classification = scored.score >= threshold ? CaseClass::Good : CaseClass::Bad;
    (scored.classification == CaseClass::Good ? good : bad).push_back(std::move(scored));
  }
  return {std::move(good), std::move(bad)};
}

void save_traces_jsonl(const std::filesystem::path& path, const std::vector<Trace>& traces) {
  std::vector<nlohmann::json> records;
  records.reserve(traces.size());
  for (const auto& trace : traces) records.push_back(trace.to_json());
  write_jsonl(path, records);
}

std::vector<Trace> load_traces_jsonl(const std::filesystem::path& path) {
  std::vector<Trace> traces;
  for (const auto& doc : read_jsonl(path)) traces.push_back(Trace::from_json(doc));
  return traces;
}

}  // namespace adopt
