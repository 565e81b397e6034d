#include "adopt/gradient.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "adopt/util.hpp"

namespace adopt {
namespace {

struct RoleSpec {
  const char* role;
  const char* file;
  std::set<std::string> placeholders;
};

const std::vector<RoleSpec>& role_specs() {
  static const std::vector<RoleSpec> specs = {
      {"e1", "e1_pipeline_analysis.txt", {"workflow", "prompts"}},
      {"e2", "e2_dependency.txt", {"task_summary", "step_id", "step_role", "trace"}},
      {"e3", "e3_textual_loss.txt",
       {"case_id", "case_input", "final_output", "label", "metric_id"}},
      {"e4", "e4_global_gradient.txt", {"case_id", "discrepancies"}},
      {"e5", "e5_local_gradient.txt",
       {"case_id", "step_id", "invocation_index", "dependency", "global_gradient", "step_input",
        "step_output", "final_output"}},
      {"e6", "e6_revised_output.txt",
       {"case_id", "step_id", "invocation_index", "local_gradient", "step_input", "step_output"}},
  };
  return specs;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open role template: " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::string format_trace(const Trace& trace) {
  std::ostringstream out;
  out << "case " << trace.case_id << "\ninput: " << trace.input << "\n";
  for (const auto& record : trace.records) {
    out << "  " << record.step_id << "[" << record.invocation_index
        << "] input: " << record.step_input << "\n  " << record.step_id << "["
        << record.invocation_index << "] output: " << record.step_output << "\n";
  }
  out << "final output: " << trace.final_output << "\n";
  return out.str();
}

}  // namespace

RolePrompts RolePrompts::load(const std::filesystem::path& directory) {
  RolePrompts prompts;
  for (const auto& spec : role_specs()) {
    std::string text = read_file(directory / spec.file);
    std::set<std::string> found;
    for (const auto& name : placeholder_names(text)) found.insert(name);
    if (found != spec.placeholders) {
      std::ostringstream message;
      message << "role template " << spec.file << " must use exactly these placeholders:";
      for (const auto& name : spec.placeholders) message << " {" << name << "}";
      message << "; found:";
      for (const auto& name : found) message << " {" << name << "}";
      throw ConfigError(message.str());
    }
    prompts.templates_[spec.role] = std::move(text);
  }
  return prompts;
}

std::filesystem::path RolePrompts::default_directory() {
  if (const char* env = std::getenv("ADOPT_ROLE_DIR"); env != nullptr && *env != '\0') {
    return env;
  }
#ifdef ADOPT_DEFAULT_ROLE_DIR
  return ADOPT_DEFAULT_ROLE_DIR;
#else
  return "assets/roles";
#endif
}

const std::string& RolePrompts::text(const std::string& role) const {
  auto it = templates_.find(role);
  if (it == templates_.end()) throw ConfigError("unknown optimizer role: " + role);
  return it->second;
}

GradientEngine::GradientEngine(RolePrompts prompts, GradientEngineOptions options)
    : prompts_(std::move(prompts)), options_(std::move(options)) {}

std::string GradientEngine::role_model(const std::string& role) const {
  auto it = options_.role_models.find(role);
  return it != options_.role_models.end() ? it->second : "optimizer/" + role;
}

PipelineUnderstanding GradientEngine::analyze_pipeline(const Pipeline& pipeline,
                                                       const PromptMap& prompts,
                                                       ModelBackend& backend) const {
  std::ostringstream workflow;
  workflow << pipeline.task_description << "\nSteps:\n";
  for (const auto& step : pipeline.steps) {
    workflow << "- " << step.step_id << ": " << step.description << "\n";
  }
  std::ostringstream prompt_dump;
  for (const auto& step : pipeline.steps) {
    auto it = prompts.find(step.step_id);
    if (it == prompts.end()) {
      throw ContractError("analyze_pipeline: prompts do not cover step '" + step.step_id + "'");
    }
    prompt_dump << "[" << step.step_id << "] " << it->second.instruction << "\n";
  }

  ModelRequest request;
  request.model_ref = role_model("e1");
  request.messages = {{"user", fill_placeholders(prompts_.text("e1"),
                                                 {{"workflow", workflow.str()},
                                                  {"prompts", prompt_dump.str()}})}};
  std::string reply = backend.complete(request).text;

  PipelineUnderstanding understanding;
  std::istringstream lines(reply);
  std::string line;
  std::map<std::string, std::string> parsed;
  while (std::getline(lines, line)) {
    std::string trimmed = trim(line);
    if (trimmed.rfind("TASK:", 0) == 0) {
      understanding.task_summary = trim(trimmed.substr(5));
      continue;
    }
    std::size_t colon = trimmed.find(':');
    if (colon == std::string::npos) continue;
    parsed[trim(trimmed.substr(0, colon))] = trim(trimmed.substr(colon + 1));
  }
  if (understanding.task_summary.empty()) understanding.task_summary = trim(reply);
  for (const auto& step : pipeline.steps) {
    auto it = parsed.find(step.step_id);
    understanding.step_roles[step.step_id] =
        it != parsed.end() && !it->second.empty()
            ? it->second
            : "(role not identified; declared description: " + step.description + ")";
  }
  return understanding;
}

DependencyReport GradientEngine::analyze_dependencies(const PipelineUnderstanding& understanding,
                                                      const std::vector<ScoredCase>& good_cases,
                                                      ModelBackend& backend) const {
  DependencyReport report;
  if (good_cases.empty()) {
    // Structural fallback: reuse the direct-analysis roles.
    report.structural_only = true;
    report.dependency = understanding.step_roles;
    return report;
  }

  const int limit = std::max(1, options_.max_good_traces);
  std::vector<const ScoredCase*> consulted;
  for (const auto& scored : good_cases) {
    if (static_cast<int>(consulted.size()) >= limit) break;
    consulted.push_back(&scored);
  }
  std::ostringstream traces_text;
  for (const ScoredCase* scored : consulted) {
    traces_text << format_trace(scored->trace) << "\n";
    report.provenance.push_back(scored->trace.case_id);
  }

  for (const auto& [step_id, role] : understanding.step_roles) {
    ModelRequest request;
    request.model_ref = role_model("e2");
    request.messages = {{"user", fill_placeholders(prompts_.text("e2"),
                                                   {{"task_summary", understanding.task_summary},
                                                    {"step_id", step_id},
                                                    {"step_role", role},
                                                    {"trace", traces_text.str()}})}};
    std::string reply = trim(backend.complete(request).text);
    report.dependency[step_id] = reply.empty() ? role : reply;
  }
  return report;
}

TextualLoss GradientEngine::compute_textual_loss(const ScoredCase& bad_case,
                                                 const TaskMetric& metric,
                                                 ModelBackend& backend) const {
  if (bad_case.classification != CaseClass::Bad) {
    throw ContractError("compute_textual_loss: case '" + bad_case.trace.case_id +
                        "' is not a bad case");
  }
  ModelRequest request;
  request.model_ref = role_model("e3");
  request.messages = {{"user", fill_placeholders(prompts_.text("e3"),
                                                 {{"case_id", bad_case.trace.case_id},
                                                  {"case_input", bad_case.trace.input},
                                                  {"final_output", bad_case.trace.final_output},
                                                  {"label", bad_case.label},
                                                  {"metric_id", metric.metric_id}})}};
  std::string reply = backend.complete(request).text;

  TextualLoss loss;
  loss.case_id = bad_case.trace.case_id;
  std::istringstream lines(reply);
  std::string line;
  while (std::getline(lines, line)) {
    std::string trimmed = trim(line);
    if (trimmed.rfind("- ", 0) == 0) loss.discrepancies.push_back(trim(trimmed.substr(2)));
  }
  if (loss.discrepancies.empty()) {
    std::string whole = trim(reply);
    if (whole.empty()) {
      throw BackendError("textual-loss role returned an empty reply for case " + loss.case_id);
    }
    loss.discrepancies.push_back(whole);
  }
  return loss;
}

GlobalGradient GradientEngine::compute_global_gradient(const TextualLoss& loss,
                                                       ModelBackend& backend) const {
  if (loss.discrepancies.empty()) {
    throw ContractError("compute_global_gradient: textual loss has no discrepancies");
  }
  std::ostringstream discrepancies;
  for (const auto& item : loss.discrepancies) discrepancies << "- " << item << "\n";

  ModelRequest request;
  request.model_ref = role_model("e4");
  request.messages = {{"user", fill_placeholders(prompts_.text("e4"),
                                                 {{"case_id", loss.case_id},
                                                  {"discrepancies", discrepancies.str()}})}};
  std::string reply = backend.complete(request).text;

  GlobalGradient gradient;
  gradient.case_id = loss.case_id;
  std::istringstream lines(reply);
  std::string line;
  while (std::getline(lines, line)) {
    std::string trimmed = trim(line);
    if (trimmed.rfind("DIAGNOSIS:", 0) == 0) gradient.diagnosis = trim(trimmed.substr(10));
    if (trimmed.rfind("DIRECTION:", 0) == 0) {
      gradient.correction_direction = trim(trimmed.substr(10));
    }
  }
  if (gradient.diagnosis.empty()) gradient.diagnosis = trim(reply);
  if (gradient.correction_direction.empty()) gradient.correction_direction = trim(reply);
  if (gradient.diagnosis.empty() || gradient.correction_direction.empty()) {
    throw BackendError("global-gradient role returned an empty reply for case " + loss.case_id);
  }
  return gradient;
}

std::vector<LocalGradient> GradientEngine::compute_local_gradients(const GlobalGradient& global,
                                                                   const DependencyReport& report,
                                                                   const Trace& trace,
                                                                   ModelBackend& backend) const {
  if (global.case_id != trace.case_id) {
    throw ContractError("compute_local_gradients: gradient case '" + global.case_id +
                        "' does not match trace case '" + trace.case_id + "'");
  }
  std::vector<LocalGradient> locals;
  locals.reserve(trace.records.size());
  for (const auto& record : trace.records) {
    auto dep = report.dependency.find(record.step_id);
    if (dep == report.dependency.end()) {
      throw ContractError("dependency report has no entry for step '" + record.step_id + "'");
    }
    ModelRequest request;
    request.model_ref = role_model("e5");
    request.messages = {
        {"user", fill_placeholders(prompts_.text("e5"),
                                   {{"case_id", trace.case_id},
                                    {"step_id", record.step_id},
                                    {"invocation_index", std::to_string(record.invocation_index)},
                                    {"dependency", dep->second},
                                    {"global_gradient", global.correction_direction},
                                    {"step_input", record.step_input},
                                    {"step_output", record.step_output},
                                    {"final_output", trace.final_output}})}};
    LocalGradient local;
    local.case_id = trace.case_id;
    local.step_id = record.step_id;
    local.invocation_index = record.invocation_index;
    local.direction = trim(backend.complete(request).text);
    if (local.direction.empty()) {
      throw BackendError("local-gradient role returned an empty reply for case " + trace.case_id);
    }
    locals.push_back(std::move(local));
  }
  return locals;
}

std::vector<RevisedOutput> GradientEngine::generate_revised_outputs(
    const std::vector<LocalGradient>& locals, const Trace& trace, ModelBackend& backend) const {
  std::vector<RevisedOutput> revised;
  revised.reserve(locals.size());
  for (const auto& local : locals) {
    if (local.case_id != trace.case_id) {
      throw ContractError("generate_revised_outputs: local gradient case '" + local.case_id +
                          "' does not match trace case '" + trace.case_id + "'");
    }
    const StepRecord* record = trace.find_record(local.step_id, local.invocation_index);
    if (record == nullptr) {
      throw ContractError("local gradient references missing record " + local.step_id + "[" +
                          std::to_string(local.invocation_index) + "]");
    }
    ModelRequest request;
    request.model_ref = role_model("e6");
    request.messages = {
        {"user", fill_placeholders(prompts_.text("e6"),
                                   {{"case_id", local.case_id},
                                    {"step_id", local.step_id},
                                    {"invocation_index", std::to_string(local.invocation_index)},
                                    {"local_gradient", local.direction},
                                    {"step_input", record->step_input},
                                    {"step_output", record->step_output}})}};
    RevisedOutput output;
    output.case_id = local.case_id;
    output.step_id = local.step_id;
    output.invocation_index = local.invocation_index;
    output.revised_text = trim(backend.complete(request).text);
    if (output.revised_text.empty()) {
      throw BackendError("revised-output role returned an empty reply for case " + local.case_id);
    }
    revised.push_back(std::move(output));
  }
  return revised;
}

std::map<std::string, StepDataset> build_step_datasets(const std::vector<RevisedOutput>& revised,
                                                       const std::vector<Trace>& traces) {
  std::map<std::string, StepDataset> datasets;
  for (const auto& output : revised) {
    const Trace* trace = nullptr;
    for (const auto& candidate : traces) {
      if (candidate.case_id == output.case_id) {
        trace = &candidate;
        break;
      }
    }
    if (trace == nullptr) {
      throw ContractError("revised output references unknown case '" + output.case_id + "'");
    }
    const StepRecord* record = trace->find_record(output.step_id, output.invocation_index);
    if (record == nullptr) {
      throw ContractError("revised output references missing record " + output.step_id + "[" +
                          std::to_string(output.invocation_index) + "] in case '" +
                          output.case_id + "'");
    }
    StepDataset& dataset = datasets[output.step_id];
    dataset.step_id = output.step_id;
    dataset.pairs.push_back({record->step_input, output.revised_text});
  }
  return datasets;
}

}  // namespace adopt
