#include "adopt/tasks.hpp"

#include <fstream>
#include <map>

#include "adopt/jsonl.hpp"
#include "adopt/util.hpp"

namespace adopt {
namespace {

double exact_match(const std::string& prediction, const std::string& label) {
  return normalize_text(prediction) == normalize_text(label) ? 1.0 : 0.0;
}

double token_f1(const std::string& prediction, const std::string& label) {
  auto pred_tokens = split_tokens(normalize_text(prediction));
  auto label_tokens = split_tokens(normalize_text(label));
  if (pred_tokens.empty() && label_tokens.empty()) return 1.0;
  if (pred_tokens.empty() || label_tokens.empty()) return 0.0;

  std::map<std::string, int> counts;
  for (const auto& token : label_tokens) counts[token] += 1;
  int overlap = 0;
  for (const auto& token : pred_tokens) {
    auto it = counts.find(token);
    if (it != counts.end() && it->second > 0) {
      it->second -= 1;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  double precision = static_cast<double>(overlap) / pred_tokens.size();
  double recall = static_cast<double>(overlap) / label_tokens.size();
  return 2.0 * precision * recall / (precision + recall);
}

}  // namespace

double evaluate_metric(const std::string& metric_id, const std::string& prediction,
                       const std::string& label) {
  if (metric_id == "exact_match") return exact_match(prediction, label);
  if (metric_id == "token_f1") return token_f1(prediction, label);
  throw ConfigError("unknown metric id: " + metric_id);
}

TaskMetric make_metric(const std::string& metric_id) {
  evaluate_metric(metric_id, "", "");  // validates the id
  return TaskMetric{metric_id, [metric_id](const std::string& prediction, const std::string& label) {
                      return evaluate_metric(metric_id, prediction, label);
                    }};
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset: " + path.string());
  Dataset dataset;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    nlohmann::json doc = nlohmann::json::parse(line, nullptr, false);
    if (doc.is_discarded()) {
      throw ConfigError(path.string() + ": malformed JSON on line " + std::to_string(line_no));
    }
    if (!doc.contains("input") || !doc.contains("label") || !doc.at("input").is_string() ||
        !doc.at("label").is_string()) {
      throw ConfigError(path.string() + ": record on line " + std::to_string(line_no) +
                        " is missing a string 'input' or 'label'");
    }
    dataset.push_back({doc.at("input").get<std::string>(), doc.at("label").get<std::string>()});
  }
  return dataset;
}

namespace {

struct GraphStep {
  LlmStep step;
  std::string input_template;
};

std::string render_template(const std::string& tmpl, const std::string& input,
                            const std::map<std::string, std::string>& outputs,
                            const std::string& history) {
  std::map<std::string, std::string> values = outputs;
  values["input"] = input;
  values["history"] = history;
  return fill_placeholders(tmpl, values);
}

}  // namespace

BuiltTask build_pipeline_graph(const nlohmann::json& definition) {
  BuiltTask task;
  task.pipeline.task_description = definition.value("task", "");

  std::vector<GraphStep> graph_steps;
  for (const auto& s : definition.at("steps")) {
    GraphStep gs;
    gs.step.step_id = s.at("id").get<std::string>();
    gs.step.model_ref = s.value("model", "");
    gs.step.description = s.value("description", "");
    gs.input_template = s.value("input_template", "{input}");
    graph_steps.push_back(gs);
    task.pipeline.steps.push_back(gs.step);

    PromptTemplate prompt;
    prompt.step_id = gs.step.step_id;
    prompt.instruction = s.value("instruction", "You are the '" + gs.step.step_id + "' step.");
    prompt.version = 0;
    task.initial_prompts[prompt.step_id] = prompt;
  }

  auto template_of = [graph_steps](const std::string& id) -> std::string {
    for (const auto& gs : graph_steps) {
      if (gs.step.step_id == id) return gs.input_template;
    }
    throw ConfigError("pipeline graph references unknown step '" + id + "'");
  };

  const auto& program = definition.at("program");
  const std::string type = program.at("type").get<std::string>();
  if (type == "chain") {
    std::vector<std::string> order = program.at("order").get<std::vector<std::string>>();
    for (const auto& id : order) template_of(id);
    task.pipeline.program = [order, template_of](StepInvoker& invoker, const std::string& input) {
      std::map<std::string, std::string> outputs;
      std::string history;
      std::string last;
      for (const auto& id : order) {
        std::string step_input = render_template(template_of(id), input, outputs, history);
        last = invoker.invoke(id, step_input);
        outputs[id] = last;
        history += id + ": " + last + "\n";
      }
      return last;
    };
  } else if (type == "loop") {
    std::vector<std::string> body = program.at("body").get<std::vector<std::string>>();
    std::string controller = program.at("controller").get<std::string>();
    std::string final_step = program.at("final").get<std::string>();
    std::string exit_pattern = program.value("exit_pattern", "SUFFICIENT");
    int max_iterations = program.value("max_iterations", 3);
    if (max_iterations < 1) throw ConfigError("loop program: max_iterations must be >= 1");
    for (const auto& id : body) template_of(id);
    template_of(controller);
    template_of(final_step);

    task.pipeline.program = [body, controller, final_step, exit_pattern, max_iterations,
                             template_of](StepInvoker& invoker, const std::string& input) {
      std::map<std::string, std::string> outputs;
      std::string history;
      for (int iteration = 0; iteration < max_iterations; ++iteration) {
        for (const auto& id : body) {
          std::string step_input = render_template(template_of(id), input, outputs, history);
          outputs[id] = invoker.invoke(id, step_input);
          history += id + ": " + outputs[id] + "\n";
        }
        std::string controller_input =
            render_template(template_of(controller), input, outputs, history);
        outputs[controller] = invoker.invoke(controller, controller_input);
        history += controller + ": " + outputs[controller] + "\n";
        // Exit only when the verdict *starts* with the pattern, so an
        // INSUFFICIENT verdict cannot match a SUFFICIENT exit pattern.
        if (trim(outputs[controller]).rfind(exit_pattern, 0) == 0) break;
      }
      std::string final_input = render_template(template_of(final_step), input, outputs, history);
      return invoker.invoke(final_step, final_input);
    };
  } else {
    throw ConfigError("unknown pipeline program type: " + type);
  }
  return task;
}

namespace {

nlohmann::json scripted_qa_definition() {
  return nlohmann::json{
      {"task", "Answer a factual question using a retrieved context passage."},
      {"steps",
       nlohmann::json::array(
           {{{"id", "retrieve"},
             {"description", "Fetches a context passage relevant to the question."},
             {"instruction",
              "Retrieve a short encyclopedia-style passage that answers the question."},
             {"input_template", "{input}"}},
            {{"id", "answer"},
             {"description", "Produces the final answer from the retrieved context."},
             {"instruction",
              "Use the context to answer the question. Reply with a complete sentence that "
              "restates the question."},
             {"input_template", "Context: {retrieve}\nQuestion: {input}"}}})},
      {"program", {{"type", "chain"}, {"order", nlohmann::json::array({"retrieve", "answer"})}}}};
}

nlohmann::json loop_dialogue_definition(int loop_bound) {
  return nlohmann::json{
      {"task",
       "Interview a patient through repeated question rounds and derive a triage category."},
      {"steps",
       nlohmann::json::array(
           {{{"id", "ask"},
             {"description", "Generates the next question from the dialogue so far."},
             {"instruction", "Write the single most informative next question for the patient."},
             {"input_template", "Case: {input}\nDialogue so far:\n{history}"}},
            {{"id", "extract"},
             {"description", "Extracts clinically relevant facts from the latest exchange."},
             {"instruction", "List the key facts the latest exchange reveals about the patient."},
             {"input_template", "Case: {input}\nLatest question: {ask}\nDialogue so far:\n{history}"}},
            {{"id", "decide"},
             {"description", "Loop controller: decides whether enough is known."},
             {"instruction",
              "Decide whether the collected information is sufficient to assign a triage "
              "category. Reply SUFFICIENT or INSUFFICIENT with a short reason."},
             {"input_template", "Collected facts:\n{history}"}},
            {{"id", "resolve"},
             {"description", "Assigns the final triage category."},
             {"instruction", "Assign the triage category implied by the collected facts."},
             {"input_template", "Case: {input}\nCollected facts:\n{history}"}}})},
      {"program",
       {{"type", "loop"},
        {"body", nlohmann::json::array({"ask", "extract"})},
        {"controller", "decide"},
        {"exit_pattern", "SUFFICIENT"},
        {"max_iterations", loop_bound},
        {"final", "resolve"}}}};
}

}  // namespace

BuiltTask make_task(const std::string& factory_id, const nlohmann::json& params) {
  if (factory_id == "scripted_qa") {
    return build_pipeline_graph(scripted_qa_definition());
  }
  if (factory_id == "loop_dialogue") {
    int loop_bound = params.is_object() ? params.value("loop_bound", 3) : 3;
    return build_pipeline_graph(loop_dialogue_definition(loop_bound));
  }
  throw ConfigError("unknown pipeline factory id: " + factory_id);
}

std::vector<std::string> registered_task_ids() { return {"scripted_qa", "loop_dialogue"}; }

}  // namespace adopt
