#include <doctest.h>

#include <map>
#include <thread>

#include "adopt/pipeline.hpp"
#include "adopt/tasks.hpp"

using namespace adopt;

namespace {

Pipeline echo_pipeline() {
  Pipeline pipeline;
  pipeline.task_description = "echo";
  pipeline.program = [](StepInvoker&, const std::string& input) { return input; };
  return pipeline;
}

PromptTemplate simple_prompt(const std::string& step_id, const std::string& instruction) {
  PromptTemplate prompt;
  prompt.step_id = step_id;
  prompt.instruction = instruction;
  return prompt;
}

/// Two-step scripted QA fixture shared by several tests.
struct QaFixture {
  BuiltTask task = make_task("scripted_qa");
  std::shared_ptr<ScriptedBackend> backend = std::make_shared<ScriptedBackend>();

  QaFixture() {
    backend->add_rule({"pipeline/retrieve", {"q1"}, "ctx1"});
    backend->add_rule({"pipeline/answer", {"q1", "ctx1"}, "a1"});
    backend->add_rule({"pipeline/retrieve", {"q2"}, "ctx2"});
    backend->add_rule({"pipeline/answer", {"q2", "ctx2"}, "a2"});
  }
};

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("prompt template invariants") {
    CHECK_THROWS_AS(simple_prompt("s", "").validate(), ContractError);
    PromptTemplate prompt = simple_prompt("s", "do it");
    prompt.demonstrations.push_back({"", "out"});
    CHECK_THROWS_AS(prompt.validate(), ContractError);
  }

  TEST_CASE("rendering layout and determinism") {
    PromptTemplate prompt = simple_prompt("s", "instruction text");
    SUBCASE("zero demonstrations") {
      auto messages = render_prompt(prompt, "the input");
      REQUIRE(messages.size() == 2);
      CHECK(messages[0].role == "system");
      CHECK(messages[0].content == "instruction text");
      CHECK(messages[1].role == "user");
      CHECK(messages[1].content == "the input");
    }
    SUBCASE("two demonstrations render as six messages") {
      prompt.demonstrations = {{"i1", "o1"}, {"i2", "o2"}};
      auto messages = render_prompt(prompt, "x");
      REQUIRE(messages.size() == 6);
      CHECK(messages[1].content == "i1");
      CHECK(messages[2].role == "assistant");
      CHECK(messages[2].content == "o1");
      CHECK(messages[5].content == "x");
    }
    SUBCASE("byte-identical across calls") {
      prompt.demonstrations = {{"i1", "o1"}};
      CHECK(render_prompt(prompt, "x") == render_prompt(prompt, "x"));
    }
  }

  TEST_CASE("zero-step program echoes the input") {
    ScriptedBackend backend;
    Trace trace = execute(echo_pipeline(), {}, "hello", backend, 0, "case0");
    CHECK(trace.records.empty());
    CHECK(trace.final_output == "hello");
    CHECK(trace.completed);
  }

  TEST_CASE("two-step scripted qa records the fixture outputs") {
    QaFixture fixture;
    Trace trace =
        execute(fixture.task.pipeline, fixture.task.initial_prompts, "q1", *fixture.backend, 0);
    REQUIRE(trace.records.size() == 2);
    CHECK(trace.records[0].step_id == "retrieve");
    CHECK(trace.records[0].step_output == "ctx1");
    CHECK(trace.records[1].step_id == "answer");
    CHECK(trace.records[1].invocation_index == 0);
    CHECK(trace.final_output == "a1");
  }

  TEST_CASE("replay produces a byte-identical trace") {
    QaFixture fixture;
    Trace a =
        execute(fixture.task.pipeline, fixture.task.initial_prompts, "q1", *fixture.backend, 5, "c");
    Trace b =
        execute(fixture.task.pipeline, fixture.task.initial_prompts, "q1", *fixture.backend, 5, "c");
    CHECK(a.to_json().dump() == b.to_json().dump());
  }

  TEST_CASE("loop programs repeat steps with gap-free invocation indices") {
    BuiltTask task = make_task("loop_dialogue", {{"loop_bound", 3}});
    ScriptedBackend backend;
    backend.add_rule({"pipeline/ask", {}, "next question"});
    backend.add_rule({"pipeline/extract", {}, "a fact"});
    backend.add_rule({"pipeline/decide", {}, "INSUFFICIENT: keep going"});
    backend.add_rule({"pipeline/resolve", {}, "category 3"});

    Trace trace = execute(task.pipeline, task.initial_prompts, "case text", backend, 0);
    CHECK(trace.invocation_count("ask") == 3);
    CHECK(trace.invocation_count("extract") == 3);
    CHECK(trace.invocation_count("decide") == 3);
    CHECK(trace.invocation_count("resolve") == 1);
    for (int k = 0; k < 3; ++k) {
      CHECK(trace.find_record("extract", k) != nullptr);
    }
    CHECK(trace.final_output == "category 3");

    // Every record names a declared step; per-step indices form a gap-free
    // 0..k sequence.
    std::map<std::string, int> next_index;
    for (const auto& record : trace.records) {
      CHECK(task.pipeline.find_step(record.step_id) != nullptr);
      CHECK(record.invocation_index == next_index[record.step_id]);
      next_index[record.step_id] += 1;
    }
  }

  TEST_CASE("loop controller can exit early") {
    BuiltTask task = make_task("loop_dialogue", {{"loop_bound", 3}});
    ScriptedBackend backend;
    backend.add_rule({"pipeline/ask", {}, "q"});
    backend.add_rule({"pipeline/extract", {}, "fact"});
    backend.add_rule({"pipeline/decide", {}, "SUFFICIENT: done"});
    backend.add_rule({"pipeline/resolve", {}, "category 1"});
    Trace trace = execute(task.pipeline, task.initial_prompts, "case", backend, 0);
    CHECK(trace.invocation_count("ask") == 1);
    CHECK(trace.invocation_count("decide") == 1);
  }

  TEST_CASE("undeclared steps are a contract violation") {
    Pipeline pipeline = echo_pipeline();
    pipeline.program = [](StepInvoker& invoker, const std::string& input) {
      return invoker.invoke("ghost", input);
    };
    ScriptedBackend backend;
    CHECK_THROWS_AS(execute(pipeline, {}, "x", backend, 0), ContractError);
  }

  TEST_CASE("backend failures surface the partial trace") {
    QaFixture fixture;
    ScriptedBackend partial;  // only the first step is scripted
    partial.add_rule({"pipeline/retrieve", {"q1"}, "ctx1"});
    try {
      execute(fixture.task.pipeline, fixture.task.initial_prompts, "q1", partial, 0, "c1");
      FAIL("expected ExecutionError");
    } catch (const ExecutionError& error) {
      CHECK_FALSE(error.partial_trace().completed);
      REQUIRE(error.partial_trace().records.size() == 1);
      CHECK(error.partial_trace().records[0].step_output == "ctx1");
    }
  }

  TEST_CASE("score_and_partition splits at the threshold") {
    TaskMetric metric = make_metric("exact_match");
    std::vector<std::pair<Trace, std::string>> cases;
    for (int i = 0; i < 4; ++i) {
      Trace trace;
      trace.case_id = "c" + std::to_string(i);
      trace.final_output = (i < 2) ? "match" : "different";
      trace.completed = true;
      cases.push_back({trace, "match"});
    }
    auto [good, bad] = score_and_partition(cases, metric, 1.0);
    CHECK(good.size() == 2);
    CHECK(bad.size() == 2);
    for (const auto& scored : good) CHECK(scored.score == 1.0);
    for (const auto& scored : bad) CHECK(scored.score == 0.0);
    CHECK_THROWS_AS(score_and_partition(cases, metric, 1.5), ContractError);
  }

  TEST_CASE("concurrent executions keep their traces apart") {
    QaFixture fixture;
    std::vector<Trace> traces(8);
    std::vector<std::thread> threads;
    for (int t = 0; t < 8; ++t) {
      threads.emplace_back([&, t]() {
        std::string input = (t % 2 == 0) ? "q1" : "q2";
        traces[t] = execute(fixture.task.pipeline, fixture.task.initial_prompts, input,
                            *fixture.backend, 0, "case" + std::to_string(t));
      });
    }
    for (auto& thread : threads) thread.join();
    for (int t = 0; t < 8; ++t) {
      CHECK(traces[t].final_output == ((t % 2 == 0) ? "a1" : "a2"));
      CHECK(traces[t].records.size() == 2);
    }
  }

  TEST_CASE("trace persistence round-trips through jsonl") {
    QaFixture fixture;
    Trace trace =
        execute(fixture.task.pipeline, fixture.task.initial_prompts, "q1", *fixture.backend, 3, "c9");
    auto path = std::filesystem::temp_directory_path() / "adopt_traces_test.jsonl";
    save_traces_jsonl(path, {trace});
    auto loaded = load_traces_jsonl(path);
    REQUIRE(loaded.size() == 1);
    CHECK(loaded[0].to_json().dump() == trace.to_json().dump());
    std::filesystem::remove(path);
  }
}
