#include <doctest.h>

#include "adopt/gradient.hpp"
#include "adopt/tasks.hpp"

using namespace adopt;

namespace {

RolePrompts load_roles() { return RolePrompts::load(ADOPT_ROLE_DIR); }

/// Scripted QA fixture with optimizer-role rules for one bad case.
struct EngineFixture {
  BuiltTask task = make_task("scripted_qa");
  std::shared_ptr<ScriptedBackend> backend = std::make_shared<ScriptedBackend>();
  GradientEngine engine{load_roles()};

  EngineFixture() {
    backend->add_rule({"pipeline/retrieve", {"q1"}, "ctx1"});
    backend->add_rule({"pipeline/answer", {"q1"}, "The answer is a1."});
    backend->add_rule({"optimizer/e1", {"retrieve", "answer"},
                       "TASK: answer questions from retrieved context\n"
                       "retrieve: fetches the context passage\n"
                       "answer: produces the final answer"});
    backend->add_rule({"optimizer/e2", {"Step under analysis: retrieve"},
                       "Wrong passages leave the answer step without evidence."});
    backend->add_rule({"optimizer/e2", {"Step under analysis: answer"},
                       "Its output is returned verbatim, so formatting errors pass through."});
    backend->add_rule({"optimizer/e3", {"case bad1"},
                       "- output is a sentence, label is the bare entity\n"
                       "- extra words break exact matching"});
    backend->add_rule({"optimizer/e4", {"extra words"},
                       "DIAGNOSIS: the answer step wraps the entity in prose\n"
                       "DIRECTION: emit only the entity"});
    backend->add_rule({"optimizer/e5", {"Step: retrieve"}, "keep retrieving the same passages"});
    backend->add_rule({"optimizer/e5", {"Step: answer"}, "strip prose, reply with the entity"});
    backend->add_rule({"optimizer/e6", {"Step: retrieve"}, "ctx1"});
    backend->add_rule({"optimizer/e6", {"Step: answer"}, "a1"});
  }

  ScoredCase run_bad_case() {
    Trace trace = execute(task.pipeline, task.initial_prompts, "q1", *backend, 0, "bad1");
    ScoredCase scored;
    scored.trace = trace;
    scored.label = "a1";
    scored.score = 0.0;
    scored.classification = CaseClass::Bad;
    return scored;
  }
};

}  // namespace

TEST_SUITE("gradient") {
  TEST_CASE("role templates validate their placeholder sets") {
    CHECK_NOTHROW(load_roles());
    CHECK_THROWS_AS(RolePrompts::load("/nonexistent/role/dir"), ConfigError);
    RolePrompts roles = load_roles();
    CHECK(roles.text("e1").find("{workflow}") != std::string::npos);
    CHECK_THROWS_AS(roles.text("e7"), ConfigError);
  }

  TEST_CASE("pipeline analysis yields one role per step") {
    EngineFixture fx;
    auto understanding =
        fx.engine.analyze_pipeline(fx.task.pipeline, fx.task.initial_prompts, *fx.backend);
    CHECK(understanding.task_summary == "answer questions from retrieved context");
    REQUIRE(understanding.step_roles.size() == 2);
    CHECK(understanding.step_roles.at("retrieve") == "fetches the context passage");
    CHECK(understanding.step_roles.at("answer") == "produces the final answer");
  }

  TEST_CASE("single-step pipelines get a single role entry") {
    nlohmann::json definition = {
        {"task", "t"},
        {"steps", nlohmann::json::array({{{"id", "solo"}, {"instruction", "do"}}})},
        {"program", {{"type", "chain"}, {"order", nlohmann::json::array({"solo"})}}}};
    BuiltTask task = build_pipeline_graph(definition);
    ScriptedBackend backend;
    backend.add_rule({"optimizer/e1", {}, "TASK: t\nsolo: does everything"});
    GradientEngine engine(load_roles());
    auto understanding = engine.analyze_pipeline(task.pipeline, task.initial_prompts, backend);
    CHECK(understanding.step_roles.size() == 1);
  }

  TEST_CASE("loop pipelines get roles for all four steps") {
    BuiltTask task = make_task("loop_dialogue");
    ScriptedBackend backend;
    backend.add_rule({"optimizer/e1", {},
                      "TASK: triage\nask: asks\nextract: extracts\ndecide: controls the loop\n"
                      "resolve: assigns the category"});
    GradientEngine engine(load_roles());
    auto understanding = engine.analyze_pipeline(task.pipeline, task.initial_prompts, backend);
    REQUIRE(understanding.step_roles.size() == 4);
    CHECK(understanding.step_roles.at("decide") == "controls the loop");
  }

  TEST_CASE("dependency analysis consults good traces") {
    EngineFixture fx;
    auto understanding =
        fx.engine.analyze_pipeline(fx.task.pipeline, fx.task.initial_prompts, *fx.backend);

    SUBCASE("no good cases falls back to the structural roles") {
      auto report = fx.engine.analyze_dependencies(understanding, {}, *fx.backend);
      CHECK(report.structural_only);
      CHECK(report.dependency == understanding.step_roles);
      CHECK(report.provenance.empty());
    }

    SUBCASE("good traces produce the scripted dependency texts") {
      ScoredCase good;
      good.trace = execute(fx.task.pipeline, fx.task.initial_prompts, "q1", *fx.backend, 0, "g1");
      good.label = "The answer is a1.";
      good.score = 1.0;
      good.classification = CaseClass::Good;
      auto report = fx.engine.analyze_dependencies(understanding, {good}, *fx.backend);
      CHECK_FALSE(report.structural_only);
      REQUIRE(report.dependency.size() == 2);
      CHECK(report.dependency.at("retrieve") ==
            "Wrong passages leave the answer step without evidence.");
      CHECK(report.dependency.at("answer") ==
            "Its output is returned verbatim, so formatting errors pass through.");
      CHECK(report.provenance == std::vector<std::string>{"g1"});
    }
  }

  TEST_CASE("textual loss enumerates the scripted discrepancies") {
    EngineFixture fx;
    ScoredCase bad = fx.run_bad_case();
    TaskMetric metric = make_metric("exact_match");
    auto loss = fx.engine.compute_textual_loss(bad, metric, *fx.backend);
    CHECK(loss.case_id == "bad1");
    REQUIRE(loss.discrepancies.size() == 2);
    CHECK(loss.discrepancies[0] == "output is a sentence, label is the bare entity");

    ScoredCase good = bad;
    good.classification = CaseClass::Good;
    CHECK_THROWS_AS(fx.engine.compute_textual_loss(good, metric, *fx.backend), ContractError);
  }

  TEST_CASE("distinct bad cases produce independent losses") {
    EngineFixture fx;
    fx.backend->add_rule({"pipeline/retrieve", {"q2"}, "ctx2"});
    fx.backend->add_rule({"pipeline/answer", {"q2"}, "The answer is a2."});
    fx.backend->add_rule({"optimizer/e3", {"case bad2"}, "- verbose output"});
    ScoredCase bad1 = fx.run_bad_case();
    Trace trace2 = execute(fx.task.pipeline, fx.task.initial_prompts, "q2", *fx.backend, 0, "bad2");
    ScoredCase bad2{trace2, "a2", 0.0, CaseClass::Bad};
    TaskMetric metric = make_metric("exact_match");
    auto loss1 = fx.engine.compute_textual_loss(bad1, metric, *fx.backend);
    auto loss2 = fx.engine.compute_textual_loss(bad2, metric, *fx.backend);
    CHECK(loss1.case_id == "bad1");
    CHECK(loss2.case_id == "bad2");
    CHECK(loss1.discrepancies != loss2.discrepancies);
  }

  TEST_CASE("global gradient parses diagnosis and direction") {
    EngineFixture fx;
    TaskMetric metric = make_metric("exact_match");
    auto loss = fx.engine.compute_textual_loss(fx.run_bad_case(), metric, *fx.backend);
    auto global = fx.engine.compute_global_gradient(loss, *fx.backend);
    CHECK(global.case_id == "bad1");
    CHECK(global.diagnosis == "the answer step wraps the entity in prose");
    CHECK(global.correction_direction == "emit only the entity");
    // Deterministic repeat under the scripted backend.
    auto again = fx.engine.compute_global_gradient(loss, *fx.backend);
    CHECK(again.diagnosis == global.diagnosis);
    CHECK(again.correction_direction == global.correction_direction);
  }

  TEST_CASE("local gradients cover every step record") {
    EngineFixture fx;
    TaskMetric metric = make_metric("exact_match");
    ScoredCase bad = fx.run_bad_case();
    auto understanding =
        fx.engine.analyze_pipeline(fx.task.pipeline, fx.task.initial_prompts, *fx.backend);
    auto report = fx.engine.analyze_dependencies(understanding, {}, *fx.backend);
    auto loss = fx.engine.compute_textual_loss(bad, metric, *fx.backend);
    auto global = fx.engine.compute_global_gradient(loss, *fx.backend);

    auto locals = fx.engine.compute_local_gradients(global, report, bad.trace, *fx.backend);
    REQUIRE(locals.size() == 2);
    CHECK(locals[0].step_id == "retrieve");
    CHECK(locals[0].direction == "keep retrieving the same passages");
    CHECK(locals[1].step_id == "answer");
    CHECK(locals[1].direction == "strip prose, reply with the entity");

    SUBCASE("case mismatch is a contract error") {
      GlobalGradient other = global;
      other.case_id = "other";
      CHECK_THROWS_AS(fx.engine.compute_local_gradients(other, report, bad.trace, *fx.backend),
                      ContractError);
    }
    SUBCASE("zero-record traces produce no gradients") {
      Trace empty;
      empty.case_id = "bad1";
      CHECK(fx.engine.compute_local_gradients(global, report, empty, *fx.backend).empty());
    }
  }

  TEST_CASE("revised outputs pair one-to-one with local gradients") {
    EngineFixture fx;
    TaskMetric metric = make_metric("exact_match");
    ScoredCase bad = fx.run_bad_case();
    auto understanding =
        fx.engine.analyze_pipeline(fx.task.pipeline, fx.task.initial_prompts, *fx.backend);
    auto report = fx.engine.analyze_dependencies(understanding, {}, *fx.backend);
    auto global = fx.engine.compute_global_gradient(
        fx.engine.compute_textual_loss(bad, metric, *fx.backend), *fx.backend);
    auto locals = fx.engine.compute_local_gradients(global, report, bad.trace, *fx.backend);

    auto revised = fx.engine.generate_revised_outputs(locals, bad.trace, *fx.backend);
    REQUIRE(revised.size() == locals.size());
    CHECK(revised[0].revised_text == "ctx1");
    CHECK(revised[1].revised_text == "a1");

    SUBCASE("empty input produces empty output") {
      CHECK(fx.engine.generate_revised_outputs({}, bad.trace, *fx.backend).empty());
    }
    SUBCASE("dangling references are contract errors") {
      LocalGradient dangling{"bad1", "answer", 7, "dir"};
      CHECK_THROWS_AS(fx.engine.generate_revised_outputs({dangling}, bad.trace, *fx.backend),
                      ContractError);
    }
  }

  TEST_CASE("datasets group pairs by step across cases") {
    SUBCASE("zero bad cases yield an empty map") {
      CHECK(build_step_datasets({}, {}).empty());
    }
    SUBCASE("two cases touching two steps each give K=2 per step") {
      std::vector<Trace> traces(2);
      std::vector<RevisedOutput> revised;
      for (int c = 0; c < 2; ++c) {
        traces[c].case_id = "c" + std::to_string(c);
        for (const char* step : {"A", "B"}) {
          StepRecord record;
          record.step_id = step;
          record.invocation_index = 0;
          record.step_input = std::string("x-") + step + std::to_string(c);
          record.step_output = "y";
          traces[c].records.push_back(record);
          revised.push_back({traces[c].case_id, step, 0, std::string("rev-") + step});
        }
      }
      auto datasets = build_step_datasets(revised, traces);
      REQUIRE(datasets.size() == 2);
      CHECK(datasets.at("A").pairs.size() == 2);
      CHECK(datasets.at("B").pairs.size() == 2);
      CHECK(datasets.at("A").pairs[0].input == "x-A0");  // verbatim step input
      CHECK(datasets.at("A").pairs[1].input == "x-A1");
    }
  }

  TEST_CASE("the gradient chain preserves the case id end to end") {
    EngineFixture fx;
    TaskMetric metric = make_metric("exact_match");
    ScoredCase bad = fx.run_bad_case();
    auto understanding =
        fx.engine.analyze_pipeline(fx.task.pipeline, fx.task.initial_prompts, *fx.backend);
    auto report = fx.engine.analyze_dependencies(understanding, {}, *fx.backend);
    auto loss = fx.engine.compute_textual_loss(bad, metric, *fx.backend);
    auto global = fx.engine.compute_global_gradient(loss, *fx.backend);
    auto locals = fx.engine.compute_local_gradients(global, report, bad.trace, *fx.backend);
    auto revised = fx.engine.generate_revised_outputs(locals, bad.trace, *fx.backend);
    CHECK(loss.case_id == "bad1");
    CHECK(global.case_id == "bad1");
    for (const auto& local : locals) CHECK(local.case_id == "bad1");
    for (const auto& output : revised) CHECK(output.case_id == "bad1");
    // |locals| equals |records|; total pairs equals total revised outputs.
    CHECK(locals.size() == bad.trace.records.size());
    auto datasets = build_step_datasets(revised, {bad.trace});
    std::size_t total = 0;
    for (const auto& [step, dataset] : datasets) total += dataset.pairs.size();
    CHECK(total == revised.size());
  }
}
