#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "adopt/config.hpp"
#include "adopt/util.hpp"
#include "adopt/training.hpp"

using namespace adopt;

namespace {

const std::filesystem::path kFixtures = ADOPT_FIXTURE_DIR;

TrainingConfig qa_training_config() {
  TrainingConfig config;
  config.rounds = 3;
  config.minibatch_size = 4;
  config.threshold = 1.0;
  config.selector_budget = 12;
  config.coalition_quota = 6;
  config.total_budget = 8;
  config.b_min = 1;
  config.eval_slice = 4;
  config.seed = 0;
  config.step_configs["*"] = {"instruct", 0};
  return config;
}

struct TrainingFixture {
  BuiltTask task = make_task("scripted_qa");
  std::shared_ptr<ScriptedBackend> backend =
      ScriptedBackend::from_file(kFixtures / "scripted_qa_script.json");
  Dataset train = load_dataset(kFixtures / "qa_train.jsonl");
  Dataset dev = load_dataset(kFixtures / "qa_dev.jsonl");

  Trainer make_trainer(TrainingConfig config = qa_training_config()) {
    return Trainer(task.pipeline, make_metric("exact_match"),
                   GradientEngine(RolePrompts::load(ADOPT_ROLE_DIR)), config, *backend);
  }
};

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("config validation reports infeasible settings") {
    TrainingConfig config = qa_training_config();
    config.total_budget = 1;  // below 2 steps * b_min
    CHECK_THROWS_AS(config.validate(2), ConfigError);
    config = qa_training_config();
    config.coalition_quota = 1;
    CHECK_THROWS_AS(config.validate(2), ConfigError);
    config = qa_training_config();
    config.selector_budget = 4;
    config.coalition_quota = 6;
    CHECK_THROWS_AS(config.validate(2), ConfigError);
    CHECK_NOTHROW(qa_training_config().validate(2));
  }

  TEST_CASE("round one fixes the answer step and lifts the dev score") {
    TrainingFixture fx;
    Trainer trainer = fx.make_trainer();
    TrainingState state = trainer.initial_state(fx.task.initial_prompts);
    CHECK(state.budgets == std::vector<int>{4, 4});

    auto [next, report] = trainer.run_round(state, fx.train, fx.dev);
    CHECK(report.status == "ok");
    CHECK(report.round == 1);
    CHECK(report.good_count == 0);
    CHECK(report.bad_count == 4);
    CHECK(report.dev_score == doctest::Approx(1.0));
    CHECK(report.evaluator_calls == 12);
    // Each bad case contributed one pair per step invocation.
    CHECK(report.dataset_sizes.at("retrieve") == 4);
    CHECK(report.dataset_sizes.at("answer") == 4);

    // The accepted answer prompt is the rewrite that asks for the bare entity.
    const PromptTemplate& accepted = next.current_prompts.at("answer");
    CHECK(accepted.instruction ==
          "Reply with only the exact entity or value asked for, with no extra words.");
    CHECK(accepted.version == 1);
    CHECK(next.current_prompts.at("retrieve").version == 0);  // incumbent retained
    CHECK(next.best_dev_score == doctest::Approx(1.0));

    // Attribution concentrated on the answer step, so it gets the budget.
    REQUIRE(next.last_phi.size() == 2);
    CHECK(next.last_phi[1] > next.last_phi[0]);
    CHECK(next.budgets[0] + next.budgets[1] == 8);
    CHECK(next.budgets[1] > next.budgets[0]);
  }

  TEST_CASE("a round with zero bad cases is a recorded no-op") {
    TrainingFixture fx;
    TrainingConfig config = qa_training_config();
    config.threshold = 0.0;  // every case scores >= 0, so everything is good
    Trainer trainer = fx.make_trainer(config);
    TrainingState state = trainer.initial_state(fx.task.initial_prompts);
    auto [next, report] = trainer.run_round(state, fx.train, fx.dev);
    CHECK(report.status == "no_op");
    CHECK(report.bad_count == 0);
    CHECK(next.current_prompts == state.current_prompts);
    CHECK(next.budgets == state.budgets);
  }

  TEST_CASE("identical seeds reproduce the round report byte for byte") {
    TrainingFixture fx_a, fx_b;
    Trainer trainer_a = fx_a.make_trainer();
    Trainer trainer_b = fx_b.make_trainer();
    auto [state_a, report_a] =
        trainer_a.run_round(trainer_a.initial_state(fx_a.task.initial_prompts), fx_a.train, fx_a.dev);
    auto [state_b, report_b] =
        trainer_b.run_round(trainer_b.initial_state(fx_b.task.initial_prompts), fx_b.train, fx_b.dev);
    CHECK(report_a.to_json(trainer_a.step_order()).dump() ==
          report_b.to_json(trainer_b.step_order()).dump());
  }

  TEST_CASE("training runs three rounds with a monotone best-so-far score") {
    TrainingFixture fx;
    Trainer trainer = fx.make_trainer();
    TrainingResult result = trainer.run_training(fx.task.initial_prompts, fx.train, fx.dev);
    REQUIRE(result.reports.size() == 3);
    double best = -1.0;
    for (const auto& report : result.reports) {
      CHECK(report.dev_score >= best);  // fixed dev slice: the score never regresses
      best = std::max(best, report.dev_score);
    }
    CHECK(result.best_dev_score == doctest::Approx(1.0));
    CHECK(result.final_prompts.at("answer").instruction ==
          "Reply with only the exact entity or value asked for, with no extra words.");
    // Budget conservation in every round.
    for (const auto& report : result.reports) {
      int total = 0;
      for (const auto& [step, b] : report.budgets) {
        total += b;
        CHECK(b >= 1);
      }
      CHECK(total == 8);
    }
  }

  TEST_CASE("zero rounds return the initial prompts unchanged") {
    TrainingFixture fx;
    TrainingConfig config = qa_training_config();
    config.rounds = 0;
    Trainer trainer = fx.make_trainer(config);
    TrainingResult result = trainer.run_training(fx.task.initial_prompts, fx.train, fx.dev);
    CHECK(result.reports.empty());
    CHECK(result.final_prompts == fx.task.initial_prompts);
  }

  TEST_CASE("patience stops a plateaued run after the second round") {
    TrainingFixture fx;
    TrainingConfig config = qa_training_config();
    config.threshold = 0.0;  // all rounds are no-ops
    config.patience = 1;
    config.rounds = 6;
    Trainer trainer = fx.make_trainer(config);
    TrainingResult result = trainer.run_training(fx.task.initial_prompts, fx.train, fx.dev);
    // Round 1 sets the baseline (counts as improvement), round 2 plateaus.
    CHECK(result.reports.size() == 2);
  }

  TEST_CASE("a backend failure aborts the round and keeps the state") {
    TrainingFixture fx;
    auto broken = std::make_shared<ScriptedBackend>();  // pipeline rules only, roles missing
    broken->add_rule({"pipeline/retrieve", {}, "some passage"});
    broken->add_rule({"pipeline/answer", {}, "Some verbose sentence."});
    Trainer trainer(fx.task.pipeline, make_metric("exact_match"),
                    GradientEngine(RolePrompts::load(ADOPT_ROLE_DIR)), qa_training_config(),
                    *broken);
    TrainingState state = trainer.initial_state(fx.task.initial_prompts);
    auto [next, report] = trainer.run_round(state, fx.train, fx.dev);
    CHECK(report.status.rfind("failed:", 0) == 0);
    CHECK(next.current_prompts == state.current_prompts);
    CHECK(next.budgets == state.budgets);
    CHECK(next.round == 1);
  }

  TEST_CASE("prompt bundles round-trip") {
    TrainingFixture fx;
    auto bundle = prompt_bundle_to_json(fx.task.initial_prompts);
    PromptMap loaded = prompt_map_from_bundle(bundle);
    CHECK(loaded == fx.task.initial_prompts);
  }

  TEST_CASE("a joint-optimizer round attaches demonstrations and still improves") {
    TrainingFixture fx;
    TrainingConfig config = qa_training_config();
    config.step_configs["answer"] = {"joint", 2};
    Trainer trainer = fx.make_trainer(config);
    auto [next, report] =
        trainer.run_round(trainer.initial_state(fx.task.initial_prompts), fx.train, fx.dev);
    CHECK(report.status == "ok");
    CHECK(report.dev_score == doctest::Approx(1.0));
    const PromptTemplate& accepted = next.current_prompts.at("answer");
    CHECK(accepted.instruction ==
          "Reply with only the exact entity or value asked for, with no extra words.");
    REQUIRE(accepted.demonstrations.size() == 2);
    // Demonstrations are verbatim (input, revised output) pairs.
    for (const auto& demo : accepted.demonstrations) {
      CHECK(contains(demo.input, "Question:"));
      CHECK(demo.output == "the exact entity with no surrounding words");
    }
  }

  TEST_CASE("training optimizes a loop pipeline end to end") {
    BuiltTask task = make_task("loop_dialogue", {{"loop_bound", 3}});
    auto backend = ScriptedBackend::from_file(kFixtures / "loop_dialogue_script.json");
    Dataset train = load_dataset(kFixtures / "loop_train.jsonl");
    Dataset dev = load_dataset(kFixtures / "loop_dev.jsonl");

    TrainingConfig config;
    config.rounds = 2;
    config.minibatch_size = 1;
    config.threshold = 1.0;
    config.selector_budget = 12;
    config.coalition_quota = 6;
    config.total_budget = 8;
    config.eval_slice = 1;
    config.seed = 0;
    config.step_configs["*"] = {"instruct", 0};

    Trainer trainer(task.pipeline, make_metric("exact_match"),
                    GradientEngine(RolePrompts::load(ADOPT_ROLE_DIR)), config, *backend);
    TrainingResult result = trainer.run_training(task.initial_prompts, train, dev);

    REQUIRE(result.reports.size() == 2);
    CHECK(result.reports[0].status == "ok");
    CHECK(result.reports[0].bad_count == 1);
    // Loop steps pooled one supervision pair per invocation (3 each), the
    // resolver one.
    CHECK(result.reports[0].dataset_sizes.at("ask") == 3);
    CHECK(result.reports[0].dataset_sizes.at("extract") == 3);
    CHECK(result.reports[0].dataset_sizes.at("decide") == 3);
    CHECK(result.reports[0].dataset_sizes.at("resolve") == 1);

    CHECK(result.best_dev_score == doctest::Approx(1.0));
    CHECK(contains(result.final_prompts.at("resolve").instruction,
                   "compromised breathing always means category 1"));
    // The fixed categorizer makes the second round a no-op.
    CHECK(result.reports[1].status == "no_op");
  }

  TEST_CASE("uniform and random allocation policies keep budgets feasible") {
    for (const char* allocation : {"uniform", "random"}) {
      TrainingFixture fx;
      TrainingConfig config = qa_training_config();
      config.allocation = allocation;
      Trainer trainer = fx.make_trainer(config);
      auto [next, report] =
          trainer.run_round(trainer.initial_state(fx.task.initial_prompts), fx.train, fx.dev);
      CHECK(report.status == "ok");
      int total = 0;
      for (int budget : next.budgets) {
        CHECK(budget >= 1);
        total += budget;
      }
      CHECK(total == 8);
      if (std::string(allocation) == "uniform") {
        CHECK(next.budgets == std::vector<int>{4, 4});
      }
    }
  }

  TEST_CASE("worker threads do not change the round report") {
    TrainingFixture fx_serial, fx_parallel;
    TrainingConfig parallel = qa_training_config();
    parallel.jobs = 4;
    Trainer trainer_serial = fx_serial.make_trainer();
    Trainer trainer_parallel = fx_parallel.make_trainer(parallel);
    auto [sa, ra] = trainer_serial.run_round(
        trainer_serial.initial_state(fx_serial.task.initial_prompts), fx_serial.train,
        fx_serial.dev);
    auto [sb, rb] = trainer_parallel.run_round(
        trainer_parallel.initial_state(fx_parallel.task.initial_prompts), fx_parallel.train,
        fx_parallel.dev);
    CHECK(ra.to_json(trainer_serial.step_order()).dump() ==
          rb.to_json(trainer_parallel.step_order()).dump());
  }

  TEST_CASE("round reports expose the coalition samples for export") {
    TrainingFixture fx;
    Trainer trainer = fx.make_trainer();
    auto [state, report] =
        trainer.run_round(trainer.initial_state(fx.task.initial_prompts), fx.train, fx.dev);
    REQUIRE(report.coalition_samples.size() >= 4);  // m + 2 needed for attribution
    bool has_empty = false, has_full = false;
    for (const auto& sample : report.coalition_samples) {
      if (sample.mask == 0) has_empty = true;
      if (sample.mask == 0b11) has_full = true;
      CHECK(sample.value >= 0.0);
      CHECK(sample.value <= 1.0);
    }
    CHECK(has_empty);
    CHECK(has_full);
  }

  TEST_CASE("minibatch sampling covers an epoch without replacement") {
    TrainingFixture fx;
    TrainingConfig config = qa_training_config();
    config.threshold = 0.0;  // keep rounds cheap (no-ops)
    config.minibatch_size = 2;
    config.rounds = 3;  // 3 rounds x 2 = one full epoch of 6
    Trainer trainer = fx.make_trainer(config);
    TrainingResult result = trainer.run_training(fx.task.initial_prompts, fx.train, fx.dev);
    std::set<std::string> seen;
    for (const auto& report : result.reports) {
      for (const auto& id : report.minibatch_ids) {
        CHECK(seen.insert(id).second);  // no repeats within the epoch
      }
    }
    CHECK(seen.size() == 6);
  }
}
