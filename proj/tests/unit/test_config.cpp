#include <doctest.h>

#include "adopt/config.hpp"

using namespace adopt;

namespace {

nlohmann::json minimal_config() {
  return {{"task",
           {{"pipeline", "scripted_qa"},
            {"metric", "exact_match"},
            {"train_data", "train.jsonl"},
            {"dev_data", "dev.jsonl"}}},
          {"backend", {{"kind", "scripted"}, {"script", "script.json"}}}};
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("the printed defaults parse back into a valid config") {
    nlohmann::json defaults = default_config_json();
    RunConfig config = RunConfig::from_json(defaults);
    CHECK(config.task.pipeline_id == "scripted_qa");
    CHECK(config.training.selector_budget == 12);
    CHECK(config.training.coalition_quota == 6);
    CHECK(config.backend.temperature == 0.0);
    CHECK(config.backend.top_p == 1.0);
  }

  TEST_CASE("the threshold default follows the metric") {
    nlohmann::json doc = minimal_config();
    CHECK(RunConfig::from_json(doc).task.threshold == 1.0);
    doc["task"]["metric"] = "token_f1";
    CHECK(RunConfig::from_json(doc).task.threshold == 0.5);
    doc["task"]["threshold"] = 0.9;
    CHECK(RunConfig::from_json(doc).task.threshold == 0.9);
  }

  TEST_CASE("validation failures name the offending field") {
    nlohmann::json doc = minimal_config();
    doc["budgets"] = {{"total", 1}, {"min", 1}};
    CHECK_THROWS_WITH_AS(RunConfig::from_json(doc), doctest::Contains("budgets.total"),
                         ConfigError);

    doc = minimal_config();
    doc["selector"] = {{"budget", 4}, {"coalition_quota", 9}};
    CHECK_THROWS_WITH_AS(RunConfig::from_json(doc), doctest::Contains("selector.budget"),
                         ConfigError);

    doc = minimal_config();
    doc["training"] = {{"rounds", "three"}};
    CHECK_THROWS_WITH_AS(RunConfig::from_json(doc), doctest::Contains("training.rounds"),
                         ConfigError);

    doc = minimal_config();
    doc["backend"]["kind"] = "telepathy";
    CHECK_THROWS_WITH_AS(RunConfig::from_json(doc), doctest::Contains("backend.kind"),
                         ConfigError);

    doc = minimal_config();
    doc["backend"] = {{"kind", "http"}};
    CHECK_THROWS_WITH_AS(RunConfig::from_json(doc), doctest::Contains("backend.base_url"),
                         ConfigError);

    doc = minimal_config();
    doc["backend"]["temperature"] = 0.7;
    CHECK_THROWS_WITH_AS(RunConfig::from_json(doc), doctest::Contains("backend.temperature"),
                         ConfigError);
  }

  TEST_CASE("unknown pipeline, metric, and strategy ids are rejected") {
    nlohmann::json doc = minimal_config();
    doc["task"]["pipeline"] = "nope";
    CHECK_THROWS_AS(RunConfig::from_json(doc), ConfigError);

    doc = minimal_config();
    doc["task"]["metric"] = "nope";
    CHECK_THROWS_AS(RunConfig::from_json(doc), ConfigError);

    doc = minimal_config();
    doc["selector"] = {{"strategy", "bayes"}};
    CHECK_THROWS_AS(RunConfig::from_json(doc), ConfigError);

    doc = minimal_config();
    doc["steps"] = {{"answer", {{"optimizer", "genetic"}}}};
    CHECK_THROWS_AS(RunConfig::from_json(doc), ConfigError);
  }

  TEST_CASE("per-role model overrides flow into the engine options") {
    nlohmann::json doc = minimal_config();
    doc["backend"]["role_models"] = {{"e3", "cheap-model"}, {"instruct", "writer"}};
    RunConfig config = RunConfig::from_json(doc);
    auto options = config.engine_options();
    CHECK(options.role_models.at("e3") == "cheap-model");
    CHECK(config.optimizer_model_ref() == "writer");

    // http backends default every role to the configured model.
    doc["backend"] = {{"kind", "http"}, {"base_url", "http://x"}, {"model", "big-model"}};
    config = RunConfig::from_json(doc);
    options = config.engine_options();
    CHECK(options.role_models.at("e1") == "big-model");
    CHECK(config.optimizer_model_ref() == "big-model");
  }
}
